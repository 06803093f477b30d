"""
Edge expansion of multigraphs.

``alpha(G, eps)`` is the smallest ratio ``|C(S, S^c)| / |S|`` over vertex
sets with ``eps * n <= |S| <= n / 2``. Small graphs are solved exactly by
enumerating every subset; larger ones get the Cheeger lower bound
``(lambda_2 / 2) * d_min`` from the normalized Laplacian.
"""

import enum
import math
from fractions import Fraction
from functools import partial
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel
from scipy import sparse
from scipy.sparse import csgraph

from src.graphs.pa_models import MultiGraph, PAConfig, generate
from src.shared.config import Settings
from src.shared.errors import DomainError
from src.shared.logging_config import get_logger
from src.shared.parallel import map_ordered
from src.shared.rng import SPECTRAL_STREAM, make_rng, seed_stream
from src.spectral.power_iteration import power_iteration

logger = get_logger(__name__)

EXPANSION_COLUMNS = [
    "n",
    "replicas",
    "method",
    "epsilon",
    "alpha_probe",
    "fail_frac",
    "min_observed",
]

# graphs up to this size use a dense eigensolver for lambda_2
DENSE_EIGEN_N = 2000


class ExpansionMethod(str, enum.Enum):
    EXACT = "exact"
    SPECTRAL_BOUND = "spectral_bound"


class CutReport(BaseModel):
    epsilon: float
    alpha: float
    method: ExpansionMethod
    witness: Optional[list[int]] = None
    n_vertices: int
    n_edges: int
    lambda_2: Optional[float] = None
    d_min: Optional[int] = None


def _membership(graph: MultiGraph, subset: Iterable[int]) -> np.ndarray:
    if isinstance(subset, np.ndarray) and subset.dtype == bool:
        if subset.shape[0] != graph.n_vertices:
            raise ValueError("membership mask length must equal n")
        return subset
    mask = np.zeros(graph.n_vertices, dtype=bool)
    idx = np.asarray(list(subset), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= graph.n_vertices):
        raise ValueError("subset contains a vertex outside the graph")
    mask[idx] = True
    return mask


def cutset_size(graph: MultiGraph, subset: Iterable[int]) -> int:
    """Edges with exactly one end in ``subset``, counted with multiplicity."""
    inside = _membership(graph, subset)
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    return int((inside[u] != inside[v]).sum())


def internal_edges(graph: MultiGraph, subset: Iterable[int]) -> int:
    """Edges (self-loops included) with both ends in ``subset``."""
    inside = _membership(graph, subset)
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    return int((inside[u] & inside[v]).sum())


def volume(graph: MultiGraph, subset: Iterable[int]) -> int:
    """Sum of degrees over ``subset``; a self-loop counts twice."""
    return int(graph.degrees[_membership(graph, subset)].sum())


def _size_window(n: int, epsilon: float) -> tuple[int, int]:
    if not 0 <= epsilon <= 0.5:
        raise ValueError(f"epsilon must lie in [0, 1/2] (got {epsilon})")
    lo = max(1, math.ceil(epsilon * n - 1e-9))
    hi = n // 2
    if lo > hi:
        raise DomainError(
            f"no subset size lies in [{epsilon} * {n}, {n} / 2]"
        )
    return lo, hi


def _loopless_adjacency(graph: MultiGraph) -> np.ndarray:
    n = graph.n_vertices
    adj = np.zeros((n, n), dtype=np.int64)
    proper = graph.edges[~graph.self_loops]
    np.add.at(adj, (proper[:, 0], proper[:, 1]), 1)
    np.add.at(adj, (proper[:, 1], proper[:, 0]), 1)
    return adj


def _all_cuts(adj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Cut size and cardinality of every subset, indexed by bitmask.

    Subsets containing vertex k as their highest member are the subsets of
    {0..k-1} with k added, whose cut changes by ``d_k - 2 e(k, S)``. Each
    doubling step is one vectorized update, so the total work is O(2**n).
    """
    n = adj.shape[0]
    degree = adj.sum(axis=1)
    cuts = np.zeros(1 << n, dtype=np.int32)
    sizes = np.zeros(1 << n, dtype=np.int8)
    for k in range(n):
        block = 1 << k
        # e(k, S) for every S within {0..k-1}, by the same doubling
        links = np.zeros(1, dtype=np.int32)
        for j in range(k):
            links = np.concatenate([links, links + adj[k, j]])
        cuts[block : 2 * block] = cuts[:block] + degree[k] - 2 * links
        sizes[block : 2 * block] = sizes[:block] + 1
    return cuts, sizes


def exact_alpha(graph: MultiGraph, epsilon: float) -> CutReport:
    """
    The edge-expander constant by full enumeration.

    Ties are broken towards the numerically smallest bitmask.
    """
    n = graph.n_vertices
    limit = Settings.expander_max_exact_n
    if n > limit:
        raise DomainError(
            f"exact enumeration is limited to n <= {limit} (got n={n}); "
            "use spectral_alpha_bound for larger graphs"
        )
    lo, hi = _size_window(n, epsilon)
    cuts, sizes = _all_cuts(_loopless_adjacency(graph))

    best: Optional[tuple[Fraction, int]] = None
    for size in range(lo, hi + 1):
        masks = np.flatnonzero(sizes == size)
        pick = masks[np.argmin(cuts[masks])]
        candidate = (Fraction(int(cuts[pick]), size), int(pick))
        if best is None or candidate < best:
            best = candidate

    ratio, mask = best
    witness = [v for v in range(n) if mask >> v & 1]
    return CutReport(
        epsilon=epsilon,
        alpha=float(ratio),
        method=ExpansionMethod.EXACT,
        witness=witness,
        n_vertices=n,
        n_edges=graph.n_edges,
    )


def normalized_adjacency(graph: MultiGraph) -> sparse.csr_matrix:
    """
    ``D^-1/2 A D^-1/2`` with ``A_uv`` the edge multiplicity and ``A_vv``
    twice the number of loops, so that rows of A sum to the degrees.
    """
    n = graph.n_vertices
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    adj = sparse.coo_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(n, n)
    ).tocsr()
    inv_sqrt = 1.0 / np.sqrt(graph.degrees.astype(np.float64))
    scale = sparse.diags(inv_sqrt)
    return (scale @ adj @ scale).tocsr()


def spectral_gap(
    graph: MultiGraph, method: str = "auto", seed: int = 0
) -> float:
    """
    Second-smallest eigenvalue of the normalized Laplacian.

    ``method="power"`` runs power iteration on ``(N + I) / 2`` after
    deflating the top eigenvector ``sqrt(d)``; ``"dense"`` diagonalizes;
    ``"auto"`` picks dense for small graphs.

    The Rayleigh quotient of power iteration approaches ``mu_2`` from
    below, so the power value adds the residual norm before converting.
    The result is a lower bound on ``lambda_2`` provided the iterate
    converged to the top eigenvector of the deflated map and not to a
    lower one it happened to start orthogonal to.
    """
    if (graph.degrees == 0).any():
        return 0.0
    norm_adj = normalized_adjacency(graph)
    n_components, _ = csgraph.connected_components(norm_adj, directed=False)
    if n_components > 1:
        logger.warning("graph_disconnected", components=int(n_components))
        return 0.0
    if method == "auto":
        method = "dense" if graph.n_vertices <= DENSE_EIGEN_N else "power"

    if method == "dense":
        eigenvalues = np.linalg.eigvalsh(norm_adj.toarray())
        return float(max(0.0, 1.0 - eigenvalues[-2]))
    if method != "power":
        raise ValueError(f"unknown eigen method '{method}'")

    top = np.sqrt(graph.degrees.astype(np.float64))
    top /= np.linalg.norm(top)

    def apply(x: np.ndarray) -> np.ndarray:
        y = 0.5 * (norm_adj @ x + x)
        return y - top * (top @ y)

    start = make_rng(seed, SPECTRAL_STREAM).random(graph.n_vertices) - 0.5
    start -= top * (top @ start)
    _, vec, iterations = power_iteration(apply, start)
    image = apply(vec)
    mu_2 = float(vec @ image)
    residual = float(np.linalg.norm(image - mu_2 * vec))
    logger.debug(
        "spectral_gap_converged", iterations=iterations, residual=residual
    )
    # some eigenvalue lies within the residual of the Rayleigh quotient
    return float(max(0.0, 2.0 * (1.0 - mu_2 - residual)))


def spectral_alpha_bound(
    graph: MultiGraph, epsilon: float, method: str = "auto"
) -> CutReport:
    """
    Certified lower bound ``(lambda_2 / 2) * d_min`` on ``alpha(G, eps)``.

    For ``|S| <= n / 2`` the cut is at least ``(lambda_2 / 2)`` times the
    smaller of the two volumes, and each volume is at least ``d_min``
    times its vertex count. A disconnected graph gets the bound 0.
    """
    _size_window(graph.n_vertices, epsilon)
    lam_2 = spectral_gap(graph, method=method)
    d_min = int(graph.degrees.min())
    return CutReport(
        epsilon=epsilon,
        alpha=0.5 * lam_2 * d_min,
        method=ExpansionMethod.SPECTRAL_BOUND,
        n_vertices=graph.n_vertices,
        n_edges=graph.n_edges,
        lambda_2=lam_2,
        d_min=d_min,
    )


def measure_alpha(graph: MultiGraph, epsilon: float) -> CutReport:
    """Exact value when enumeration is allowed, the spectral bound beyond."""
    if graph.n_vertices <= Settings.expander_max_exact_n:
        return exact_alpha(graph, epsilon)
    return spectral_alpha_bound(graph, epsilon)


def _expansion_replica(
    index: int, config: PAConfig, epsilon: float, seed: int
) -> tuple[str, float]:
    graph = generate(config.model_copy(update={"seed": seed_stream(seed, index)}))
    report = measure_alpha(graph, epsilon)
    return report.method.value, report.alpha


def expansion_experiment(
    config: PAConfig,
    epsilon: float,
    alpha_probe: float,
    n_grid: Sequence[int],
    replicas: int,
    seed: int,
    workers: Optional[int] = None,
) -> list[dict[str, Any]]:
    """
    Fraction of PA graphs whose measured expansion falls below
    ``alpha_probe``, for each size in ``n_grid``.
    """
    if config.m < 2:
        raise DomainError("m = 1 graphs are trees, which are not expanders")
    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    rows = []
    for n in n_grid:
        results = map_ordered(
            partial(
                _expansion_replica,
                config=config.model_copy(update={"n": int(n)}),
                epsilon=epsilon,
                seed=seed_stream(seed, int(n)),
            ),
            range(replicas),
            workers,
        )
        values = np.array([alpha for _, alpha in results])
        methods = sorted({method for method, _ in results})
        rows.append(
            {
                "n": int(n),
                "replicas": replicas,
                "method": "+".join(methods),
                "epsilon": epsilon,
                "alpha_probe": alpha_probe,
                "fail_frac": float((values < alpha_probe).mean()),
                "min_observed": float(values.min()),
            }
        )
        logger.info("expansion_size_done", **rows[-1])
    return rows
