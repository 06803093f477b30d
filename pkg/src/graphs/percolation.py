"""
Bond percolation on multigraphs.

Every edge carries one uniform ``U_e``; the graph percolated at ``pi``
keeps exactly the edges with ``U_e < pi``. Reusing the same uniforms for
every ``pi`` couples the percolated graphs monotonically, so component
sizes are non-decreasing along a sweep for every replica.
"""

from dataclasses import dataclass
from functools import partial
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

from src.graphs.pa_models import MultiGraph, PAConfig, generate
from src.shared.config import Settings
from src.shared.logging_config import get_logger
from src.shared.parallel import map_ordered
from src.shared.rng import PERCOLATION_STREAM, make_rng, seed_stream

logger = get_logger(__name__)

SWEEP_COLUMNS = [
    "pi",
    "replicas",
    "c1_mean",
    "c1_sd",
    "c2_mean",
    "c2_sd",
    "n",
    "m",
    "delta",
    "variant",
    "seed",
]


class UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self, size: int):
        self.parent = list(range(size))
        self.size = [1] * size

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> Optional[tuple[int, int, int]]:
        """
        Merge the sets of ``a`` and ``b``.

        Returns the sizes ``(s_a, s_b, merged)`` when two sets were joined,
        None when they were already one set.
        """
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return None
        sa, sb = self.size[ra], self.size[rb]
        if sa < sb:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] = sa + sb
        return sa, sb, sa + sb

    def component_sizes(self) -> np.ndarray:
        roots = [self.find(x) for x in range(len(self.parent))]
        sizes = np.bincount(np.asarray(roots, dtype=np.int64))
        return np.sort(sizes[sizes > 0])[::-1]


@dataclass(frozen=True, eq=False)
class PercolationOutcome:
    pi: float
    retained_edges: int
    component_sizes: np.ndarray
    c1_frac: float
    c2_frac: float


def edge_uniforms(graph: MultiGraph, seed: int) -> np.ndarray:
    return make_rng(seed, PERCOLATION_STREAM).random(graph.n_edges)


def percolate_mask(
    graph: MultiGraph, pi: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge uniforms and the retained mask ``U_e < pi``."""
    if not 0.0 <= pi <= 1.0:
        raise ValueError(f"pi must lie in [0, 1], got {pi}")
    uniforms = edge_uniforms(graph, seed)
    return uniforms, uniforms < pi


def components(graph: MultiGraph, mask: np.ndarray) -> np.ndarray:
    """Component sizes (descending) of the graph restricted to ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] != graph.n_edges:
        raise ValueError("mask length must equal the edge count")
    uf = UnionFind(graph.n_vertices)
    kept = graph.edges[mask & ~graph.self_loops]
    for u, v in kept.tolist():
        uf.union(u, v)
    return uf.component_sizes()


def percolate(graph: MultiGraph, pi: float, seed: int) -> PercolationOutcome:
    _, mask = percolate_mask(graph, pi, seed)
    sizes = components(graph, mask)
    n = graph.n_vertices
    return PercolationOutcome(
        pi=pi,
        retained_edges=int(mask.sum()),
        component_sizes=sizes,
        c1_frac=sizes[0] / n,
        c2_frac=(sizes[1] / n) if len(sizes) > 1 else 0.0,
    )


def coupled_sweep(
    graph: MultiGraph, uniforms: np.ndarray, pi_grid: Sequence[float]
) -> dict[str, np.ndarray]:
    """
    Largest and second-largest component sizes at every grid point.

    Edges are added in increasing order of their uniforms, so one
    union-find pass serves the whole (ascending) grid. The result equals
    thresholding the uniforms at each ``pi`` separately.
    """
    grid = np.asarray(pi_grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0):
        raise ValueError("pi grid must be sorted ascending")

    n = graph.n_vertices
    order = np.argsort(uniforms, kind="stable")
    sorted_u = uniforms[order]
    # number of edges with U < pi for each grid point
    cutoffs = np.searchsorted(sorted_u, grid, side="left")
    edges = graph.edges[order].tolist()

    uf = UnionFind(n)
    size_counts: dict[int, int] = {1: n}
    largest = 1
    c1 = np.empty(len(grid), dtype=np.int64)
    c2 = np.empty(len(grid), dtype=np.int64)

    k = 0
    for g, cutoff in enumerate(cutoffs.tolist()):
        while k < cutoff:
            u, v = edges[k]
            k += 1
            if u == v:
                continue
            merged = uf.union(u, v)
            if merged is None:
                continue
            sa, sb, s = merged
            for old in (sa, sb):
                size_counts[old] -= 1
                if not size_counts[old]:
                    del size_counts[old]
            size_counts[s] = size_counts.get(s, 0) + 1
            largest = max(largest, s)
        c1[g] = largest
        if size_counts[largest] >= 2:
            c2[g] = largest
        else:
            smaller = [s for s in size_counts if s < largest]
            c2[g] = max(smaller) if smaller else 0

    return {"c1": c1, "c2": c2, "retained": cutoffs.astype(np.int64)}


@dataclass(frozen=True, eq=False)
class SweepTable:
    """Per-replica coupled sweep results plus their per-pi summary."""

    config: PAConfig
    pi_grid: np.ndarray
    replicas: int
    seed: int
    # (replicas, len(pi_grid)) arrays of fractions
    c1_frac: np.ndarray
    c2_frac: np.ndarray
    retained_edges: np.ndarray

    def monotonicity_violations(self) -> int:
        return int((np.diff(self.c1_frac, axis=1) < 0).sum())

    def summary(self) -> pd.DataFrame:
        rows = []
        for j, pi in enumerate(self.pi_grid.tolist()):
            c1 = self.c1_frac[:, j]
            c2 = self.c2_frac[:, j]
            rows.append(
                {
                    "pi": pi,
                    "replicas": self.replicas,
                    "c1_mean": c1.mean(),
                    "c1_sd": _sd(c1),
                    "c1_min": c1.min(),
                    "c1_max": c1.max(),
                    "c2_mean": c2.mean(),
                    "c2_sd": _sd(c2),
                    "c2_min": c2.min(),
                    "c2_max": c2.max(),
                }
            )
        return pd.DataFrame(rows)

    def records(self) -> list[dict[str, Any]]:
        """Rows of the sweep CSV, ordered by pi."""
        frame = self.summary()
        out = []
        for row in frame.to_dict(orient="records"):
            row.update(
                n=self.config.n,
                m=self.config.m,
                delta=float(self.config.delta),
                variant=self.config.variant.value,
                seed=self.seed,
            )
            out.append({c: row[c] for c in SWEEP_COLUMNS})
        return out


def _sd(values: np.ndarray) -> float:
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


def sweep_replica(
    index: int, config: PAConfig, pi_grid: Sequence[float], seed: int
) -> dict[str, np.ndarray]:
    """One replica: a fresh graph and one set of edge uniforms."""
    replica_seed = seed_stream(seed, index)
    graph = generate(config.model_copy(update={"seed": replica_seed}))
    uniforms = edge_uniforms(graph, replica_seed)
    result = coupled_sweep(graph, uniforms, pi_grid)
    logger.debug(
        "sweep_replica_done",
        replica=index,
        c1_max=int(result["c1"][-1]) if len(result["c1"]) else 0,
    )
    return result


def sweep(
    config: PAConfig,
    pi_grid: Sequence[float],
    replicas: int,
    seed: int,
    workers: Optional[int] = None,
) -> SweepTable:
    grid = np.asarray(pi_grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("pi grid must not be empty")
    if np.any(np.diff(grid) < 0):
        raise ValueError("pi grid must be sorted ascending")
    if replicas < 1:
        raise ValueError("replicas must be at least 1")

    logger.info(
        "sweep_started",
        n=config.n,
        m=config.m,
        delta=config.delta,
        variant=config.variant.value,
        grid_points=int(grid.size),
        replicas=replicas,
    )
    results = map_ordered(
        partial(sweep_replica, config=config, pi_grid=grid, seed=seed),
        range(replicas),
        workers,
    )
    n = config.n
    table = SweepTable(
        config=config,
        pi_grid=grid,
        replicas=replicas,
        seed=seed,
        c1_frac=np.vstack([r["c1"] for r in results]) / n,
        c2_frac=np.vstack([r["c2"] for r in results]) / n,
        retained_edges=np.vstack([r["retained"] for r in results]),
    )
    violations = table.monotonicity_violations()
    if violations:
        logger.error("sweep_monotonicity_violated", violations=violations)
    return table


def check_c2_ceiling(
    table: SweepTable, ceiling: Optional[float] = None
) -> list[float]:
    """Grid points whose mean C2/n exceeds ``ceiling``."""
    if ceiling is None:
        ceiling = Settings.c2_ceiling
    means = table.c2_frac.mean(axis=0)
    return [
        float(pi) for pi, c2 in zip(table.pi_grid, means) if c2 > ceiling
    ]


def scaling_study(
    config: PAConfig,
    pi: float,
    n_grid: Sequence[int],
    replicas: int,
    seed: int,
    workers: Optional[int] = None,
) -> list[dict[str, Any]]:
    """Mean C1/n at a fixed pi for each graph size in ``n_grid``."""
    rows = []
    for n in n_grid:
        table = sweep(
            config.model_copy(update={"n": int(n)}),
            [pi],
            replicas,
            seed,
            workers,
        )
        c1 = table.c1_frac[:, 0]
        sd = _sd(c1)
        rows.append(
            {
                "n": int(n),
                "pi": float(pi),
                "replicas": replicas,
                "c1_mean": float(c1.mean()),
                "c1_sd": sd,
                "c1_se": sd / np.sqrt(replicas),
            }
        )
    return rows
