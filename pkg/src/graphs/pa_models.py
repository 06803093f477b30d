"""
Sequential preferential attachment multigraphs, models (a), (b) and (d).

Vertex ``v`` (1-indexed, v >= 3) arrives with ``m`` edges; its ``j``-th edge
attaches to an older vertex ``u`` with weight ``d_u + delta`` and, for the
models that allow it, to itself with the model's self-loop weight. Arrays
are 0-indexed internally; only the edge-list file format is 1-indexed.
"""

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import networkx as nx
import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.shared.errors import ParameterError, StructuralError
from src.shared.logging_config import get_logger
from src.shared.rng import make_rng

logger = get_logger(__name__)

NORMALIZATION_TOL = 1e-12


class Variant(str, enum.Enum):
    A = "a"
    B = "b"
    D = "d"


class PAConfig(BaseModel):
    """Parameters of one preferential attachment graph."""

    variant: Variant = Variant.B
    m: int = Field(ge=1)
    delta: float
    n: int = Field(ge=2)
    a1: Optional[int] = Field(default=None, ge=0)
    a2: Optional[int] = Field(default=None, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    initial_edges: Optional[list[tuple[int, int]]] = None

    @field_validator("variant", mode="before")
    @classmethod
    def lower_variant(cls, v):
        if isinstance(v, str):
            return v.lower()
        return v

    @model_validator(mode="after")
    def check_parameters(self) -> "PAConfig":
        if not self.delta > -self.m:
            raise ParameterError(
                f"delta must exceed -m (got delta={self.delta}, m={self.m})"
            )

        if self.initial_edges is not None:
            for u, v in self.initial_edges:
                if u not in (1, 2) or v not in (1, 2):
                    raise ParameterError(
                        "initial edges must join vertices 1 and 2"
                    )
            degrees = _initial_degrees(self.initial_edges)
            if self.a1 is not None and self.a1 != degrees[0]:
                raise ParameterError("a1 does not match initial_edges")
            if self.a2 is not None and self.a2 != degrees[1]:
                raise ParameterError("a2 does not match initial_edges")
            self.a1, self.a2 = degrees
        else:
            if self.a1 is None:
                self.a1 = self.m
            if self.a2 is None:
                self.a2 = self.m
            if (self.a1 + self.a2) % 2:
                raise ParameterError(
                    "a1 + a2 must be even to be realized by an edge multiset"
                )

        if self.a2 > self.m:
            raise ParameterError(
                f"a2 must be at most m (got a2={self.a2}, m={self.m})"
            )
        if min(self.a1, self.a2) + self.delta <= 0:
            raise ParameterError(
                "initial degrees must satisfy a_i + delta > 0"
            )
        return self

    @property
    def a_sum(self) -> int:
        return self.a1 + self.a2

    def resolved_initial_edges(self) -> list[tuple[int, int]]:
        """
        The initial 2-vertex edge multiset, 1-indexed.

        Without an explicit multiset, ``min(a1, a2)`` parallel edges join
        vertices 1 and 2 and the surplus of the larger degree is realized
        with self-loops. The default a1 = a2 = m gives m parallel edges.
        """
        if self.initial_edges is not None:
            return [tuple(sorted(e)) for e in self.initial_edges]
        shared = min(self.a1, self.a2)
        edges = [(1, 2)] * shared
        edges += [(1, 1)] * ((self.a1 - shared) // 2)
        edges += [(2, 2)] * ((self.a2 - shared) // 2)
        return edges


def _initial_degrees(edges: Sequence[tuple[int, int]]) -> tuple[int, int]:
    degrees = [0, 0]
    for u, v in edges:
        degrees[u - 1] += 1
        degrees[v - 1] += 1
    return degrees[0], degrees[1]


@dataclass(frozen=True, eq=False)
class MultiGraph:
    """
    An undirected multigraph with self-loops.

    ``edges`` is an (E, 2) array of 0-indexed endpoints with ``u <= v`` in
    creation order; a row with ``u == v`` is a self-loop contributing 2 to
    the degree.
    """

    n_vertices: int
    edges: np.ndarray
    degrees: np.ndarray
    m: Optional[int] = None
    delta: Optional[float] = None
    variant: Optional[Variant] = None
    seed: Optional[int] = None
    # sum of per-step self-loop probabilities seen during generation
    self_loop_mass: float = 0.0

    @classmethod
    def from_edges(
        cls, n_vertices: int, edges: Sequence[tuple[int, int]], **meta
    ) -> "MultiGraph":
        """Build a graph from 0-indexed edge pairs."""
        arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= n_vertices):
            raise StructuralError("edge endpoint outside the vertex range")
        arr = np.sort(arr, axis=1)
        degrees = np.bincount(arr.ravel(), minlength=n_vertices).astype(
            np.int64
        )
        return cls(
            n_vertices=n_vertices, edges=arr, degrees=degrees, **meta
        )

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def self_loops(self) -> np.ndarray:
        return self.edges[:, 0] == self.edges[:, 1]

    @property
    def self_loop_count(self) -> int:
        return int(self.self_loops.sum())

    @property
    def total_degree(self) -> int:
        return int(self.degrees.sum())

    def to_networkx(self) -> nx.MultiGraph:
        g = nx.MultiGraph()
        g.add_nodes_from(range(self.n_vertices))
        g.add_edges_from(map(tuple, self.edges.tolist()))
        return g


class _Fenwick:
    """Prefix sums over float weights with O(log n) update and search."""

    def __init__(self, size: int):
        self.size = size
        self.tree = [0.0] * (size + 1)
        self.top = 1 << (size.bit_length() - 1) if size else 0

    def add(self, index: int, value: float) -> None:
        i = index + 1
        tree = self.tree
        while i <= self.size:
            tree[i] += value
            i += i & -i

    def search(self, target: float) -> int:
        """Smallest 0-based index whose inclusive prefix sum exceeds target."""
        pos = 0
        step = self.top
        tree = self.tree
        while step:
            nxt = pos + step
            if nxt <= self.size and tree[nxt] <= target:
                pos = nxt
                target -= tree[nxt]
            step >>= 1
        return pos


def normalizer(
    variant: Variant, v: int, j: int, m: int, delta: float, a_sum: int
) -> float:
    """The closed-form normalizing constant c_{v,j} of each model."""
    base = a_sum + 2 * delta + (2 * m + delta) * (v - 3)
    if variant == Variant.A:
        return base + 2 * (j - 1) + 1 + j * delta / m
    if variant == Variant.B:
        return base + 2 * (j - 1) + (j - 1) * delta / m
    return base + (j - 1)


def self_loop_weight(
    variant: Variant, own_degree: float, j: int, m: int, delta: float
) -> float:
    if variant == Variant.A:
        # the edge being placed contributes its own endpoint
        return own_degree + 1 + j * delta / m
    if variant == Variant.B:
        return own_degree + (j - 1) * delta / m
    return 0.0


def attachment_distribution(
    degrees: Sequence[float],
    j: int,
    variant: Variant,
    m: int,
    delta: float,
    a_sum: int,
) -> np.ndarray:
    """
    Exact attachment probabilities of the j-th edge of the newest vertex.

    Args:
        degrees: degrees ``d_1..d_v`` of the partial graph, the last entry
            being the arriving vertex with ``j - 1`` edges already placed.
        j: index of the edge being placed, 1..m.
        variant: model (a), (b) or (d).
        m, delta: model parameters.
        a_sum: a1 + a2 of the initial graph.

    Returns:
        Probability vector of length v; the last entry is the self-loop
        probability (always 0 for model (d)).
    """
    variant = Variant(variant)
    if not delta > -m:
        raise ParameterError(f"delta must exceed -m (got {delta})")
    if not 1 <= j <= m:
        raise ParameterError(f"edge index j must lie in 1..{m}")
    d = np.asarray(degrees, dtype=np.float64)
    v = d.shape[0]
    if v < 3:
        raise StructuralError("attachment is defined for vertices v >= 3")

    weights = np.empty(v, dtype=np.float64)
    weights[:-1] = d[:-1] + delta
    weights[-1] = self_loop_weight(variant, d[-1], j, m, delta)
    if (weights < 0).any():
        raise StructuralError("negative attachment weight in degree state")

    c = normalizer(variant, v, j, m, delta, a_sum)
    total = weights.sum()
    if abs(total - c) > 1e-9 * max(1.0, abs(c)):
        raise StructuralError(
            f"degree state inconsistent with c_{{v,j}}: weights sum to "
            f"{total}, expected {c}"
        )
    return weights / c


def generate(config: PAConfig) -> MultiGraph:
    """
    Grow a graph on ``config.n`` vertices from its initial 2-vertex graph.

    One uniform per placed edge is drawn from the Philox stream keyed by
    ``config.seed``, so the edge list is a pure function of the config.
    """
    variant = Variant(config.variant)
    m, delta, n = config.m, float(config.delta), config.n

    initial = [(u - 1, v - 1) for u, v in config.resolved_initial_edges()]
    n_edges = len(initial) + m * (n - 2)
    edges = np.empty((n_edges, 2), dtype=np.int64)
    edges[: len(initial)] = np.asarray(initial, dtype=np.int64).reshape(-1, 2)

    degrees = [0] * n
    for u, v in initial:
        degrees[u] += 1
        degrees[v] += 1

    fenwick = _Fenwick(n)
    weight_total = 0.0
    for u in (0, 1):
        fenwick.add(u, degrees[u] + delta)
        weight_total += degrees[u] + delta

    uniforms = make_rng(config.seed).random(m * max(n - 2, 0))
    loop_mass = 0.0
    e = len(initial)
    k = 0
    for v in range(2, n):
        own = 0
        for j in range(1, m + 1):
            loop_w = self_loop_weight(variant, own, j, m, delta)
            c = weight_total + loop_w
            loop_mass += loop_w / c
            x = uniforms[k] * c
            k += 1
            if x < weight_total:
                target = min(fenwick.search(x), v - 1)
                degrees[target] += 1
                fenwick.add(target, 1.0)
                weight_total += 1.0
                own += 1
                edges[e, 0] = target
                edges[e, 1] = v
            else:
                own += 2
                edges[e, 0] = v
                edges[e, 1] = v
            e += 1
        degrees[v] = own
        fenwick.add(v, own + delta)
        weight_total += own + delta

    graph = MultiGraph(
        n_vertices=n,
        edges=edges,
        degrees=np.asarray(degrees, dtype=np.int64),
        m=m,
        delta=delta,
        variant=variant,
        seed=config.seed,
        self_loop_mass=loop_mass,
    )
    logger.debug(
        "pa_graph_generated",
        variant=variant.value,
        n=n,
        m=m,
        delta=delta,
        seed=config.seed,
        self_loops=graph.self_loop_count,
    )
    return graph


def degree_histogram(graph: MultiGraph) -> dict[int, int]:
    values, counts = np.unique(graph.degrees, return_counts=True)
    return {int(d): int(c) for d, c in zip(values, counts)}


def write_edge_list(graph: MultiGraph, path: str | Path) -> None:
    """Write ``n m delta variant seed`` then one 1-indexed ``u v`` per line."""

    def _field(value) -> str:
        if value is None:
            return "-"
        if isinstance(value, Variant):
            return value.value
        if isinstance(value, float):
            return repr(value)
        return str(value)

    header = " ".join(
        _field(x)
        for x in (
            graph.n_vertices,
            graph.m,
            graph.delta,
            graph.variant,
            graph.seed,
        )
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for u, v in (graph.edges + 1).tolist():
            f.write(f"{u} {v}\n")


def read_edge_list(path: str | Path) -> MultiGraph:
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 5:
            raise StructuralError(
                "edge list header must read 'n m delta variant seed'"
            )
        pairs = [tuple(int(x) - 1 for x in line.split()) for line in f]

    def _parse(value: str, kind):
        return None if value == "-" else kind(value)

    n, m, delta, variant, seed = header
    return MultiGraph.from_edges(
        int(n),
        pairs,
        m=_parse(m, int),
        delta=_parse(delta, float),
        variant=_parse(variant, Variant),
        seed=_parse(seed, int),
    )
