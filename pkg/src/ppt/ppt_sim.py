"""
Simulation of the Polya point tree and its percolated versions.

Every node has an age, a label (O: older than its parent, Y: younger) and
a Gamma strength. A node with age ``A`` has ``m_-`` O-children with ages
``U**(1/chi) * A`` and Y-children at the points of a Poisson process with
intensity ``(1 - chi) * Gamma * x**(-chi) / A**(1 - chi)`` on ``[A, 1]``
(restricted space) or on ``[A, b * A]`` (b-truncated tree). Percolation
keeps every edge independently with probability ``pi``.

Two engines share these rules: ``sample_children`` grows a single node
explicitly, and the batch engine below grows ``ppt_batch_size`` replicas
at once as flat numpy arrays. In the batch engine each edge carries a
uniform mark and a node is alive at ``pi`` iff the largest mark on its
ancestral path is below ``pi``, which couples all retention levels.
"""

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from scipy import integrate, optimize, stats

from src.shared.config import Settings
from src.shared.errors import (
    DomainError,
    ParameterError,
    SimulationBudgetError,
    StructuralError,
)
from src.shared.logging_config import get_logger
from src.shared.parallel import map_ordered
from src.shared.rng import TREE_STREAM, make_rng, seed_stream
from src.spectral.constants import (
    Label,
    constants,
    spectral_norm,
    truncated_spectral,
)

logger = get_logger(__name__)

LABEL_O = 0
LABEL_Y = 1
LABEL_ROOT = 2
_LABEL_CODES = {Label.O: LABEL_O, Label.Y: LABEL_Y, Label.ROOT: LABEL_ROOT}

# Poisson means are capped here; any count that large is far beyond both
# the population cap and the particle budget.
_MAX_POISSON_MEAN = 1e12
_TINY_AGE = np.finfo(np.float64).tiny

TRAJECTORY_COLUMNS = [
    "generation",
    "particles_mean",
    "score_mean",
    "score_se",
    "score_step_mean",
    "score_step_se",
    "martingale_mean",
    "martingale_se",
    "martingale_step_mean",
    "martingale_step_se",
    "score_non_increasing",
    "martingale_step_max_dev_se",
]


class PptParams(BaseModel):
    m: int = Field(ge=1)
    delta: float
    pi: float = Field(default=1.0, ge=0.0, le=1.0)
    b: Optional[float] = None
    root_label: Label = Label.ROOT
    root_age: Optional[float] = None

    @model_validator(mode="after")
    def check_parameters(self) -> "PptParams":
        if not self.delta > -self.m:
            raise ParameterError(
                f"delta must exceed -m (got delta={self.delta}, m={self.m})"
            )
        if self.b is not None and not self.b > 1:
            raise ParameterError(f"b must exceed 1 (got {self.b})")
        if self.root_age is not None:
            if not self.root_age > 0:
                raise ParameterError("root_age must be positive")
            if self.b is None and self.root_age > 1:
                raise ParameterError(
                    "root_age must lie in (0, 1] in the restricted space"
                )
        return self

    @property
    def chi(self) -> float:
        return (self.m + self.delta) / (2 * self.m + self.delta)


@dataclass
class PptNode:
    age: float
    label: Label
    strength: float
    parent: Optional[int] = None
    generation: int = 0


def m_minus(label: Label, m: int) -> int:
    """Number of O-children: m for the root and O nodes, m - 1 for Y."""
    return m - 1 if Label(label) == Label.Y else m


def strength_shape(label: Label, m: int, delta: float) -> float:
    """O strengths are size-biased, Gamma(m + delta + 1)."""
    return m + delta + 1 if Label(label) == Label.O else m + delta


def sample_strength(
    label: Label, params: PptParams, rng: np.random.Generator
) -> float:
    return float(rng.gamma(strength_shape(label, params.m, params.delta)))


def new_root(params: PptParams, rng: np.random.Generator) -> PptNode:
    age = params.root_age
    if age is None:
        age = 1.0 - rng.random()
    return PptNode(
        age=age,
        label=params.root_label,
        strength=sample_strength(params.root_label, params, rng),
    )


def young_upper(age: float, params: PptParams) -> float:
    return age * params.b if params.b is not None else 1.0


def sample_children(
    node: PptNode,
    params: PptParams,
    rng: np.random.Generator,
    index: Optional[int] = None,
) -> list[PptNode]:
    """
    Percolated children of one node.

    Y-children are drawn by inverting the cumulative intensity
    ``Lambda(x) = pi * Gamma * ((x / A)**(1 - chi) - 1)`` at the partial
    sums of standard exponentials.
    """
    if not node.age > 0:
        raise StructuralError(f"node age must be positive (got {node.age})")
    chi = params.chi
    children = []

    for _ in range(m_minus(node.label, params.m)):
        u = 1.0 - rng.random()
        kept = rng.random() < params.pi
        if kept:
            children.append(
                PptNode(
                    age=max(u ** (1.0 / chi) * node.age, _TINY_AGE),
                    label=Label.O,
                    strength=sample_strength(Label.O, params, rng),
                    parent=index,
                    generation=node.generation + 1,
                )
            )

    rate = params.pi * node.strength
    if rate > 0:
        upper = young_upper(node.age, params)
        total = 0.0
        while True:
            total += rng.exponential()
            x = node.age * (1.0 + total / rate) ** (1.0 / (1.0 - chi))
            if x > upper:
                break
            children.append(
                PptNode(
                    age=x,
                    label=Label.Y,
                    strength=sample_strength(Label.Y, params, rng),
                    parent=index,
                    generation=node.generation + 1,
                )
            )
    return children


def simulate_tree(
    params: PptParams, generations: int, seed: int
) -> list[list[PptNode]]:
    """
    Grow one tree breadth-first for ``generations`` generations.

    ``parent`` of a node is its index within the previous generation.
    """
    rng = make_rng(seed, TREE_STREAM)
    levels = [[new_root(params, rng)]]
    for _ in range(generations):
        nxt: list[PptNode] = []
        for i, node in enumerate(levels[-1]):
            nxt.extend(sample_children(node, params, rng, index=i))
        levels.append(nxt)
        if not nxt:
            break
    return levels


# ---------------------------------------------------------------------------
# Batch engine
# ---------------------------------------------------------------------------


@dataclass
class _Population:
    age: np.ndarray
    label: np.ndarray
    strength: np.ndarray
    owner: np.ndarray
    pathmax: np.ndarray

    def __len__(self) -> int:
        return int(self.age.shape[0])

    def take(self, index: np.ndarray) -> "_Population":
        return _Population(
            self.age[index],
            self.label[index],
            self.strength[index],
            self.owner[index],
            self.pathmax[index],
        )


@dataclass
class _Candidates:
    o_parent: np.ndarray
    o_mark: np.ndarray
    y_count: np.ndarray
    span: np.ndarray

    def per_owner(self, pop: _Population, size: int) -> np.ndarray:
        counts = np.bincount(pop.owner[self.o_parent], minlength=size)
        counts += np.bincount(
            pop.owner, weights=self.y_count, minlength=size
        ).astype(np.int64)
        return counts

    @property
    def total(self) -> int:
        return int(self.o_parent.size + self.y_count.sum())


def _root_population(
    params: PptParams, size: int, rng: np.random.Generator
) -> _Population:
    if params.root_age is None:
        ages = 1.0 - rng.random(size)
    else:
        ages = np.full(size, float(params.root_age))
    shape = strength_shape(params.root_label, params.m, params.delta)
    return _Population(
        age=ages,
        label=np.full(size, _LABEL_CODES[params.root_label], dtype=np.int8),
        strength=rng.gamma(shape, size=size),
        owner=np.arange(size, dtype=np.int64),
        # below every retention level, so the root is alive even at pi = 0
        pathmax=np.full(size, -1.0),
    )


def _young_span(age: np.ndarray, params: PptParams) -> np.ndarray:
    """(upper / A)**(1 - chi) - 1 for each parent."""
    one_minus_chi = 1.0 - params.chi
    if params.b is None:
        return np.maximum(np.power(1.0 / age, one_minus_chi) - 1.0, 0.0)
    return np.full(age.shape, params.b**one_minus_chi - 1.0)


def _candidates(
    pop: _Population,
    params: PptParams,
    pi_owner: np.ndarray,
    rng: np.random.Generator,
) -> _Candidates:
    n_o = np.where(pop.label == LABEL_Y, params.m - 1, params.m)
    o_parent = np.repeat(np.arange(len(pop), dtype=np.int64), n_o)
    o_mark = rng.random(o_parent.size)
    keep = o_mark < pi_owner[pop.owner[o_parent]]
    span = _young_span(pop.age, params)
    mean = np.minimum(
        pi_owner[pop.owner] * pop.strength * span, _MAX_POISSON_MEAN
    )
    return _Candidates(
        o_parent=o_parent[keep],
        o_mark=o_mark[keep],
        y_count=rng.poisson(mean).astype(np.int64),
        span=span,
    )


def _materialize(
    pop: _Population,
    cand: _Candidates,
    params: PptParams,
    pi_owner: np.ndarray,
    rng: np.random.Generator,
) -> _Population:
    chi = params.chi
    o_parent = cand.o_parent
    o_age = np.maximum(
        rng.random(o_parent.size) ** (1.0 / chi) * pop.age[o_parent],
        _TINY_AGE,
    )

    y_parent = np.repeat(np.arange(len(pop), dtype=np.int64), cand.y_count)
    v = 1.0 - rng.random(y_parent.size)
    y_age = pop.age[y_parent] * (1.0 + v * cand.span[y_parent]) ** (
        1.0 / (1.0 - chi)
    )
    y_mark = rng.random(y_parent.size) * pi_owner[pop.owner[y_parent]]

    m, delta = params.m, params.delta
    parents = np.concatenate([o_parent, y_parent])
    return _Population(
        age=np.concatenate([o_age, y_age]),
        label=np.concatenate(
            [
                np.full(o_parent.size, LABEL_O, dtype=np.int8),
                np.full(y_parent.size, LABEL_Y, dtype=np.int8),
            ]
        ),
        strength=np.concatenate(
            [
                rng.gamma(m + delta + 1, size=o_parent.size),
                rng.gamma(m + delta, size=y_parent.size),
            ]
        ),
        owner=pop.owner[parents],
        pathmax=np.maximum(
            pop.pathmax[parents], np.concatenate([cand.o_mark, y_mark])
        ),
    )


def _or_default(value: Optional[int], default: int) -> int:
    return default if value is None else value


def _check_budget(requested: int) -> None:
    budget = Settings.ppt_max_particles
    if requested > budget:
        raise SimulationBudgetError(
            f"generation needs {requested} particles, budget is {budget}",
            particles=requested,
            budget=budget,
        )


def _cut_index(status: np.ndarray) -> np.ndarray:
    """Index of the largest unresolved grid point per owner, -1 if none."""
    unresolved = status == 0
    idx = status.shape[1] - 1 - np.argmax(unresolved[:, ::-1], axis=1)
    return np.where(unresolved.any(axis=1), idx, -1)


def _batch_bounds(replicas: int, batch_size: int) -> list[tuple[int, int]]:
    return [
        (start, min(start + batch_size, replicas))
        for start in range(0, replicas, batch_size)
    ]


_UNRESOLVED, _SURVIVED, _EXTINCT = 0, 1, 2


def _survival_batch(
    batch: tuple[int, int, int],
    params: PptParams,
    pi_grid: np.ndarray,
    generations: int,
    cap: int,
    seed: int,
) -> np.ndarray:
    """
    Population trajectories of one batch of coupled replicas.

    Returns an int64 array (replicas, grid points, generations + 1). After
    a replica hits the cap at some level, the cap itself is stored for the
    remaining generations; after extinction zeros are stored.
    """
    index, start, stop = batch
    size = stop - start
    n_pi = pi_grid.size
    rng = make_rng(seed_stream(seed, index), TREE_STREAM)

    traj = np.zeros((size, n_pi, generations + 1), dtype=np.int64)
    status = np.zeros((size, n_pi), dtype=np.int8)
    traj[:, :, 0] = 1
    if cap <= 1:
        traj[:] = cap
        return traj

    pop = _root_population(params, size, rng)
    for n in range(1, generations + 1):
        idx = _cut_index(status)
        pi_owner = np.where(idx >= 0, pi_grid[np.maximum(idx, 0)], 0.0)
        # particles dead at their replica's top unresolved level are dropped
        live = (idx[pop.owner] >= 0) & (pop.pathmax < pi_owner[pop.owner])
        pop = pop.take(np.nonzero(live)[0])
        if not len(pop):
            break
        cand = _candidates(pop, params, pi_owner, rng)

        # resolve the top level of any replica that already reaches the cap,
        # then thin its candidates down to the next level
        over = (cand.per_owner(pop, size) >= cap) & (idx >= 0)
        while over.any():
            owners = np.nonzero(over)[0]
            status[owners, idx[owners]] = _SURVIVED
            traj[owners, idx[owners], n:] = cap

            old_pi = pi_owner
            idx = _cut_index(status)
            pi_owner = np.where(idx >= 0, pi_grid[np.maximum(idx, 0)], 0.0)
            ratio = np.divide(
                pi_owner, old_pi, out=np.zeros(size), where=old_pi > 0
            )
            parent_alive = (pop.pathmax < pi_owner[pop.owner]) & (
                idx[pop.owner] >= 0
            )
            rows = over[pop.owner]
            thinned = rng.binomial(
                cand.y_count[rows], ratio[pop.owner[rows]]
            )
            cand.y_count[rows] = np.where(parent_alive[rows], thinned, 0)
            o_owner = pop.owner[cand.o_parent]
            keep = ~over[o_owner] | (
                (cand.o_mark < pi_owner[o_owner])
                & parent_alive[cand.o_parent]
            )
            cand.o_parent = cand.o_parent[keep]
            cand.o_mark = cand.o_mark[keep]
            over = (cand.per_owner(pop, size) >= cap) & (idx >= 0)

        _check_budget(cand.total)
        pop = _materialize(pop, cand, params, pi_owner, rng)

        for j in range(n_pi):
            alive = pop.pathmax < pi_grid[j]
            counts = np.bincount(pop.owner[alive], minlength=size)
            open_rows = status[:, j] == _UNRESOLVED
            traj[open_rows, j, n] = counts[open_rows]
            status[open_rows & (counts == 0), j] = _EXTINCT
            reached = open_rows & (counts >= cap)
            status[reached, j] = _SURVIVED
            traj[reached, j, n:] = cap

    return traj


class SurvivalEstimate(BaseModel):
    pi: float
    generations: int
    population_cap: int
    replicas: int
    survivals: int
    survival_frac: float
    ci_half_width: float
    seed: int
    batch_size: int


def _ci_half_width(frac: float, replicas: int, level: float = 0.95) -> float:
    z = stats.norm.ppf(0.5 + level / 2)
    return float(z * math.sqrt(frac * (1.0 - frac) / replicas))


@dataclass(eq=False)
class SurvivalRun:
    """Coupled survival replicas over a grid of retention levels."""

    params: PptParams
    pi_grid: np.ndarray
    generations: int
    population_cap: int
    replicas: int
    seed: int
    batch_size: int
    trajectories: np.ndarray = field(repr=False)

    def survived(
        self, generations: Optional[int] = None, cap: Optional[int] = None
    ) -> np.ndarray:
        """
        Boolean (replicas, grid points) survival under a smaller protocol.

        Any ``generations <= self.generations`` and ``cap <= self.cap`` can
        be evaluated on the same replicas.
        """
        g = self.generations if generations is None else generations
        k = self.population_cap if cap is None else cap
        if not 0 <= g <= self.generations:
            raise ValueError(f"generations must lie in 0..{self.generations}")
        if not 1 <= k <= self.population_cap:
            raise ValueError(f"cap must lie in 1..{self.population_cap}")
        window = self.trajectories[:, :, : g + 1]
        return (window >= k).any(axis=2) | (window[:, :, g] >= 1)

    def at(
        self, generations: Optional[int] = None, cap: Optional[int] = None
    ) -> list[SurvivalEstimate]:
        g = self.generations if generations is None else generations
        k = self.population_cap if cap is None else cap
        survived = self.survived(g, k)
        out = []
        for j, pi in enumerate(self.pi_grid.tolist()):
            hits = int(survived[:, j].sum())
            frac = hits / self.replicas
            out.append(
                SurvivalEstimate(
                    pi=pi,
                    generations=g,
                    population_cap=k,
                    replicas=self.replicas,
                    survivals=hits,
                    survival_frac=frac,
                    ci_half_width=_ci_half_width(frac, self.replicas),
                    seed=self.seed,
                    batch_size=self.batch_size,
                )
            )
        return out

    def monotonicity_violations(self) -> int:
        survived = self.survived().astype(np.int8)
        return int((np.diff(survived, axis=1) < 0).sum())


def _check_protocol(generations: int, cap: int, replicas: int) -> None:
    if generations < 1 or cap < 1 or replicas < 1:
        raise ValueError(
            "generations, population cap and replicas must all be >= 1"
        )


def survival_curve(
    params: PptParams,
    pi_grid: Sequence[float],
    generations: Optional[int] = None,
    cap: Optional[int] = None,
    replicas: Optional[int] = None,
    seed: int = 0,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> SurvivalRun:
    """Survival of the percolated tree at every level of ``pi_grid``."""
    generations = _or_default(generations, Settings.ppt_generations)
    cap = _or_default(cap, Settings.ppt_population_cap)
    replicas = _or_default(replicas, Settings.ppt_replicas)
    batch_size = _or_default(batch_size, Settings.ppt_batch_size)
    _check_protocol(generations, cap, replicas)
    grid = np.asarray(pi_grid, dtype=np.float64)
    if grid.size == 0 or np.any(np.diff(grid) < 0):
        raise ValueError("pi grid must be non-empty and sorted ascending")
    if grid[0] < 0 or grid[-1] > 1:
        raise ValueError("pi grid values must lie in [0, 1]")

    batches = [
        (i, start, stop)
        for i, (start, stop) in enumerate(_batch_bounds(replicas, batch_size))
    ]
    logger.info(
        "survival_started",
        m=params.m,
        delta=params.delta,
        b=params.b,
        grid_points=int(grid.size),
        generations=generations,
        cap=cap,
        replicas=replicas,
    )
    parts = map_ordered(
        partial(
            _survival_batch,
            params=params,
            pi_grid=grid,
            generations=generations,
            cap=cap,
            seed=seed,
        ),
        batches,
        workers,
    )
    return SurvivalRun(
        params=params,
        pi_grid=grid,
        generations=generations,
        population_cap=cap,
        replicas=replicas,
        seed=seed,
        batch_size=batch_size,
        trajectories=np.concatenate(parts, axis=0),
    )


def estimate_survival(
    params: PptParams,
    generations: Optional[int] = None,
    cap: Optional[int] = None,
    replicas: Optional[int] = None,
    seed: int = 0,
    workers: Optional[int] = None,
) -> SurvivalEstimate:
    """
    Fraction of replicas that survive ``generations`` generations or whose
    live population reaches ``cap``.
    """
    run = survival_curve(
        params, [params.pi], generations, cap, replicas, seed, workers
    )
    estimate = run.at()[0]
    logger.info(
        "survival_estimated",
        pi=params.pi,
        survival_frac=estimate.survival_frac,
        ci_half_width=estimate.ci_half_width,
    )
    return estimate


# ---------------------------------------------------------------------------
# Score and martingale trajectories
# ---------------------------------------------------------------------------


class GenerationSnapshot(BaseModel):
    generation: int
    particles: int
    score: Optional[float] = None
    martingale: Optional[float] = None
    min_age: Optional[float] = None


def _expected_child_weight(
    pop: _Population, params: PptParams, w: np.ndarray
) -> np.ndarray:
    """
    Closed-form mean of ``sum w_label / sqrt(age)`` over the kept children
    of every particle, given its age, label and strength.

    A kept O-child at ``U**(1/chi) * A`` contributes ``A**-0.5 * chi / a``
    on average and the Y-children on ``[A, upper]`` contribute
    ``Gamma * A**-0.5 * (1 - chi) * (1 - (upper / A)**-a) / a``, where
    ``a = chi - 1/2``.
    """
    chi = params.chi
    a = chi - 0.5
    n_o = np.where(pop.label == LABEL_Y, params.m - 1, params.m)
    if params.b is None:
        reach = 1.0 / pop.age
    else:
        reach = np.full(len(pop), params.b)
    young = (1.0 - chi) * (1.0 - np.power(reach, -a)) / a
    per_node = (
        n_o * w[LABEL_O] * chi / a + pop.strength * w[LABEL_Y] * young
    )
    return params.pi * per_node / np.sqrt(pop.age)


def _trajectory_batch(
    batch: tuple[int, int, int],
    params: PptParams,
    generations: int,
    seed: int,
    weights: tuple[float, float],
    growth: float,
) -> dict[str, np.ndarray]:
    index, start, stop = batch
    size = stop - start
    rng = make_rng(seed_stream(seed, index), TREE_STREAM)
    w = np.array([weights[0], weights[1], weights[0]])
    pi_owner = np.full(size, params.pi)

    particles = np.zeros((size, generations + 1), dtype=np.int64)
    values = np.zeros((size, generations + 1))
    step = np.full((size, generations + 1), np.nan)
    min_age = np.full((size, generations + 1), np.nan)

    pop = _root_population(params, size, rng)
    norm = w[pop.label] / np.sqrt(pop.age)
    for n in range(generations + 1):
        if n:
            if not len(pop):
                break
            cand = _candidates(pop, params, pi_owner, rng)
            _check_budget(cand.total)
            pop = _materialize(pop, cand, params, pi_owner, rng)
        particles[:, n] = np.bincount(pop.owner, minlength=size)
        score = np.bincount(
            pop.owner,
            weights=w[pop.label] / np.sqrt(pop.age),
            minlength=size,
        )
        values[:, n] = score / norm / growth**n
        if n < generations and len(pop):
            expected = np.bincount(
                pop.owner,
                weights=_expected_child_weight(pop, params, w),
                minlength=size,
            )
            alive = score > 0
            step[alive, n] = expected[alive] / (growth * score[alive])
        lowest = np.full(size, np.inf)
        np.minimum.at(lowest, pop.owner, pop.age)
        min_age[:, n] = np.where(np.isfinite(lowest), lowest, np.nan)

    return {
        "particles": particles,
        "values": values,
        "step": step,
        "min_age": min_age,
    }


@dataclass(eq=False)
class TrajectoryRun:
    """
    Per-replica, per-generation score or martingale values.

    ``step[:, n]`` is the closed-form conditional mean of the generation
    ``n + 1`` value given generation ``n``, divided by the generation ``n``
    value (NaN once a replica has died out). Its replica average is a
    light-tailed check of the one-step drift, whereas ``values`` inherits
    the infinite variance of ``1 / sqrt(age)``.
    """

    kind: str
    params: PptParams
    generations: int
    replicas: int
    seed: int
    particles: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    step: np.ndarray = field(repr=False)
    min_age: np.ndarray = field(repr=False)

    def summary(self) -> pd.DataFrame:
        se = self.values.std(axis=0, ddof=1) / math.sqrt(self.replicas)
        step_mean, step_se = _column_stats(self.step)
        return pd.DataFrame(
            {
                "generation": np.arange(self.generations + 1),
                "particles_mean": self.particles.mean(axis=0),
                "mean": self.values.mean(axis=0),
                "se": se if self.replicas > 1 else 0.0,
                "step_mean": step_mean,
                "step_se": step_se,
            }
        )

    def snapshots(self, replica: int) -> list[GenerationSnapshot]:
        out = []
        for n in range(self.generations + 1):
            value = float(self.values[replica, n])
            age = self.min_age[replica, n]
            out.append(
                GenerationSnapshot(
                    generation=n,
                    particles=int(self.particles[replica, n]),
                    score=value if self.kind == "score" else None,
                    martingale=value if self.kind == "martingale" else None,
                    min_age=None if np.isnan(age) else float(age),
                )
            )
        return out

    def records(self) -> list[dict[str, Any]]:
        rows = []
        for row in self.summary().to_dict(orient="records"):
            record = {c: None for c in TRAJECTORY_COLUMNS}
            record["generation"] = int(row["generation"])
            record["particles_mean"] = row["particles_mean"]
            record[f"{self.kind}_mean"] = row["mean"]
            record[f"{self.kind}_se"] = row["se"]
            for name in ("step_mean", "step_se"):
                value = row[name]
                record[f"{self.kind}_{name}"] = (
                    None if np.isnan(value) else value
                )
            rows.append(record)
        return rows

    def is_non_increasing(self, n_se: float = 2.0, start: int = 1) -> bool:
        """Means never rise by more than ``n_se`` combined standard errors."""
        frame = self.summary()
        mean, se = frame["mean"].to_numpy(), frame["se"].to_numpy()
        for n in range(start + 1, len(mean)):
            band = n_se * math.hypot(se[n], se[n - 1])
            if mean[n] > mean[n - 1] + band:
                return False
        return True

    def max_deviation_se(
        self, target: float = 1.0, column: str = "mean"
    ) -> float:
        """
        Largest ``|mean - target| / se`` over the generations.

        ``column="mean"`` looks at generations 1..G of the raw values,
        ``column="step"`` at every generation with a conditional step.
        """
        frame = self.summary()
        if column == "mean":
            frame = frame.iloc[1:]
            mean, se = frame["mean"], frame["se"]
        elif column == "step":
            frame = frame.dropna(subset=["step_mean"])
            mean, se = frame["step_mean"], frame["step_se"]
        else:
            raise ValueError(f"unknown trajectory column '{column}'")
        if frame.empty:
            return 0.0
        se, dev = se.to_numpy(), np.abs(mean.to_numpy() - target)
        return float(np.max(np.where(se > 0, dev / se, np.inf)))


def _column_stats(table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """NaN-skipping column means and standard errors."""
    valid = ~np.isnan(table)
    count = valid.sum(axis=0)
    filled = np.where(valid, table, 0.0)
    mean = np.divide(
        filled.sum(axis=0),
        count,
        out=np.full(table.shape[1], np.nan),
        where=count > 0,
    )
    centered = np.where(valid, table - mean, 0.0)
    var = np.divide(
        (centered**2).sum(axis=0),
        count - 1,
        out=np.full(table.shape[1], np.nan),
        where=count > 1,
    )
    se = np.sqrt(var / np.maximum(count, 1))
    return mean, np.where(count == 1, 0.0, se)


def _run_trajectories(
    kind: str,
    params: PptParams,
    generations: int,
    replicas: int,
    seed: int,
    weights: tuple[float, float],
    growth: float,
    workers: Optional[int],
    batch_size: Optional[int],
) -> TrajectoryRun:
    if generations < 0 or replicas < 1:
        raise ValueError("generations must be >= 0 and replicas >= 1")
    batch_size = _or_default(batch_size, Settings.ppt_batch_size)
    batches = [
        (i, start, stop)
        for i, (start, stop) in enumerate(_batch_bounds(replicas, batch_size))
    ]
    parts = map_ordered(
        partial(
            _trajectory_batch,
            params=params,
            generations=generations,
            seed=seed,
            weights=weights,
            growth=growth,
        ),
        batches,
        workers,
    )
    run = TrajectoryRun(
        kind=kind,
        params=params,
        generations=generations,
        replicas=replicas,
        seed=seed,
        particles=np.concatenate([p["particles"] for p in parts]),
        values=np.concatenate([p["values"] for p in parts]),
        step=np.concatenate([p["step"] for p in parts]),
        min_age=np.concatenate([p["min_age"] for p in parts]),
    )
    logger.info(
        "trajectories_done",
        kind=kind,
        generations=generations,
        replicas=replicas,
        final_mean=float(run.values[:, -1].mean()),
    )
    return run


def score_trajectory(
    params: PptParams,
    generations: int,
    replicas: int,
    seed: int,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> TrajectoryRun:
    """
    The score ``sum p_label / sqrt(age)`` over each generation, relative to
    the root, in the restricted space. It is a supermartingale at
    ``pi = 1 / r``.
    """
    if params.delta <= 0:
        raise DomainError("the score needs delta > 0")
    if params.b is not None:
        raise ValueError("the score is defined on the restricted space")
    p = spectral_norm(params.m, params.delta).p
    return _run_trajectories(
        "score", params, generations, replicas, seed, p, 1.0, workers,
        batch_size,
    )


def martingale_trajectory(
    params: PptParams,
    generations: int,
    replicas: int,
    seed: int,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> TrajectoryRun:
    """
    ``rho_b**-n * sum u_label / sqrt(age)`` on the b-truncated tree, with
    ``rho_b = pi * r_b``. Mean one in every generation for an O-typed root.
    """
    if params.delta <= 0:
        raise DomainError("the martingale needs delta > 0")
    if params.b is None:
        raise ValueError("the martingale needs a truncation factor b")
    spectrum = truncated_spectral(params.m, params.delta, params.b)
    rho = params.pi * spectrum.r_b
    if not rho > 0:
        raise DomainError("pi * r_b must be positive")
    return _run_trajectories(
        "martingale", params, generations, replicas, seed, spectrum.u, rho,
        workers, batch_size,
    )


def expected_first_score(params: PptParams, root_age: float) -> float:
    """
    Mean first-generation score of an O-typed root at ``root_age`` in the
    restricted space. Tends to ``pi * r`` as the root age tends to zero.
    """
    if params.delta <= 0:
        raise DomainError("the score needs delta > 0")
    k = constants(params.m, params.delta)
    p_o, p_y = spectral_norm(params.m, params.delta).p
    a = k.chi - 0.5
    younger = k.c_OY * p_y * (1.0 - root_age**a)
    return params.pi * (k.c_OO * p_o + younger) / (a * p_o)


# ---------------------------------------------------------------------------
# Elbow branching process (delta <= 0)
# ---------------------------------------------------------------------------


def _check_elbow(m: int, delta: float) -> None:
    if not delta > -m:
        raise ParameterError(f"delta must exceed -m (got {delta})")
    if delta > 0:
        raise DomainError("the elbow process is used for delta <= 0 only")


def elbow_bp_mean(
    pi: float,
    h_cut: float,
    m: int,
    delta: float,
    continuous_at_zero: bool = False,
) -> float:
    """
    Mean offspring of the dominated elbow branching process.

    For delta = 0 the default returns ``c_OY c_YO pi**2 log(1/h)``;
    ``continuous_at_zero=True`` returns the limit of the delta < 0 formula,
    which is larger by the factor ``1 / chi = 2`` and is the exact mean of
    the simulated process.
    """
    _check_elbow(m, delta)
    if not 0 < h_cut < 1:
        raise ValueError("h_cut must lie in (0, 1)")
    k = constants(m, delta)
    coupling = k.c_OY * k.c_YO * pi**2
    if delta == 0:
        factor = 1.0 / k.chi if continuous_at_zero else 1.0
        return coupling * factor * math.log(1.0 / h_cut)
    gap = 1.0 - 2.0 * k.chi
    return (
        coupling
        * h_cut ** (-gap)
        * (1.0 - h_cut**gap)
        / (k.chi * gap)
    )


class ElbowThreshold(BaseModel):
    pi: float
    m: int
    delta: float
    feasible: bool
    h_critical: Optional[float] = None
    h_cut: Optional[float] = None
    mean_at_cut: Optional[float] = None
    reason: Optional[str] = None


def choose_elbow_threshold(
    pi: float,
    m: int,
    delta: float,
    safety: float = 0.5,
    continuous_at_zero: bool = False,
) -> ElbowThreshold:
    """
    A cut-off age making the elbow process supercritical.

    ``h_critical`` solves ``elbow_bp_mean = 1`` (bracketed root finding in
    log h); every smaller h works and ``h_cut = safety * h_critical``.
    """
    _check_elbow(m, delta)
    if not 0 < pi <= 1:
        raise ValueError("pi must lie in (0, 1]")
    if not 0 < safety < 1:
        raise ValueError("safety must lie in (0, 1)")
    if m == 1:
        return ElbowThreshold(
            pi=pi,
            m=m,
            delta=delta,
            feasible=False,
            reason="Y nodes of the m = 1 tree have no O-children",
        )

    def excess(log_h: float) -> float:
        return (
            elbow_bp_mean(pi, math.exp(log_h), m, delta, continuous_at_zero)
            - 1.0
        )

    hi = -1e-12
    lo = -1.0
    while excess(lo) <= 0:
        lo *= 2.0
        if lo < -1e5:
            return ElbowThreshold(
                pi=pi,
                m=m,
                delta=delta,
                feasible=False,
                reason="no cut-off above exp(-1e5) reaches mean one",
            )
    log_h = optimize.brentq(excess, lo, hi, xtol=1e-14, rtol=1e-14)
    h_critical = math.exp(log_h)
    h_cut = safety * h_critical
    return ElbowThreshold(
        pi=pi,
        m=m,
        delta=delta,
        feasible=True,
        h_critical=h_critical,
        h_cut=h_cut,
        mean_at_cut=elbow_bp_mean(pi, h_cut, m, delta, continuous_at_zero),
    )


def _elbow_class_rates(
    pi: float, h_cut: float, m: int, delta: float
) -> np.ndarray:
    """
    Per unit strength, the Poisson rate of Y-children carrying exactly j
    kept elbow grandchildren, j = 1..m-1.

    A Y-child at age y keeps each of its m - 1 O-children with probability
    ``pi * (h / y)**chi``; splitting the Y process by that binomial count
    gives independent Poisson processes.
    """
    chi = (m + delta) / (2 * m + delta)
    slots = m - 1
    rates = np.zeros(slots)
    if slots == 0 or pi == 0:
        return rates

    def intensity(y: float) -> float:
        return pi * (1 - chi) * y ** (-chi) * h_cut ** (chi - 1)

    for j in range(1, slots + 1):

        def integrand(tau: float, j: int = j) -> float:
            y = math.exp(tau)
            keep = pi * (h_cut / y) ** chi
            return (
                intensity(y)
                * stats.binom.pmf(j, slots, keep)
                * y
            )

        rates[j - 1] = integrate.quad(
            integrand, math.log(h_cut), 0.0, epsabs=0.0, epsrel=1e-10,
            limit=200,
        )[0]
    return rates


def elbow_offspring_sample(
    pi: float,
    h_cut: float,
    m: int,
    delta: float,
    size: int,
    rng: np.random.Generator,
    method: str = "marked",
) -> np.ndarray:
    """
    Offspring counts of ``size`` independent individuals at age ``h_cut``.

    ``method="marked"`` draws the counts from the split Poisson processes;
    ``method="explicit"`` places every Y-child and its O-children.
    """
    _check_elbow(m, delta)
    shape = m + delta + 1
    strengths = rng.gamma(shape, size=size)
    if method == "marked":
        rates = _elbow_class_rates(pi, h_cut, m, delta)
        counts = np.zeros(size, dtype=np.int64)
        for j, rate in enumerate(rates, start=1):
            counts += j * rng.poisson(strengths * rate)
        return counts
    if method != "explicit":
        raise ValueError(f"unknown elbow sampling method '{method}'")

    chi = (m + delta) / (2 * m + delta)
    span = h_cut ** (chi - 1.0) - 1.0
    y_count = rng.poisson(pi * strengths * span)
    owner = np.repeat(np.arange(size), y_count)
    v = 1.0 - rng.random(owner.size)
    y_age = h_cut * (1.0 + v * span) ** (1.0 / (1.0 - chi))
    slots = np.repeat(y_age, m - 1)
    slot_owner = np.repeat(owner, m - 1)
    o_age = rng.random(slots.size) ** (1.0 / chi) * slots
    kept = (rng.random(slots.size) < pi) & (o_age <= h_cut)
    return np.bincount(slot_owner[kept], minlength=size).astype(np.int64)


def _elbow_batch(
    batch: tuple[int, int, int],
    pi: float,
    h_cut: float,
    m: int,
    delta: float,
    generations: int,
    cap: int,
    seed: int,
) -> np.ndarray:
    index, start, stop = batch
    size = stop - start
    rng = make_rng(seed_stream(seed, index), TREE_STREAM)
    traj = np.zeros((size, 1, generations + 1), dtype=np.int64)
    traj[:, 0, 0] = 1
    if cap <= 1:
        traj[:] = cap
        return traj

    pops = np.ones(size, dtype=np.int64)
    for n in range(1, generations + 1):
        total = int(pops.sum())
        if not total:
            break
        _check_budget(total)
        owner = np.repeat(np.arange(size), pops)
        offspring = elbow_offspring_sample(pi, h_cut, m, delta, total, rng)
        pops = np.bincount(owner, weights=offspring, minlength=size).astype(
            np.int64
        )
        reached = pops >= cap
        traj[:, 0, n] = np.where(reached, cap, pops)
        traj[reached, 0, n:] = cap
        pops[reached] = 0
    return traj


def simulate_elbow_bp(
    pi: float,
    h_cut: float,
    m: int,
    delta: float,
    generations: Optional[int] = None,
    cap: Optional[int] = None,
    replicas: Optional[int] = None,
    seed: int = 0,
    workers: Optional[int] = None,
) -> SurvivalRun:
    """Survival of the dominated single-type elbow branching process."""
    _check_elbow(m, delta)
    if not 0 < h_cut < 1:
        raise ValueError("h_cut must lie in (0, 1)")
    generations = _or_default(generations, Settings.ppt_generations)
    cap = _or_default(cap, Settings.ppt_population_cap)
    replicas = _or_default(replicas, Settings.ppt_replicas)
    batch_size = Settings.ppt_batch_size
    _check_protocol(generations, cap, replicas)

    batches = [
        (i, start, stop)
        for i, (start, stop) in enumerate(_batch_bounds(replicas, batch_size))
    ]
    parts = map_ordered(
        partial(
            _elbow_batch,
            pi=pi,
            h_cut=h_cut,
            m=m,
            delta=delta,
            generations=generations,
            cap=cap,
            seed=seed,
        ),
        batches,
        workers,
    )
    run = SurvivalRun(
        params=PptParams(m=m, delta=delta, pi=pi),
        pi_grid=np.array([pi]),
        generations=generations,
        population_cap=cap,
        replicas=replicas,
        seed=seed,
        batch_size=batch_size,
        trajectories=np.concatenate(parts, axis=0),
    )
    logger.info(
        "elbow_bp_done",
        pi=pi,
        h_cut=h_cut,
        survival_frac=run.at()[0].survival_frac,
    )
    return run
