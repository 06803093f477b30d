"""
Experiment specifications and their validation.

An ``ExperimentSpec`` fully determines the output of a run together with
its seed; ``validate`` lists every constraint it breaks instead of
stopping at the first one.
"""

import enum
import math
from typing import Any, Optional

from pydantic import BaseModel, Field

from src.shared.output import FORMATS

SEED_LIMIT = 2**64
VARIANTS = ("a", "b", "d")
SPECTRAL_MODES = ("report", "residual", "power")
BOUNDARIES = ("periodic", "open")

# fields that change where or how fast a run happens but not its output
_EXECUTION_FIELDS = {"output", "workers", "edges_path", "trajectory_path"}


class Subcommand(str, enum.Enum):
    GENERATE = "generate"
    SWEEP = "sweep"
    PPT_SURVIVAL = "ppt-survival"
    ELBOW = "elbow"
    SPECTRAL = "spectral"
    THRESHOLD = "threshold"
    SPINE = "spine"
    EXPANDER = "expander"
    SCORES = "scores"


class ExperimentSpec(BaseModel):
    subcommand: Subcommand

    # graph model
    variant: str = "b"
    m: int = 2
    delta: float = 1.0
    n: int = 1000
    a1: Optional[int] = None
    a2: Optional[int] = None

    # percolation and tree parameters
    pis: list[float] = Field(default_factory=list)
    pi: Optional[float] = None
    pi_martingale: Optional[float] = None
    b: Optional[float] = None
    root_label: str = "root"
    h_cut: Optional[float] = None
    continuous_at_zero: bool = False

    # Monte Carlo protocol
    replicas: Optional[int] = None
    generations: Optional[int] = None
    cap: Optional[int] = None
    budget: int = 100_000
    n_grid: list[int] = Field(default_factory=list)

    # expansion
    epsilon: float = 0.25
    alpha_probe: float = 0.05

    # spectral numerics
    spectral_mode: str = "report"
    boundary: str = "periodic"
    x_min: float = 1e-6
    x_max: float = 1.0
    n_points: list[int] = Field(default_factory=lambda: [2000])
    test_ages: list[float] = Field(
        default_factory=lambda: [1e-3, 1e-1, 1.0, 10.0]
    )

    # run control
    seed: int = 0
    format: str = "csv"
    output: Optional[str] = None
    edges_path: Optional[str] = None
    trajectory_path: Optional[str] = None
    workers: Optional[int] = None

    def provenance_spec(self) -> dict[str, Any]:
        """The spec as embedded in artifacts, without execution fields."""
        return self.model_dump(mode="json", exclude=_EXECUTION_FIELDS)


def _check_pi(name: str, value: Optional[float], out: list[str]) -> None:
    if value is not None and not 0.0 <= value <= 1.0:
        out.append(f"{name} must lie in [0, 1] (got {value})")


def _check_positive(name: str, value: Optional[int], out: list[str]) -> None:
    if value is not None and value < 1:
        out.append(f"{name} must be at least 1 (got {value})")


def _check_graph(spec: ExperimentSpec, out: list[str]) -> None:
    if spec.variant.lower() not in VARIANTS:
        out.append(f"variant must be one of {VARIANTS} (got {spec.variant})")
    if spec.n < 2:
        out.append(f"n must be at least 2 (got {spec.n})")
    a1 = spec.m if spec.a1 is None else spec.a1
    a2 = spec.m if spec.a2 is None else spec.a2
    if a1 < 0 or a2 < 0:
        out.append("initial degrees a1, a2 must be non-negative")
    if a2 > spec.m:
        out.append(f"a2 must be at most m (got a2={a2}, m={spec.m})")
    if (a1 + a2) % 2:
        out.append("a1 + a2 must be even")
    if min(a1, a2) + spec.delta <= 0:
        out.append("initial degrees must satisfy a_i + delta > 0")


def _check_grid(spec: ExperimentSpec, out: list[str]) -> None:
    if not spec.pis:
        out.append("pi grid must not be empty")
        return
    for value in spec.pis:
        _check_pi("pi grid value", value, out)
    if any(b < a for a, b in zip(spec.pis, spec.pis[1:])):
        out.append("pi grid must be sorted ascending")


def validate(spec: ExperimentSpec) -> list[str]:
    """Every constraint violated by ``spec``; empty when it is runnable."""
    out: list[str] = []
    cmd = spec.subcommand

    if spec.m < 1:
        out.append(f"m must be at least 1 (got {spec.m})")
    if not math.isfinite(spec.delta) or not spec.delta > -spec.m:
        out.append(
            f"delta must exceed -m (got delta={spec.delta}, m={spec.m})"
        )
    if not 0 <= spec.seed < SEED_LIMIT:
        out.append("seed must lie in [0, 2**64)")
    if spec.format not in FORMATS:
        out.append(f"format must be one of {FORMATS} (got {spec.format})")
    if spec.b is not None and not spec.b > 1:
        out.append(f"b must exceed 1 (got {spec.b})")
    if spec.workers is not None and spec.workers < 1:
        out.append("workers must be at least 1")
    _check_pi("pi", spec.pi, out)
    _check_pi("pi_martingale", spec.pi_martingale, out)
    for name in ("replicas", "generations", "cap"):
        _check_positive(name, getattr(spec, name), out)
    if spec.root_label not in ("root", "O", "Y"):
        out.append("root_label must be one of root, O, Y")

    if cmd in (Subcommand.GENERATE, Subcommand.SWEEP, Subcommand.EXPANDER):
        _check_graph(spec, out)
    if cmd in (Subcommand.SWEEP, Subcommand.PPT_SURVIVAL):
        _check_grid(spec, out)
    if cmd == Subcommand.SWEEP and any(n < 2 for n in spec.n_grid):
        out.append("every n in the scaling grid must be at least 2")

    if cmd == Subcommand.ELBOW:
        if spec.delta > 0:
            out.append("the elbow process is defined for delta <= 0")
        if spec.pi is None or not spec.pi > 0:
            out.append("elbow needs a retention probability pi > 0")
        if spec.h_cut is not None and not 0 < spec.h_cut < 1:
            out.append("h_cut must lie in (0, 1)")

    if cmd == Subcommand.SPECTRAL:
        if spec.spectral_mode not in SPECTRAL_MODES:
            out.append(f"spectral mode must be one of {SPECTRAL_MODES}")
        elif spec.spectral_mode != "report" and spec.delta <= 0:
            out.append(f"spectral {spec.spectral_mode} needs delta > 0")
        if spec.boundary not in BOUNDARIES:
            out.append(f"boundary must be one of {BOUNDARIES}")
        if not 0 < spec.x_min < spec.x_max:
            out.append("grid needs 0 < x_min < x_max")
        if not spec.n_points or any(n < 2 for n in spec.n_points):
            out.append("every grid size must be at least 2")
        if any(x <= 0 for x in spec.test_ages):
            out.append("test ages must be positive")

    if cmd == Subcommand.SPINE:
        if spec.b is None:
            out.append("spine needs a truncation factor b")
        if spec.budget < 2:
            out.append("budget must be at least 2")

    if cmd == Subcommand.EXPANDER:
        if spec.m < 2:
            out.append("m = 1 graphs are trees, which are not expanders")
        if not 0 <= spec.epsilon <= 0.5:
            out.append("epsilon must lie in [0, 1/2]")
        if not spec.n_grid:
            out.append("expander needs a non-empty n grid")
        elif any(n < 2 for n in spec.n_grid):
            out.append("every n in the grid must be at least 2")

    if cmd == Subcommand.SCORES:
        if spec.delta <= 0:
            out.append("scores need delta > 0")

    return out
