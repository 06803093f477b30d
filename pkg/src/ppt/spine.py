"""
The spine of the b-truncated tree under the tilted measure.

Along the spine the labels form a two-state Markov chain with
``p_st = (M_b)_st u_t / (lambda_b u_s)`` and the age is multiplied at each
step by an independent ratio ``R(t)`` depending only on the new label.
Ages therefore evolve as a Markov-modulated random walk in log-age whose
drift is negative for every finite b.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy import stats

from src.shared.errors import DomainError, ParameterError
from src.shared.logging_config import get_logger
from src.shared.rng import SPINE_STREAM, make_rng
from src.spectral.constants import (
    Label,
    constants,
    truncated_spectral,
    truncation_factor,
)

logger = get_logger(__name__)

SPINE_COLUMNS = ["step", "label", "log_age"]
_LABEL_NAMES = (Label.O.value, Label.Y.value)


def _check(m: int, delta: float, b: float) -> None:
    if not b > 1:
        raise ParameterError(f"truncation factor b must exceed 1 (got {b})")
    if not delta > -m:
        raise ParameterError(f"delta must exceed -m (got {delta})")
    if delta <= 0:
        raise DomainError("the spine is defined for delta > 0 only")


class SpineParams(BaseModel):
    m: int = Field(ge=1)
    delta: float
    b: float

    @model_validator(mode="after")
    def check_parameters(self) -> "SpineParams":
        _check(self.m, self.delta, self.b)
        return self

    @property
    def chi(self) -> float:
        return (self.m + self.delta) / (2 * self.m + self.delta)

    @property
    def u_b(self) -> tuple[float, float]:
        return truncated_spectral(self.m, self.delta, self.b).u

    @property
    def transition(self) -> np.ndarray:
        return transition_matrix(self.m, self.delta, self.b)

    @property
    def stationary_law(self) -> tuple[float, float]:
        return stationary(self.m, self.delta, self.b)


def transition_matrix(m: int, delta: float, b: float) -> np.ndarray:
    """
    Row-stochastic label transitions, rows and columns ordered (O, Y).

    For m = 1 the Y-component of the Perron vector vanishes and O is
    absorbing; the Y row is then set to (1, 0).
    """
    _check(m, delta, b)
    spectrum = truncated_spectral(m, delta, b)
    matrix = constants(m, delta).truncated_matrix(spectrum.q)
    u = np.asarray(spectrum.u)
    lam = spectrum.lambda_M_b
    if u[1] == 0.0:
        return np.array([[1.0, 0.0], [1.0, 0.0]])
    return matrix * u[None, :] / (lam * u[:, None])


def stationary(m: int, delta: float, b: float) -> tuple[float, float]:
    p = transition_matrix(m, delta, b)
    p_oy, p_yo = p[0, 1], p[1, 0]
    upsilon_o = p_yo / (p_oy + p_yo)
    return float(upsilon_o), float(1.0 - upsilon_o)


def _check_chi(chi: float, b: float) -> None:
    if not chi > 0.5:
        raise DomainError("age ratios need chi > 1/2, that is delta > 0")
    if not b > 1:
        raise ParameterError(f"truncation factor b must exceed 1 (got {b})")


def sample_ratio(
    label: Label | str,
    chi: float,
    b: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> float | np.ndarray:
    """
    Draw the age ratio of one spine step by inverting its CDF.

    ``R(O) = U**(2 / (2 chi - 1))`` on (0, 1] and
    ``R(Y) = (1 - U q)**(-2 / (2 chi - 1))`` on (1, b), with
    ``q = 1 - b**(1/2 - chi)``.
    """
    _check_chi(chi, b)
    exponent = 2.0 / (2.0 * chi - 1.0)
    u = 1.0 - rng.random(size)
    if Label(label) == Label.O:
        return u**exponent
    q = truncation_factor(chi, b)
    return (1.0 - u * q) ** (-exponent)


def ratio_cdf(
    label: Label | str, x: np.ndarray, chi: float, b: float
) -> np.ndarray:
    _check_chi(chi, b)
    x = np.asarray(x, dtype=np.float64)
    if Label(label) == Label.O:
        return np.clip(x, 0.0, 1.0) ** (chi - 0.5)
    q = truncation_factor(chi, b)
    inside = (1.0 - np.clip(x, 1.0, b) ** (0.5 - chi)) / q
    return np.clip(inside, 0.0, 1.0)


def expected_log_ratio(
    label: Label | str, chi: float, b: float, simplified: bool = True
) -> float:
    """
    ``E[log R(O)] = -1 / (chi - 1/2)``; ``E[log R(Y)]`` in the simplified
    form ``1 / (chi - 1/2) - b**(1/2 - chi) log b / q`` or, with
    ``simplified=False``, as ``[q / (chi - 1/2) - b**(1/2 - chi) log b] / q``.
    """
    _check_chi(chi, b)
    a = chi - 0.5
    if Label(label) == Label.O:
        return -1.0 / a
    q = truncation_factor(chi, b)
    tail = b ** (-a) * math.log(b)
    if simplified:
        return 1.0 / a - tail / q
    return (q / a - tail) / q


def lyapunov_drift(m: int, delta: float, b: float) -> float:
    """Almost sure limit of ``log(X_n) / n`` along the spine."""
    _check(m, delta, b)
    chi = (m + delta) / (2 * m + delta)
    upsilon_o, upsilon_y = stationary(m, delta, b)
    drift = upsilon_o * expected_log_ratio(Label.O, chi, b)
    if upsilon_y > 0:
        drift += upsilon_y * expected_log_ratio(Label.Y, chi, b)
    return drift


class KSResult(BaseModel):
    label: str
    samples: int
    statistic: float
    pvalue: float


def ks_statistic(
    label: Label | str, samples: np.ndarray, chi: float, b: float
) -> KSResult:
    """Kolmogorov-Smirnov comparison of ratio samples with the closed CDF."""
    label = Label(label)
    result = stats.kstest(
        np.asarray(samples), lambda x: ratio_cdf(label, x, chi, b)
    )
    return KSResult(
        label=label.value,
        samples=int(np.asarray(samples).size),
        statistic=float(result.statistic),
        pvalue=float(result.pvalue),
    )


@dataclass(eq=False)
class SpineTrajectory:
    """Labels t_0..t_n (0 = O, 1 = Y) and log-ages log X_0..log X_n."""

    labels: np.ndarray = field(repr=False)
    log_ages: np.ndarray = field(repr=False)

    @property
    def steps(self) -> int:
        return int(self.labels.size - 1)

    @property
    def estimate(self) -> Optional[float]:
        """``log(X_n) / n``, undefined without a step."""
        if not self.steps:
            return None
        return float((self.log_ages[-1] - self.log_ages[0]) / self.steps)

    def label_frequencies(self) -> tuple[float, float]:
        visited = self.labels[1:] if self.steps else self.labels
        frac_y = float(visited.mean())
        return 1.0 - frac_y, frac_y

    def records(self) -> list[dict[str, Any]]:
        return [
            {"step": i, "label": _LABEL_NAMES[t], "log_age": x}
            for i, (t, x) in enumerate(
                zip(self.labels.tolist(), self.log_ages.tolist())
            )
        ]


def _sample_labels(
    p: np.ndarray, start: int, steps: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Label path of length ``steps + 1`` built from alternating sojourns.

    A sojourn in state s lasts Geometric(p[s, 1 - s]) steps; an absorbing
    state fills the rest of the path.
    """
    total = steps + 1
    labels = np.empty(total, dtype=np.int8)
    leave = (p[0, 1], p[1, 0])
    other = 1 - start
    pair = np.array([start, other], dtype=np.int8)
    filled = 0
    while filled < total:
        remaining = total - filled
        if leave[start] <= 0.0:
            labels[filled:] = start
            break
        # a chunk of (start, other) sojourn pairs; it always ends after a
        # sojourn in ``other``, so the next chunk starts in ``start`` again
        chunk = max(16, remaining // 4)
        first = rng.geometric(leave[start], size=chunk)
        if leave[other] > 0.0:
            second = rng.geometric(leave[other], size=chunk)
        else:
            second = np.full(chunk, remaining)
        lengths = np.minimum(np.column_stack([first, second]).ravel(), remaining)
        run = np.repeat(np.tile(pair, chunk), lengths)
        take = min(run.size, remaining)
        labels[filled : filled + take] = run[:take]
        filled += take
    return labels


def simulate_spine(
    m: int,
    delta: float,
    b: float,
    steps: int,
    seed: int,
    start_label: Label = Label.O,
    log_x0: float = 0.0,
) -> SpineTrajectory:
    """Labels by the transition matrix, log-age by summed log-ratios."""
    _check(m, delta, b)
    if steps < 0:
        raise ValueError("steps must be non-negative")
    chi = (m + delta) / (2 * m + delta)
    rng = make_rng(seed, SPINE_STREAM)
    p = transition_matrix(m, delta, b)
    start = 1 if Label(start_label) == Label.Y else 0
    labels = _sample_labels(p, start, steps, rng)

    log_ratio = np.empty(steps)
    moves = labels[1:]
    for code, label in ((0, Label.O), (1, Label.Y)):
        where = np.flatnonzero(moves == code)
        if where.size:
            log_ratio[where] = np.log(
                sample_ratio(label, chi, b, rng, size=where.size)
            )
    log_ages = np.concatenate([[log_x0], log_x0 + np.cumsum(log_ratio)])
    trajectory = SpineTrajectory(labels=labels, log_ages=log_ages)
    logger.debug(
        "spine_simulated", m=m, delta=delta, b=b, steps=steps,
        estimate=trajectory.estimate,
    )
    return trajectory


class SpineCheck(BaseModel):
    name: str
    analytic: float
    empirical: Optional[float] = None
    tolerance: Optional[float] = None
    passed: bool


class SpineReport(BaseModel):
    m: int
    delta: float
    b: float
    budget: int
    seed: int
    applicable: bool
    reason: Optional[str] = None
    checks: list[SpineCheck] = []
    all_passed: bool = False

    def records(self) -> list[dict[str, Any]]:
        return [check.model_dump() for check in self.checks]


def _mean_check(
    name: str, samples: np.ndarray, analytic: float, n_se: float = 3.0
) -> SpineCheck:
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(samples.size))
    return SpineCheck(
        name=name,
        analytic=analytic,
        empirical=mean,
        tolerance=n_se * se,
        passed=abs(mean - analytic) <= n_se * se,
    )


def empirical_vs_analytic_report(
    m: int,
    delta: float,
    b: float,
    budget: int = 100_000,
    seed: int = 0,
) -> SpineReport:
    """
    Compare the simulated spine with its closed forms.

    The checks are the stationary law, both mean log-ratios, the drift of
    ``log(X_n) / n`` and the supercriticality inequality ``p_OO + p_YO > 1``.
    """
    if not b > 1:
        raise ParameterError(f"truncation factor b must exceed 1 (got {b})")
    if budget < 2:
        raise ValueError("budget must be at least 2")
    base = dict(m=m, delta=delta, b=b, budget=budget, seed=seed)
    if delta <= 0:
        return SpineReport(
            **base,
            applicable=False,
            reason="not applicable: the spine needs delta > 0",
        )
    _check(m, delta, b)

    chi = (m + delta) / (2 * m + delta)
    p = transition_matrix(m, delta, b)
    upsilon_o, _ = stationary(m, delta, b)
    drift = lyapunov_drift(m, delta, b)
    rng = make_rng(seed, SPINE_STREAM + 1)

    trajectory = simulate_spine(m, delta, b, budget, seed)
    freq_o, _ = trajectory.label_frequencies()
    estimate = trajectory.estimate
    drift_tol = max(0.05 * abs(drift), 0.05)

    checks = [
        SpineCheck(
            name="stationary_O",
            analytic=upsilon_o,
            empirical=freq_o,
            tolerance=0.01,
            passed=abs(freq_o - upsilon_o) <= 0.01,
        ),
        _mean_check(
            "mean_log_ratio_O",
            np.log(sample_ratio(Label.O, chi, b, rng, size=budget)),
            expected_log_ratio(Label.O, chi, b),
        ),
        _mean_check(
            "mean_log_ratio_Y",
            np.log(sample_ratio(Label.Y, chi, b, rng, size=budget)),
            expected_log_ratio(Label.Y, chi, b),
        ),
        SpineCheck(
            name="drift",
            analytic=drift,
            empirical=estimate,
            tolerance=drift_tol,
            passed=abs(estimate - drift) <= drift_tol,
        ),
        SpineCheck(
            name="p_OO_plus_p_YO",
            analytic=float(p[0, 0] + p[1, 0]),
            passed=bool(p[0, 0] + p[1, 0] > 1.0),
        ),
    ]
    report = SpineReport(
        **base,
        applicable=True,
        checks=checks,
        all_passed=all(c.passed for c in checks),
    )
    logger.info(
        "spine_report",
        m=m,
        delta=delta,
        b=b,
        drift=drift,
        estimate=estimate,
        all_passed=report.all_passed,
    )
    return report
