"""
Power iteration on discretized versions of the mean offspring operator.

Two discretizations are offered on a log-spaced age grid:

* ``periodic`` (default): the operator is homogeneous of degree -1, so in
  log-age and after the substitution ``phi(v) = exp(v / 2) h(exp(v))`` it
  is a convolution. The grid is wrapped into a circle and the kernel is
  summed over its periodic images, which removes the boundary.
* ``open``: the literal matrix ``kappa_b(x_i, x_j) * x_j * w_j`` with
  log-trapezoid weights. Mass escaping below ``x_min`` or above ``x_max``
  is lost, so this estimate sits well below the operator norm; it is kept
  to measure that boundary bias.
"""

import math
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from src.shared.config import Settings
from src.shared.errors import ConvergenceError, DomainError
from src.shared.logging_config import get_logger
from src.spectral.constants import (
    KernelConstants,
    constants,
    spectral_norm,
    truncated_spectral,
)

logger = get_logger(__name__)

BOUNDARIES = ("periodic", "open")


class PowerIterationResult(BaseModel):
    m: int
    delta: float
    b: Optional[float]
    boundary: str
    n_points: int
    x_min: float
    x_max: float
    estimate: float
    closed_form: float
    rel_error: float
    iterations: int


def power_iteration(
    apply: Callable[[np.ndarray], np.ndarray],
    start: np.ndarray,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    stable_iters: Optional[int] = None,
) -> tuple[float, np.ndarray, int]:
    """
    Dominant eigenvalue of a positive linear map by power iteration.

    Stops once the relative change of the Rayleigh quotient stays below
    ``tol`` for ``stable_iters`` consecutive iterations.

    Returns:
        (eigenvalue estimate, normalized eigenvector, iterations used)
    """
    tol = Settings.power_tol if tol is None else tol
    max_iter = Settings.power_max_iter if max_iter is None else max_iter
    stable_iters = (
        Settings.power_stable_iters if stable_iters is None else stable_iters
    )

    vec = start / np.linalg.norm(start)
    previous = None
    estimate = 0.0
    stable = 0
    for it in range(1, max_iter + 1):
        image = apply(vec)
        estimate = float(np.vdot(vec, image).real)
        norm = np.linalg.norm(image)
        if norm == 0.0:
            return 0.0, vec, it
        vec = image / norm
        if previous is not None:
            change = abs(estimate - previous) / max(abs(estimate), 1e-300)
            stable = stable + 1 if change < tol else 0
            if stable >= stable_iters:
                return estimate, vec, it
        previous = estimate

    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations",
        last_iterates=(previous, estimate),
    )


def _periodic_rows(
    a: float, n_points: int, period: float, b: Optional[float]
) -> tuple[np.ndarray, np.ndarray]:
    """
    Image-summed kernel rows, indexed by the column offset ``d``.

    ``older[d]`` sums ``exp(a z)`` over ``z = d * step - k * period < 0``;
    ``younger[d]`` sums ``exp(-a z)`` over ``0 < z = d * step + k * period
    <= log b``. The two one-sided limits at ``z = 0`` get half weight.
    """
    step = period / n_points
    offsets = np.arange(n_points) * step
    wrap = -np.expm1(-a * period)

    older = np.exp(a * (offsets - period)) / wrap
    older[0] += 0.5

    if b is None:
        younger = np.exp(-a * offsets) / wrap
    else:
        log_b = math.log(b)
        younger = np.zeros(n_points)
        k = 0
        while k * period <= log_b:
            z = offsets + k * period
            younger += np.where(z <= log_b, np.exp(-a * z), 0.0)
            k += 1
    younger[0] -= 0.5
    return older * step, younger * step


def periodic_operator(
    consts: KernelConstants,
    b: Optional[float],
    x_min: float,
    x_max: float,
    n_points: int,
) -> Callable[[np.ndarray], np.ndarray]:
    """Circulant apply on a (2 * n_points) vector, via FFT correlation."""
    a = consts.chi - 0.5
    period = math.log(x_max / x_min)
    older, younger = _periodic_rows(a, n_points, period, b)
    spectra = np.conj(np.fft.rfft(np.vstack([older, younger]), axis=1))
    c = consts.matrix()

    def apply(vec: np.ndarray) -> np.ndarray:
        phi = vec.reshape(2, n_points)
        corr = np.fft.irfft(spectra * np.fft.rfft(phi, axis=1), n=n_points)
        return (c @ corr).ravel()

    return apply


def open_matrix(
    consts: KernelConstants,
    b: Optional[float],
    x_min: float,
    x_max: float,
    n_points: int,
) -> np.ndarray:
    """Dense matrix ``kappa_b((x_i,s),(x_j,t)) * x_j * w_j``."""
    x = np.geomspace(x_min, x_max, n_points)
    step = math.log(x_max / x_min) / (n_points - 1)
    w = np.full(n_points, step)
    w[0] = w[-1] = step / 2

    xi = x[:, None]
    xj = x[None, :]
    big = np.maximum(xi, xj)
    small = np.minimum(xi, xj)
    base = (xj * w[None, :]) / (big**consts.chi * small ** (1 - consts.chi))
    older = np.where(xj < xi, base, 0.0)
    young_mask = xj > xi
    if b is not None:
        young_mask &= xj <= b * xi
    younger = np.where(young_mask, base, 0.0)

    return np.block(
        [
            [consts.c_OO * older, consts.c_OY * younger],
            [consts.c_YO * older, consts.c_YY * younger],
        ]
    )


def power_iteration_norm(
    m: int,
    delta: float,
    b: Optional[float],
    grid_spec: tuple[float, float, int],
    boundary: str = "periodic",
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> PowerIterationResult:
    """
    Numerical spectral radius of the (truncated) operator.

    Args:
        grid_spec: (x_min, x_max, number of log-spaced points).
        boundary: "periodic" or "open".
    """
    if delta <= 0:
        raise DomainError("the operator norm is finite only for delta > 0")
    if b is not None and not b > 1:
        raise DomainError(f"truncation factor b must exceed 1 (got {b})")
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}")
    x_min, x_max, n_points = grid_spec
    if not 0 < x_min < x_max or n_points < 2:
        raise ValueError("grid needs 0 < x_min < x_max and at least 2 points")

    consts = constants(m, delta)
    if boundary == "periodic":
        apply = periodic_operator(consts, b, x_min, x_max, n_points)
        grid = np.geomspace(x_min, x_max, n_points, endpoint=False)
        start = np.tile(np.sqrt(grid), 2)
    else:
        matrix = open_matrix(consts, b, x_min, x_max, n_points)
        apply = matrix.__matmul__
        start = np.ones(2 * n_points)

    estimate, _, iterations = power_iteration(
        apply, start, tol=tol, max_iter=max_iter
    )
    closed = (
        truncated_spectral(m, delta, b).r_b
        if b is not None
        else spectral_norm(m, delta).r
    )
    result = PowerIterationResult(
        m=m,
        delta=delta,
        b=b,
        boundary=boundary,
        n_points=n_points,
        x_min=x_min,
        x_max=x_max,
        estimate=estimate,
        closed_form=closed,
        rel_error=(estimate - closed) / closed,
        iterations=iterations,
    )
    logger.info(
        "power_iteration_done",
        boundary=boundary,
        n_points=n_points,
        estimate=estimate,
        closed_form=closed,
        iterations=iterations,
    )
    return result


def refinement_study(
    m: int,
    delta: float,
    b: Optional[float],
    x_min: float,
    x_max: float,
    n_values: Sequence[int],
    boundary: str = "periodic",
) -> list[dict]:
    """Power-iteration estimates for a sequence of grid sizes."""
    rows = []
    for n_points in n_values:
        result = power_iteration_norm(
            m, delta, b, (x_min, x_max, int(n_points)), boundary=boundary
        )
        rows.append(
            {
                "n_points": result.n_points,
                "boundary": result.boundary,
                "x_min": x_min,
                "x_max": x_max,
                "b": b,
                "estimate": result.estimate,
                "closed_form": result.closed_form,
                "rel_error": result.rel_error,
                "iterations": result.iterations,
            }
        )
    return rows
