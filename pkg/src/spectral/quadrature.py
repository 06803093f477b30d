"""
Eigenfunction residuals of the mean offspring operator.

The operator is applied to ``h(x, s) = u_s / sqrt(x)`` either through the
closed-form Schur integrals or by adaptive quadrature of the kernel in
log-age. Quadrature covers ``[x * 1e-12, x]`` for O-children and
``[x, b * x]`` (or ``[x, x * 1e12]`` untruncated) for Y-children; the
remaining singular tails are added from their antiderivatives.
"""

import math
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel
from scipy import integrate

from src.shared.errors import ConvergenceError, DomainError
from src.shared.logging_config import get_logger
from src.spectral.constants import (
    KernelConstants,
    Label,
    constants,
    kernel_eval,
    truncation_factor,
)

logger = get_logger(__name__)

INNER_CUT = 1e-12
OUTER_CUT = 1e12
QUAD_EPSREL = 1e-11
QUAD_LIMIT = 200

LABELS = (Label.O, Label.Y)


class ResidualRow(BaseModel):
    age: float
    label: str
    applied: float
    expected: float
    rel_residual: float


class ResidualReport(BaseModel):
    m: int
    delta: float
    b: Optional[float]
    method: str
    operator: str
    eigenvalue: float
    max_rel_residual: float
    rows: list[ResidualRow]


def perron(matrix: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """
    Perron root with right and left eigenvectors of a 2x2 matrix.

    Both vectors are normalized to sum one. They are read off the first
    row (right) and first column (left), which stay well defined when the
    lower-left entry vanishes.
    """
    trace = matrix[0, 0] + matrix[1, 1]
    det = matrix[0, 0] * matrix[1, 1] - matrix[0, 1] * matrix[1, 0]
    lam = 0.5 * (trace + math.sqrt(max(trace * trace - 4 * det, 0.0)))
    right = np.array([matrix[0, 1], lam - matrix[0, 0]])
    left = np.array([lam - matrix[1, 1], matrix[0, 1]])
    return lam, right / right.sum(), left / left.sum()


def _quad(func, lo: float, hi: float) -> float:
    result = integrate.quad(
        func,
        lo,
        hi,
        epsabs=0.0,
        epsrel=QUAD_EPSREL,
        limit=QUAD_LIMIT,
        full_output=1,
    )
    if len(result) > 3:
        raise ConvergenceError(
            f"adaptive quadrature did not converge on [{lo}, {hi}]: "
            f"{result[3]}"
        )
    return result[0]


def _log_integral(integrand, lo: float, hi: float) -> float:
    """Integral of ``integrand(y) dy`` over [lo, hi] in log coordinates."""
    return _quad(
        lambda tau: integrand(math.exp(tau)) * math.exp(tau),
        math.log(lo),
        math.log(hi),
    )


def apply_operator(
    x: float,
    s: Label,
    weights: np.ndarray,
    consts: KernelConstants,
    b: Optional[float] = None,
) -> float:
    """(T h)(x, s) for ``h(y, t) = weights[t] / sqrt(y)`` by quadrature."""
    a = consts.chi - 0.5
    w_o, w_y = float(weights[0]), float(weights[1])

    inner = x * INNER_CUT
    older = _log_integral(
        lambda y: kernel_eval(x, s, y, Label.O, consts, b) * w_o / math.sqrt(y),
        inner,
        x,
    )
    older += consts.c(s, Label.O) * w_o * x ** (-consts.chi) * inner**a / a

    upper = b * x if b is not None else x * OUTER_CUT
    younger = _log_integral(
        lambda y: kernel_eval(x, s, y, Label.Y, consts, b) * w_y / math.sqrt(y),
        x,
        upper,
    )
    if b is None:
        younger += (
            consts.c(s, Label.Y)
            * w_y
            * x ** (consts.chi - 1.0)
            * upper ** (-a)
            / a
        )
    return older + younger


def apply_adjoint(
    y: float,
    t: Label,
    weights: np.ndarray,
    consts: KernelConstants,
    b: Optional[float] = None,
) -> float:
    """(T* g)(y, t) for ``g(x, s) = weights[s] / sqrt(x)`` by quadrature."""
    a = consts.chi - 0.5
    total = 0.0
    for s, w in zip(LABELS, weights.tolist()):
        if t == Label.O:
            # parents older than y see y as an O-child
            far = y * OUTER_CUT
            total += _log_integral(
                lambda x: kernel_eval(x, s, y, t, consts, b) * w / math.sqrt(x),
                y,
                far,
            )
            total += consts.c(s, t) * w * y ** (consts.chi - 1.0) * far ** (
                -a
            ) / a
        else:
            lo = y / b if b is not None else y * INNER_CUT
            total += _log_integral(
                lambda x: kernel_eval(x, s, y, t, consts, b) * w / math.sqrt(x),
                lo,
                y,
            )
            if b is None:
                total += (
                    consts.c(s, t) * w * y ** (-consts.chi) * lo**a / a
                )
    return total


def eigen_residual(
    m: int,
    delta: float,
    b: Optional[float],
    test_ages: Sequence[float],
    method: str = "quadrature",
    adjoint: bool = False,
) -> ResidualReport:
    """
    Relative residual of ``T h = r h`` at each test age and label.

    ``b=None`` checks the untruncated operator against its norm ``r``;
    otherwise the truncated operator against ``r_b``. ``adjoint=True``
    checks the transposed identity with the left Perron vector.
    """
    if delta <= 0:
        raise DomainError("eigenfunction residuals require delta > 0")
    if b is not None and not b > 1:
        raise DomainError(f"truncation factor b must exceed 1 (got {b})")
    if any(x <= 0 for x in test_ages):
        raise DomainError("test ages must be positive")
    if method not in ("quadrature", "closed"):
        raise ValueError(f"unknown residual method '{method}'")

    consts = constants(m, delta)
    a = consts.chi - 0.5
    q = truncation_factor(consts.chi, b) if b is not None else 1.0
    matrix = consts.truncated_matrix(q)
    lam, right, left = perron(matrix)
    weights = left if adjoint else right
    eigenvalue = lam / a

    rows = []
    for x in test_ages:
        for idx, label in enumerate(LABELS):
            expected = eigenvalue * weights[idx] / math.sqrt(x)
            if method == "closed":
                mixed = (matrix.T @ weights) if adjoint else (matrix @ weights)
                applied = mixed[idx] / (a * math.sqrt(x))
            elif adjoint:
                applied = apply_adjoint(x, label, weights, consts, b)
            else:
                applied = apply_operator(x, label, weights, consts, b)
            if expected == 0.0:
                rel = abs(applied)
            else:
                rel = abs(applied - expected) / abs(expected)
            rows.append(
                ResidualRow(
                    age=x,
                    label=label.value,
                    applied=applied,
                    expected=expected,
                    rel_residual=rel,
                )
            )

    report = ResidualReport(
        m=m,
        delta=delta,
        b=b,
        method=method,
        operator="adjoint" if adjoint else "forward",
        eigenvalue=eigenvalue,
        max_rel_residual=max(r.rel_residual for r in rows),
        rows=rows,
    )
    logger.info(
        "eigen_residual_computed",
        m=m,
        delta=delta,
        b=b,
        method=method,
        operator=report.operator,
        max_rel_residual=report.max_rel_residual,
    )
    return report


def adjoint_residual(
    m: int,
    delta: float,
    b: Optional[float],
    test_ages: Sequence[float],
    method: str = "quadrature",
) -> ResidualReport:
    return eigen_residual(m, delta, b, test_ages, method, adjoint=True)
