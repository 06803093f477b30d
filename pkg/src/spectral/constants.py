"""
Closed-form spectral quantities of the mean offspring operator.

The operator acts on functions of a type ``(x, s)`` with age ``x > 0`` and
label ``s`` in {O, Y}. Its kernel is

    kappa((x, s), (y, t)) = c_st * 1{y < x, t = O or y > x, t = Y}
                            / (max(x, y)**chi * min(x, y)**(1 - chi))

and ``h(x, s) = u_s / sqrt(x)`` is an eigenfunction whenever ``u`` is a
positive eigenvector of the 2x2 matrix of the ``c_st``.
"""

import enum
import math
from typing import Optional

import numpy as np
from pydantic import BaseModel

from src.shared.errors import DomainError, ParameterError


class Label(str, enum.Enum):
    ROOT = "root"
    O = "O"  # noqa: E741
    Y = "Y"


def _row(label: Label | str) -> int:
    label = Label(label)
    return 1 if label == Label.Y else 0


def check_parameters(m: int, delta: float) -> None:
    if m < 1:
        raise ParameterError(f"m must be at least 1 (got {m})")
    if not delta > -m:
        raise ParameterError(
            f"delta must exceed -m (got delta={delta}, m={m})"
        )


def chi(m: int, delta: float) -> float:
    check_parameters(m, delta)
    return (m + delta) / (2 * m + delta)


class KernelConstants(BaseModel):
    m: int
    delta: float
    chi: float
    c_OO: float
    c_OY: float
    c_YO: float
    c_YY: float

    def matrix(self) -> np.ndarray:
        return np.array([[self.c_OO, self.c_OY], [self.c_YO, self.c_YY]])

    def truncated_matrix(self, q: float) -> np.ndarray:
        return np.array(
            [[self.c_OO, self.c_OY * q], [self.c_YO, self.c_YY * q]]
        )

    def c(self, s: Label | str, t: Label | str) -> float:
        rows = ((self.c_OO, self.c_OY), (self.c_YO, self.c_YY))
        return rows[_row(s)][_row(t)]


def constants(m: int, delta: float) -> KernelConstants:
    check_parameters(m, delta)
    denom = 2 * m + delta
    return KernelConstants(
        m=m,
        delta=delta,
        chi=(m + delta) / denom,
        c_OO=m * (m + delta) / denom,
        c_OY=m * (m + 1 + delta) / denom,
        c_YO=(m - 1) * (m + delta) / denom,
        c_YY=m * (m + delta) / denom,
    )


def kernel_eval(
    x: float,
    s: Label | str,
    y: float,
    t: Label | str,
    consts: KernelConstants,
    b: Optional[float] = None,
) -> float:
    """
    The kernel kappa (or its truncation kappa_b when ``b`` is given).

    The root label is evaluated with the O row.
    """
    if x <= 0 or y <= 0:
        raise DomainError("ages must be positive")
    t = Label(t)
    if t == Label.O:
        if not y < x:
            return 0.0
        big, small = x, y
    else:
        if not y > x:
            return 0.0
        if b is not None and y > b * x:
            return 0.0
        big, small = y, x
    c = consts.c(s, t)
    return c / (big**consts.chi * small ** (1.0 - consts.chi))


class SpectralNorm(BaseModel):
    lambda_M: float
    r: float
    p: tuple[float, float]


def spectral_norm(m: int, delta: float) -> SpectralNorm:
    """
    Perron root of the c-matrix, the operator norm ``r`` and ``p``.

    ``r`` is infinite for delta <= 0, where ``1 / sqrt(x)`` is not
    integrable against the kernel.
    """
    k = constants(m, delta)
    radical = math.sqrt(k.c_OY * k.c_YO)
    lam = k.c_OO + radical
    p_o, p_y = math.sqrt(k.c_OY), math.sqrt(k.c_YO)
    total = p_o + p_y
    r = 2 * lam / (2 * k.chi - 1) if delta > 0 else math.inf
    return SpectralNorm(lambda_M=lam, r=r, p=(p_o / total, p_y / total))


def spectral_norm_direct(m: int, delta: float) -> float:
    """The operator norm written directly in (m, delta)."""
    check_parameters(m, delta)
    if delta <= 0:
        return math.inf
    root = math.sqrt(m * (m - 1) * (m + delta) * (m + 1 + delta))
    return 2 * (m * (m + delta) + root) / delta


def left_eigenvector(m: int, delta: float) -> tuple[float, float]:
    """Positive left Perron vector of the c-matrix, summing to one."""
    k = constants(m, delta)
    q_o, q_y = math.sqrt(k.c_YO), math.sqrt(k.c_OY)
    total = q_o + q_y
    return q_o / total, q_y / total


def pi_c(m: int, delta: float) -> float:
    """Critical percolation threshold: zero for delta <= 0."""
    check_parameters(m, delta)
    if delta <= 0:
        return 0.0
    root = math.sqrt(m * (m - 1) * (m + delta) * (m + 1 + delta))
    return delta / (2 * (m * (m + delta) + root))


class TruncatedSpectrum(BaseModel):
    b: float
    q: float
    lambda_M_b: float
    r_b: float
    u: tuple[float, float]


def truncation_factor(chi_value: float, b: float) -> float:
    return 1.0 - b ** (0.5 - chi_value)


def truncated_spectral(m: int, delta: float, b: float) -> TruncatedSpectrum:
    """Spectrum of the operator whose Y-children are aged at most b * x."""
    if delta <= 0:
        raise DomainError("the truncated spectrum requires delta > 0")
    if not b > 1:
        raise DomainError(f"truncation factor b must exceed 1 (got {b})")
    k = constants(m, delta)
    q = truncation_factor(k.chi, b)
    if k.c_YO == 0.0:
        # m = 1: c_YY = c_OO > c_YY * q, the Perron vector is (1, 0)
        return TruncatedSpectrum(
            b=b,
            q=q,
            lambda_M_b=k.c_OO,
            r_b=k.c_OO / (k.chi - 0.5),
            u=(1.0, 0.0),
        )
    trace = k.c_OO + k.c_YY * q
    det = k.c_OO * k.c_YY * q - k.c_OY * k.c_YO * q
    lam = 0.5 * (trace + math.sqrt(max(trace * trace - 4 * det, 0.0)))
    u_o = k.c_OY * q / (lam + k.c_OY * q - k.c_OO)
    return TruncatedSpectrum(
        b=b,
        q=q,
        lambda_M_b=lam,
        r_b=lam / (k.chi - 0.5),
        u=(u_o, 1.0 - u_o),
    )


def minimal_truncation(
    pi: float, m: int, delta: float, rel_tol: float = 1e-12
) -> float:
    """
    Smallest truncation factor b with ``pi * r_b > 1``.

    r_b increases in b towards r, so such a b exists exactly when
    pi > pi_c. Returns 1.0 when every b > 1 qualifies.
    """
    if delta <= 0:
        raise DomainError("truncation analysis requires delta > 0")
    if not pi > pi_c(m, delta):
        raise DomainError(
            f"pi={pi} does not exceed pi_c={pi_c(m, delta)}; no b qualifies"
        )

    def excess(b: float) -> float:
        return pi * truncated_spectral(m, delta, b).r_b - 1.0

    k = constants(m, delta)
    if pi * k.c_OO / (k.chi - 0.5) > 1.0:
        return 1.0

    hi = 2.0
    while excess(hi) <= 0:
        hi *= hi
        if math.isinf(hi):
            raise DomainError(
                f"pi={pi} is too close to pi_c to resolve a truncation"
            )
    lo = 1.0
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi


class SpectralReport(BaseModel):
    m: int
    delta: float
    chi: float
    c_OO: float
    c_OY: float
    c_YO: float
    c_YY: float
    lambda_M: float
    r: float
    pi_c: float
    p_O: float
    p_Y: float
    b: Optional[float] = None
    q: Optional[float] = None
    lambda_M_b: Optional[float] = None
    r_b: Optional[float] = None
    u_O_b: Optional[float] = None
    u_Y_b: Optional[float] = None


def spectral_report(
    m: int, delta: float, b: Optional[float] = None
) -> SpectralReport:
    k = constants(m, delta)
    norm = spectral_norm(m, delta)
    fields = dict(
        m=m,
        delta=delta,
        chi=k.chi,
        c_OO=k.c_OO,
        c_OY=k.c_OY,
        c_YO=k.c_YO,
        c_YY=k.c_YY,
        lambda_M=norm.lambda_M,
        r=norm.r,
        pi_c=pi_c(m, delta),
        p_O=norm.p[0],
        p_Y=norm.p[1],
    )
    if b is not None:
        trunc = truncated_spectral(m, delta, b)
        fields.update(
            b=b,
            q=trunc.q,
            lambda_M_b=trunc.lambda_M_b,
            r_b=trunc.r_b,
            u_O_b=trunc.u[0],
            u_Y_b=trunc.u[1],
        )
    return SpectralReport(**fields)
