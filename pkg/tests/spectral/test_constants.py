import math

import numpy as np
import pytest

from src.shared.errors import DomainError, ParameterError
from src.spectral.constants import (
    Label,
    chi,
    constants,
    kernel_eval,
    left_eigenvector,
    minimal_truncation,
    pi_c,
    spectral_norm,
    spectral_norm_direct,
    spectral_report,
    truncated_spectral,
)

PARAMETER_GRID = [
    (m, delta) for m in (1, 2, 3, 5) for delta in (0.1, 0.5, 1.0, 2.0, 7.5)
]


class TestConstants:
    """The four kernel constants and the age exponent."""

    def test_m2_delta1(self):
        k = constants(2, 1.0)
        assert (k.c_OO, k.c_OY, k.c_YO, k.c_YY) == pytest.approx(
            (1.2, 1.6, 0.6, 1.2)
        )
        assert k.chi == pytest.approx(0.6)

    def test_m2_delta0(self):
        k = constants(2, 0.0)
        assert (k.c_OO, k.c_OY, k.c_YO, k.c_YY) == pytest.approx(
            (1.0, 1.5, 0.5, 1.0)
        )

    def test_m1_has_no_young_to_old_mass(self):
        assert constants(1, 0.7).c_YO == 0.0

    def test_lookup_by_label(self):
        k = constants(2, 1.0)
        assert k.c(Label.O, Label.Y) == k.c_OY
        assert k.c("Y", "O") == k.c_YO
        # the root reads the O row
        assert k.c(Label.ROOT, Label.Y) == k.c_OY

    @pytest.mark.parametrize("m, delta", [(0, 1.0), (2, -2.0), (3, -4.0)])
    def test_invalid_parameters(self, m, delta):
        with pytest.raises(ParameterError):
            constants(m, delta)

    def test_chi_range(self):
        assert chi(2, 1.0) == pytest.approx(0.6)
        assert chi(2, -1.0) == pytest.approx(1 / 3)


class TestKernel:
    """The offspring kernel and its truncation."""

    def test_hand_evaluated(self):
        k = constants(2, 1.0)
        value = kernel_eval(0.5, Label.O, 0.25, Label.O, k)
        assert value == pytest.approx(1.2 / (0.5**0.6 * 0.25**0.4))
        assert value == pytest.approx(3.16681, abs=1e-5)

    def test_equal_ages_vanish(self):
        k = constants(2, 1.0)
        for t in (Label.O, Label.Y):
            assert kernel_eval(0.3, Label.O, 0.3, t, k) == 0.0

    def test_label_must_match_relative_age(self):
        k = constants(2, 1.0)
        assert kernel_eval(0.5, Label.O, 0.7, Label.O, k) == 0.0
        assert kernel_eval(0.5, Label.O, 0.2, Label.Y, k) == 0.0
        assert kernel_eval(0.5, Label.O, 0.7, Label.Y, k) > 0

    def test_truncation(self):
        k = constants(2, 1.0)
        assert kernel_eval(0.1, Label.O, 1.7, Label.Y, k, b=16) == 0.0
        assert kernel_eval(0.1, Label.O, 1.5, Label.Y, k, b=16) > 0

    def test_homogeneity(self):
        """kappa(l x, l y) = kappa(x, y) / l."""
        k = constants(3, 0.4)
        rng = np.random.default_rng(5)
        for _ in range(200):
            x, y, lam = rng.uniform(0.01, 10, size=3)
            t = Label.O if y < x else Label.Y
            base = kernel_eval(x, Label.Y, y, t, k)
            scaled = kernel_eval(lam * x, Label.Y, lam * y, t, k)
            assert scaled == pytest.approx(base / lam, rel=1e-14)

    def test_nonpositive_age(self):
        with pytest.raises(DomainError):
            kernel_eval(0.0, Label.O, 0.5, Label.Y, constants(2, 1.0))


class TestSpectralNorm:
    """Perron root, operator norm and threshold."""

    def test_m2_delta1(self):
        norm = spectral_norm(2, 1.0)
        assert norm.lambda_M == pytest.approx(2.179796, abs=1e-6)
        assert norm.r == pytest.approx(21.79796, abs=1e-5)

    def test_m3_delta2(self):
        assert spectral_norm(3, 2.0).r == pytest.approx(28.41641, abs=1e-5)

    @pytest.mark.parametrize("m, delta", PARAMETER_GRID)
    def test_two_routes_agree(self, m, delta):
        assert spectral_norm(m, delta).r == pytest.approx(
            spectral_norm_direct(m, delta), rel=1e-12
        )

    @pytest.mark.parametrize("m, delta", PARAMETER_GRID)
    def test_threshold_is_inverse_norm(self, m, delta):
        assert pi_c(m, delta) * spectral_norm(m, delta).r == pytest.approx(
            1.0, rel=1e-12
        )

    def test_threshold_values(self):
        assert pi_c(2, 1.0) == pytest.approx(0.04587585, abs=1e-8)
        assert pi_c(3, 2.0) == pytest.approx(0.03519110, abs=1e-8)

    @pytest.mark.parametrize("delta", [0.0, -0.5, -1.9])
    def test_nonpositive_delta(self, delta):
        assert pi_c(2, delta) == 0.0
        assert math.isinf(spectral_norm(2, delta).r)
        assert math.isinf(spectral_norm_direct(2, delta))

    def test_m1_radical_vanishes(self):
        k = constants(1, 1.0)
        norm = spectral_norm(1, 1.0)
        assert norm.lambda_M == pytest.approx(k.c_OO)
        assert norm.r == pytest.approx(2 * k.c_OO / (2 * k.chi - 1))

    def test_eigenvectors(self):
        k = constants(2, 1.0)
        p = np.array(spectral_norm(2, 1.0).p)
        lam = spectral_norm(2, 1.0).lambda_M
        np.testing.assert_allclose(k.matrix() @ p, lam * p)
        q = np.array(left_eigenvector(2, 1.0))
        np.testing.assert_allclose(q @ k.matrix(), lam * q)
        assert (p > 0).all() and (q > 0).all()
        assert p.sum() == pytest.approx(1.0)


class TestTruncatedSpectral:
    """Spectrum with Y-children aged at most b times the parent."""

    def test_m2_delta1_b16(self):
        trunc = truncated_spectral(2, 1.0, 16)
        assert trunc.q == pytest.approx(0.242142, abs=1e-6)
        assert trunc.lambda_M_b == pytest.approx(1.408023, abs=1e-6)
        assert trunc.r_b == pytest.approx(14.08023, abs=1e-5)
        assert trunc.u[0] == pytest.approx(0.650645, abs=5e-6)

    def test_eigenvector_of_truncated_matrix(self):
        k = constants(3, 0.5)
        trunc = truncated_spectral(3, 0.5, 40)
        u = np.array(trunc.u)
        np.testing.assert_allclose(
            k.truncated_matrix(trunc.q) @ u, trunc.lambda_M_b * u
        )
        assert (u > 0).all()

    def test_increases_to_untruncated_norm(self):
        r = spectral_norm(2, 1.0).r
        values = [
            truncated_spectral(2, 1.0, b).r_b for b in (2, 16, 256, 4096)
        ]
        assert all(a < b for a, b in zip(values, values[1:]))
        assert values[-1] < r
        assert truncated_spectral(2, 1.0, 1e300).r_b == pytest.approx(
            r, rel=1e-6
        )

    def test_m1_independent_of_b(self):
        k = constants(1, 2.0)
        for b in (2, 100):
            assert truncated_spectral(1, 2.0, b).lambda_M_b == pytest.approx(
                k.c_OO
            )

    def test_requires_b_above_one(self):
        with pytest.raises(DomainError):
            truncated_spectral(2, 1.0, 1.0)

    def test_requires_positive_delta(self):
        with pytest.raises(DomainError):
            truncated_spectral(2, 0.0, 16)


class TestMinimalTruncation:
    def test_crosses_threshold(self):
        b = minimal_truncation(0.06, 2, 1.0)
        assert b > 1
        assert 0.06 * truncated_spectral(2, 1.0, b).r_b > 1
        assert 0.06 * truncated_spectral(2, 1.0, b * (1 - 1e-6)).r_b <= 1

    def test_every_b_works_far_above_threshold(self):
        assert minimal_truncation(0.9, 2, 1.0) == 1.0

    def test_below_threshold(self):
        with pytest.raises(DomainError):
            minimal_truncation(0.04, 2, 1.0)


class TestSpectralReport:
    def test_untruncated_fields(self):
        report = spectral_report(2, 1.0)
        assert report.pi_c == pytest.approx(1 / report.r)
        assert report.b is None and report.r_b is None

    def test_truncated_fields(self):
        report = spectral_report(2, 1.0, 16)
        assert report.r_b == pytest.approx(14.08023, abs=1e-5)
        assert report.u_O_b + report.u_Y_b == pytest.approx(1.0)

    def test_nonpositive_delta(self):
        report = spectral_report(2, -1.0)
        assert report.pi_c == 0.0
        assert math.isinf(report.r)
