import numpy as np
import pytest

from src.shared.errors import DomainError
from src.spectral.constants import spectral_norm, truncated_spectral
from src.spectral.quadrature import (
    adjoint_residual,
    eigen_residual,
    perron,
)

TEST_AGES = [1e-3, 1e-1, 1.0, 10.0]


class TestPerron:
    def test_positive_matrix(self):
        matrix = np.array([[1.2, 1.6], [0.6, 1.2]])
        lam, right, left = perron(matrix)
        np.testing.assert_allclose(matrix @ right, lam * right)
        np.testing.assert_allclose(left @ matrix, lam * left)
        assert right.sum() == pytest.approx(1.0)
        assert left.sum() == pytest.approx(1.0)

    def test_triangular_matrix(self):
        """A vanishing lower-left entry still gives a valid pair."""
        matrix = np.array([[2.0, 1.0], [0.0, 0.5]])
        lam, right, _ = perron(matrix)
        assert lam == pytest.approx(2.0)
        np.testing.assert_allclose(right, [1.0, 0.0])


class TestEigenResidual:
    """Eigenfunction identity of the (truncated) offspring operator."""

    def test_closed_form_is_exact(self):
        report = eigen_residual(2, 1.0, 16, TEST_AGES, method="closed")
        assert report.max_rel_residual < 1e-12
        assert report.eigenvalue == pytest.approx(
            truncated_spectral(2, 1.0, 16).r_b
        )

    def test_truncated_quadrature(self):
        report = eigen_residual(2, 1.0, 16, TEST_AGES)
        assert report.max_rel_residual < 1e-8
        assert len(report.rows) == 2 * len(TEST_AGES)
        assert report.operator == "forward"

    def test_untruncated_quadrature(self):
        report = eigen_residual(2, 1.0, None, TEST_AGES)
        assert report.eigenvalue == pytest.approx(spectral_norm(2, 1.0).r)
        assert report.max_rel_residual < 1e-8

    def test_m1(self):
        report = eigen_residual(1, 1.5, 16, [0.5, 2.0])
        assert report.max_rel_residual < 1e-8

    def test_rows_carry_expected_values(self):
        report = eigen_residual(3, 2.0, 8, [0.25], method="closed")
        trunc = truncated_spectral(3, 2.0, 8)
        row = report.rows[0]
        assert row.label == "O"
        # u_O / sqrt(x) times r_b at x = 1/4
        assert row.expected == pytest.approx(trunc.r_b * trunc.u[0] * 2.0)

    def test_nonpositive_delta_rejected(self):
        with pytest.raises(DomainError):
            eigen_residual(2, 0.0, 16, TEST_AGES)

    def test_bad_inputs(self):
        with pytest.raises(DomainError):
            eigen_residual(2, 1.0, 0.5, TEST_AGES)
        with pytest.raises(DomainError):
            eigen_residual(2, 1.0, 16, [0.0])
        with pytest.raises(ValueError):
            eigen_residual(2, 1.0, 16, TEST_AGES, method="mc")


class TestAdjointResidual:
    """The transposed identity with the left Perron vector."""

    def test_truncated(self):
        report = adjoint_residual(2, 1.0, 16, TEST_AGES)
        assert report.operator == "adjoint"
        assert report.max_rel_residual < 1e-8

    def test_untruncated(self):
        report = adjoint_residual(3, 0.5, None, [0.01, 1.0])
        assert report.max_rel_residual < 1e-8

    def test_same_eigenvalue_as_forward(self):
        forward = eigen_residual(2, 1.0, 16, [1.0], method="closed")
        adjoint = adjoint_residual(2, 1.0, 16, [1.0], method="closed")
        assert adjoint.eigenvalue == pytest.approx(forward.eigenvalue)
        assert adjoint.max_rel_residual < 1e-12
