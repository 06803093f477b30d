import numpy as np
import pytest

from src.ppt.spine import (
    SPINE_COLUMNS,
    SpineParams,
    empirical_vs_analytic_report,
    expected_log_ratio,
    ks_statistic,
    lyapunov_drift,
    ratio_cdf,
    sample_ratio,
    simulate_spine,
    stationary,
    transition_matrix,
)
from src.shared.errors import DomainError, ParameterError
from src.shared.rng import make_rng
from src.spectral.constants import Label

CHI = 0.6  # m = 2, delta = 1


class TestLabelChain:
    """Tilted label transitions for m = 2, delta = 1, b = 16."""

    def test_transition_values(self):
        p = transition_matrix(2, 1.0, 16)
        assert p[0, 0] == pytest.approx(0.852259, abs=1e-6)
        assert p[1, 0] == pytest.approx(0.793634, abs=1e-6)
        np.testing.assert_allclose(p.sum(axis=1), [1.0, 1.0])

    def test_supercritical_inequality(self):
        p = transition_matrix(2, 1.0, 16)
        assert p[0, 0] + p[1, 0] == pytest.approx(1.645893, abs=1e-6)

    def test_stationary_law(self):
        upsilon = stationary(2, 1.0, 16)
        assert upsilon == pytest.approx((0.843058, 0.156942), abs=1e-6)
        p = transition_matrix(2, 1.0, 16)
        np.testing.assert_allclose(np.array(upsilon) @ p, upsilon)

    def test_m1_is_absorbed_in_old(self):
        np.testing.assert_array_equal(
            transition_matrix(1, 1.0, 16), [[1.0, 0.0], [1.0, 0.0]]
        )
        assert stationary(1, 1.0, 16) == (1.0, 0.0)

    def test_params_model(self):
        params = SpineParams(m=2, delta=1.0, b=16)
        assert params.chi == pytest.approx(CHI)
        assert params.stationary_law == pytest.approx(
            (0.843058, 0.156942), abs=1e-6
        )
        np.testing.assert_allclose(params.transition.sum(axis=1), 1.0)

    @pytest.mark.parametrize(
        "fields",
        [
            {"m": 2, "delta": 1.0, "b": 1.0},
            {"m": 2, "delta": 0.0, "b": 16},
            {"m": 2, "delta": -3.0, "b": 16},
        ],
    )
    def test_params_invalid(self, fields):
        with pytest.raises(ValueError):
            SpineParams(**fields)

    def test_nonpositive_delta(self):
        with pytest.raises(DomainError):
            transition_matrix(2, -0.5, 16)


class TestAgeRatios:
    """Closed-form laws of the per-step age ratio."""

    def test_expected_logs(self):
        assert expected_log_ratio(Label.O, CHI, 16) == pytest.approx(-10.0)
        assert expected_log_ratio(Label.Y, CHI, 16) == pytest.approx(
            1.322370, abs=1e-6
        )

    def test_both_forms_agree(self):
        for b in (2.0, 16.0, 1e4):
            assert expected_log_ratio(
                Label.Y, CHI, b, simplified=False
            ) == pytest.approx(expected_log_ratio(Label.Y, CHI, b))

    def test_supports(self):
        rng = make_rng(0)
        old = sample_ratio(Label.O, CHI, 16, rng, size=5000)
        young = sample_ratio(Label.Y, CHI, 16, rng, size=5000)
        assert ((old > 0) & (old <= 1)).all()
        assert ((young > 1) & (young <= 16)).all()

    def test_scalar_draw(self):
        value = sample_ratio("Y", CHI, 16, make_rng(1))
        assert 1 < float(value) <= 16

    def test_cdf_endpoints(self):
        np.testing.assert_allclose(
            ratio_cdf(Label.O, np.array([0.0, 1.0, 2.0]), CHI, 16),
            [0.0, 1.0, 1.0],
        )
        np.testing.assert_allclose(
            ratio_cdf(Label.Y, np.array([0.5, 1.0, 16.0]), CHI, 16),
            [0.0, 0.0, 1.0],
            atol=1e-12,
        )

    def test_samples_follow_closed_cdf(self):
        rng = make_rng(4)
        for label in (Label.O, Label.Y):
            samples = sample_ratio(label, CHI, 16, rng, size=5000)
            result = ks_statistic(label, samples, CHI, 16)
            assert result.samples == 5000
            assert result.pvalue > 1e-4

    def test_ks_detects_wrong_law(self):
        samples = sample_ratio(Label.Y, CHI, 16, make_rng(4), size=1000)
        assert ks_statistic(Label.O, samples, CHI, 16).statistic > 0.9

    def test_requires_chi_above_half(self):
        with pytest.raises(DomainError):
            sample_ratio(Label.O, 0.5, 16, make_rng(0))
        with pytest.raises(ParameterError):
            expected_log_ratio(Label.Y, CHI, 1.0)


class TestDrift:
    def test_value(self):
        assert lyapunov_drift(2, 1.0, 16) == pytest.approx(-8.223035, abs=1e-6)

    @pytest.mark.parametrize("b", [1.5, 16, 1e3, 1e8])
    def test_negative_for_finite_b(self, b):
        assert lyapunov_drift(2, 1.0, b) < 0
        assert lyapunov_drift(3, 0.5, b) < 0

    def test_m1(self):
        # only O steps, E log R(O) = -1 / (chi - 1/2) with chi = 2/3
        assert lyapunov_drift(1, 1.0, 16) == pytest.approx(-6.0)


class TestSimulateSpine:
    def test_shape_and_start(self):
        trajectory = simulate_spine(2, 1.0, 16, 50, seed=1, log_x0=-2.0)
        assert trajectory.steps == 50
        assert trajectory.labels[0] == 0
        assert trajectory.log_ages[0] == -2.0
        assert set(np.unique(trajectory.labels)) <= {0, 1}

    def test_steps_follow_labels(self):
        """O steps lower the log-age, Y steps raise it."""
        trajectory = simulate_spine(2, 1.0, 16, 2000, seed=2)
        moves = np.diff(trajectory.log_ages)
        new_labels = trajectory.labels[1:]
        assert (moves[new_labels == 0] <= 0).all()
        assert (moves[new_labels == 1] > 0).all()

    def test_start_in_young(self):
        trajectory = simulate_spine(2, 1.0, 16, 10, seed=0, start_label="Y")
        assert trajectory.labels[0] == 1

    def test_zero_steps(self):
        trajectory = simulate_spine(2, 1.0, 16, 0, seed=0)
        assert trajectory.steps == 0
        assert trajectory.estimate is None

    def test_deterministic(self):
        a = simulate_spine(2, 1.0, 16, 500, seed=9)
        b = simulate_spine(2, 1.0, 16, 500, seed=9)
        np.testing.assert_array_equal(a.log_ages, b.log_ages)

    def test_frequencies_and_drift(self):
        trajectory = simulate_spine(2, 1.0, 16, 100_000, seed=3)
        freq_o, freq_y = trajectory.label_frequencies()
        assert freq_o == pytest.approx(0.843058, abs=0.01)
        assert freq_o + freq_y == pytest.approx(1.0)
        assert trajectory.estimate == pytest.approx(-8.223035, abs=0.41)

    def test_m1_never_leaves_old(self):
        trajectory = simulate_spine(1, 1.0, 16, 1000, seed=0)
        assert (trajectory.labels == 0).all()

    def test_records(self):
        records = simulate_spine(2, 1.0, 16, 5, seed=0).records()
        assert len(records) == 6
        assert list(records[0]) == SPINE_COLUMNS
        assert records[0]["label"] == "O"

    def test_negative_steps(self):
        with pytest.raises(ValueError):
            simulate_spine(2, 1.0, 16, -1, seed=0)


class TestSpineReport:
    """Simulated spine against its closed forms."""

    def test_m2_delta1(self):
        report = empirical_vs_analytic_report(2, 1.0, 16, 100_000, seed=0)
        assert report.applicable
        checks = {c.name: c for c in report.checks}
        assert set(checks) == {
            "stationary_O",
            "mean_log_ratio_O",
            "mean_log_ratio_Y",
            "drift",
            "p_OO_plus_p_YO",
        }
        assert checks["stationary_O"].passed
        assert checks["drift"].passed
        assert checks["p_OO_plus_p_YO"].passed
        assert checks["p_OO_plus_p_YO"].analytic == pytest.approx(
            1.645893, abs=1e-6
        )
        for name in ("mean_log_ratio_O", "mean_log_ratio_Y"):
            check = checks[name]
            # the check itself uses 3 standard errors
            assert abs(check.empirical - check.analytic) <= 2 * check.tolerance
        assert report.records()[0]["name"] == "stationary_O"

    def test_not_applicable_for_nonpositive_delta(self):
        report = empirical_vs_analytic_report(2, 0.0, 16, 1000)
        assert not report.applicable
        assert report.reason.startswith("not applicable")
        assert report.checks == []

    def test_invalid_inputs(self):
        with pytest.raises(ParameterError):
            empirical_vs_analytic_report(2, 1.0, 1.0)
        with pytest.raises(ValueError):
            empirical_vs_analytic_report(2, 1.0, 16, budget=1)
