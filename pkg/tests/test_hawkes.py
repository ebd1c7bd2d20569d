"""Hawkes ground truth: exact intensities, closed-form NLL, thinning simulation."""

import numpy as np
import pytest

from decoupled_tpp.data import Sequence
from decoupled_tpp.evaluation import exp1_cdf, ks_critical_value, ks_statistic
from decoupled_tpp.hawkes import (
    HawkesSpec,
    SimConfig,
    ThinningConfig,
    analytic_nll,
    ground_compensator,
    ground_intensity,
    intensity,
    rescaled_gaps,
    sample_next_event,
    sample_spec,
    simulate,
    simulate_dataset,
)


def single_mark_spec(v=0.5, a=0.8, b=1.0):
    return HawkesSpec(np.array([v]), np.array([[a]]), np.array([[b]]))


def seq_of(times, marks=None, t_end=None):
    times = np.asarray(times, dtype=float)
    marks = np.zeros(len(times), dtype=int) if marks is None else np.asarray(marks)
    return Sequence(times, marks, float(times[-1] if t_end is None else t_end))


class TestIntensity:
    def test_empty_history_gives_baseline(self):
        spec = single_mark_spec()
        assert intensity(spec, seq_of([5.0]), 1.0, 0) == pytest.approx(0.5)

    def test_kernel_value_just_after_event(self):
        spec = single_mark_spec()
        # kernel at 0+ is alpha*beta = 0.8, so v + 0.8 = 1.3
        assert intensity(spec, seq_of([1.0]), 1.0 + 1e-12, 0) == pytest.approx(1.3)

    def test_kernel_halves_after_half_life(self):
        spec = single_mark_spec()
        t = 1.0 + np.log(2.0) / 1.0
        assert intensity(spec, seq_of([1.0]), t, 0) == pytest.approx(0.9)

    def test_history_is_strict(self):
        spec = single_mark_spec()
        assert intensity(spec, seq_of([1.0]), 1.0, 0) == pytest.approx(0.5)

    def test_rectified_spec_clamps_at_zero(self):
        spec = HawkesSpec(np.array([0.1, 0.1]), np.array([[0.2, -0.9], [0.0, 0.2]]), np.full((2, 2), 2.0))
        lam = intensity(spec, seq_of([1.0], [1]), 1.0 + 1e-9, 0)
        assert lam == 0.0
        assert ground_intensity(spec, seq_of([1.0], [1]), 1.0 + 1e-9) >= 0.0


class TestAnalyticNll:
    def test_unit_rate_poisson_single_event(self):
        spec = HawkesSpec(np.array([1.0]), np.array([[0.0]]), np.array([[1.0]]))
        assert analytic_nll(spec, seq_of([0.5], t_end=1.0)) == pytest.approx(1.0)

    def test_homogeneous_poisson_formula(self):
        c, horizon = 1.7, 6.0
        spec = HawkesSpec(np.array([c]), np.array([[0.0]]), np.array([[1.0]]))
        seq = seq_of([0.4, 1.1, 2.0, 5.5], t_end=horizon)
        assert analytic_nll(spec, seq) == pytest.approx(c * horizon - 4 * np.log(c))

    def test_compensator_matches_dense_quadrature(self):
        rng = np.random.default_rng(5)
        spec = sample_spec(2, rng)
        seq = simulate(spec, SimConfig(horizon=6.0, seed=2))
        # piecewise integration between events keeps the integrand smooth
        edges = np.concatenate([[0.0], seq.times, [seq.t_end]])
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            if b <= a:
                continue
            grid = np.linspace(a, b, 20001)
            vals = [ground_intensity(spec, seq, float(t)) if t > a else ground_intensity(spec, seq, a + 1e-12) for t in grid]
            total += np.trapezoid(vals, grid)
        assert total == pytest.approx(ground_compensator(spec, seq, seq.t_end), abs=1e-5)

    def test_zero_intensity_event_gives_infinite_nll(self):
        spec = HawkesSpec(np.array([0.0, 1.0]), np.zeros((2, 2)), np.ones((2, 2)))
        assert analytic_nll(spec, seq_of([1.0], [0], t_end=2.0)) == np.inf

    def test_first_event_policy_options(self):
        spec = single_mark_spec()
        seq = seq_of([1.0, 2.0], t_end=3.0)
        full = analytic_nll(spec, seq)
        trimmed = analytic_nll(spec, seq, skip_first_event=True, integrate_from_first=True)
        expected_drop = -np.log(0.5) + ground_compensator(spec, seq, 1.0)
        assert full - trimmed == pytest.approx(expected_drop)


class TestSimulate:
    def test_poisson_count_concentration(self):
        spec = HawkesSpec(np.array([1.2, 0.8]), np.zeros((2, 2)), np.ones((2, 2)))
        seq = simulate(spec, SimConfig(horizon=1000.0, seed=7))
        n = len(seq)
        assert abs(n - 2000) < 3 * np.sqrt(2000)

    def test_seeded_determinism(self):
        spec = sample_spec(3, np.random.default_rng(1))
        a = simulate(spec, SimConfig(horizon=50.0, seed=11))
        b = simulate(spec, SimConfig(horizon=50.0, seed=11))
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.marks, b.marks)

    def test_empirical_rate_matches_stationary_rate(self):
        spec = sample_spec(4, np.random.default_rng(2))
        seq = simulate(spec, SimConfig(horizon=10_000.0, seed=3))
        rates = np.array([(seq.marks == k).sum() for k in range(4)]) / seq.t_end
        expected = spec.stationary_rate()
        assert np.all(np.abs(rates - expected) / expected < 0.05)

    def test_truncation_flag(self):
        spec = HawkesSpec(np.array([5.0]), np.array([[0.0]]), np.array([[1.0]]))
        with pytest.warns(UserWarning, match="truncated"):
            seq = simulate(spec, SimConfig(horizon=100.0, max_events=10, seed=0))
        assert seq.truncated and len(seq) == 10
        assert seq.t_end == seq.times[-1]

    def test_time_rescaling_ks(self):
        spec = sample_spec(3, np.random.default_rng(4))
        seq = simulate(spec, SimConfig(horizon=2000.0, seed=5))
        gaps = rescaled_gaps(spec, seq)
        assert ks_statistic(gaps, exp1_cdf) < ks_critical_value(gaps.size, alpha=0.01)

    def test_true_spec_beats_perturbed_on_mean_nll(self):
        spec = sample_spec(3, np.random.default_rng(6))
        ds = simulate_dataset(spec, 40, SimConfig(horizon=60.0, seed=8))
        perturbed = HawkesSpec(spec.baseline * 1.5, spec.alpha * 1.5, spec.beta * 1.5)
        true_nll = np.mean([analytic_nll(spec, s) for s in ds.sequences])
        pert_nll = np.mean([analytic_nll(perturbed, s) for s in ds.sequences])
        assert true_nll <= pert_nll

    def test_dataset_simulation_is_deterministic(self):
        spec = sample_spec(2, np.random.default_rng(9))
        d1 = simulate_dataset(spec, 5, SimConfig(horizon=20.0, seed=13))
        d2 = simulate_dataset(spec, 5, SimConfig(horizon=20.0, seed=13))
        for a, b in zip(d1.sequences, d2.sequences):
            np.testing.assert_array_equal(a.times, b.times)


class TestThinningSampler:
    def test_constant_intensity_ks_against_exponential(self):
        rng = np.random.default_rng(0)
        draws = []
        for _ in range(10_000):
            out = sample_next_event(lambda t: 1.0, 0.0, rng, ThinningConfig(t_max=200.0))
            assert out is not None
            draws.append(out[0])
        assert ks_statistic(draws, exp1_cdf) < ks_critical_value(10_000, alpha=0.01)

    def test_bound_factor_below_one_is_flagged(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError, match="upper bound"):
            for _ in range(50):
                sample_next_event(
                    lambda t: 1.0, 0.0, rng, ThinningConfig(bound_factor=0.5, t_max=100.0)
                )

    def test_horizon_censoring_returns_none(self):
        rng = np.random.default_rng(2)
        out = sample_next_event(lambda t: 1e-9, 0.0, rng, ThinningConfig(t_max=1.0))
        assert out is None

    def test_marks_drawn_from_mark_fn(self):
        rng = np.random.default_rng(3)
        out = sample_next_event(
            lambda t: 2.0,
            0.0,
            rng,
            ThinningConfig(t_max=50.0),
            mark_fn=lambda t: np.array([0.0, 1.0]),
        )
        assert out is not None and out[1] == 1


class TestSpecValidation:
    def test_nonstationary_rejected(self):
        with pytest.raises(ValueError, match="spectral radius"):
            HawkesSpec(np.array([0.1]), np.array([[1.1]]), np.array([[1.0]]))

    def test_negative_decay_rejected(self):
        with pytest.raises(ValueError, match="decays"):
            HawkesSpec(np.array([0.1]), np.array([[0.5]]), np.array([[-1.0]]))

    def test_rescaled_preserves_branching_and_scales_rates(self):
        spec = sample_spec(2, np.random.default_rng(0))
        scaled = spec.rescaled(3.0)
        np.testing.assert_allclose(scaled.alpha, spec.alpha)
        np.testing.assert_allclose(scaled.baseline, spec.baseline * 3.0)
        np.testing.assert_allclose(scaled.stationary_rate(), spec.stationary_rate() * 3.0)

    def test_roundtrip_dict(self):
        spec = sample_spec(3, np.random.default_rng(1))
        again = HawkesSpec.from_dict(spec.to_dict())
        np.testing.assert_allclose(again.alpha, spec.alpha)
