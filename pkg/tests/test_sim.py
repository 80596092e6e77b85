import math

import numpy as np
import pytest

from mvjump.analytic import beta_from_target_mean, constant_policy_moments, solve
from mvjump.errors import NonFinite
from mvjump.model import Curve, JumpMark, MarketModel
from mvjump.policy import FeedbackPolicy
from mvjump.sim import (
    McEstimate,
    SimConfig,
    monte_carlo,
    sample_paths,
    simulate_path,
    terminal_wealth,
    worker_count,
)

from conftest import fixture_a


def _optimal_a():
    m = fixture_a()
    return m, FeedbackPolicy.optimal(solve(m, 1.0, beta_from_target_mean(m, 1.2)))


class TestSimConfig:
    def test_scheme_aliases(self):
        assert SimConfig(10, 0.01, 1, "euler-poisson-count").scheme == "euler"
        assert SimConfig(10, 0.01, 1, "exact-jump-times").scheme == "exact"

    @pytest.mark.parametrize(
        "kw", [dict(n_paths=0), dict(dt=0.0), dict(seed=-1), dict(scheme="milstein")]
    )
    def test_rejects(self, kw):
        args = dict(n_paths=10, dt=0.01, seed=1, scheme="euler")
        args.update(kw)
        with pytest.raises(ValueError):
            SimConfig(**args)

    def test_dt_larger_than_horizon(self):
        with pytest.raises(ValueError):
            SimConfig(10, 2.0, 1).n_steps(1.0)


def test_zero_policy_is_deterministic_bond_growth():
    m = fixture_a()
    est = monte_carlo(m, FeedbackPolicy.zero(), SimConfig(500, 1e-2, 3))
    assert est.mean == pytest.approx(math.exp(0.05), abs=1e-14)
    assert est.variance == 0.0


def test_deterministic_drift_only_market():
    m = MarketModel(
        T=1.0, x0=1.0, rho=Curve.constant(0.0), mu=Curve.constant(0.1), sigma=Curve.constant(0.0)
    )
    x = terminal_wealth(m, FeedbackPolicy.constant(1.0), SimConfig(16, 1e-3, 0))
    np.testing.assert_allclose(x, 1.1, atol=1e-12)


def test_single_path_matches_batch_bitwise():
    m, pol = _optimal_a()
    cfg = SimConfig(5000, 1e-2, 11)
    batch = terminal_wealth(m, pol, cfg, workers=1)
    for p in (0, 2047, 2048, 4999):
        assert simulate_path(m, pol, cfg, p) == batch[p]


def test_worker_count_does_not_change_results(monkeypatch):
    m, pol = _optimal_a()
    cfg = SimConfig(5000, 1e-2, 11)
    a = terminal_wealth(m, pol, cfg, workers=1)
    b = terminal_wealth(m, pol, cfg, workers=3)
    assert a.tobytes() == b.tobytes()
    monkeypatch.setenv("MVJUMP_THREADS", "2")
    assert worker_count() == 2


def test_seed_changes_paths():
    m, pol = _optimal_a()
    a = terminal_wealth(m, pol, SimConfig(100, 1e-2, 1))
    b = terminal_wealth(m, pol, SimConfig(100, 1e-2, 2))
    assert not np.array_equal(a, b)


def test_jump_compensation_keeps_constant_policy_unbiased():
    # pure-jump noise with large marks: mean must match the compensated drift
    m = MarketModel(
        T=1.0,
        x0=1.0,
        rho=Curve.constant(0.05),
        mu=Curve.constant(0.15),
        sigma=Curve.constant(0.01),
        marks=(JumpMark(Curve.constant(0.5), 2.0), JumpMark(Curve.constant(-0.3), 1.0)),
    )
    mean, var = constant_policy_moments(m, 1.0)
    for scheme in ("euler", "exact"):
        est = monte_carlo(m, FeedbackPolicy.constant(1.0), SimConfig(20_000, 1e-2, 5, scheme))
        assert abs(est.mean - mean) < 4 * est.se_mean, scheme
        assert abs(est.variance - var) < 4 * est.se_variance, scheme


def test_schemes_agree_under_optimal_policy():
    m, pol = _optimal_a()
    e = monte_carlo(m, pol, SimConfig(20_000, 1e-2, 7, "euler"))
    x = monte_carlo(m, pol, SimConfig(20_000, 1e-2, 7, "exact"))
    assert abs(e.mean - x.mean) < 4 * math.hypot(e.se_mean, x.se_mean)
    assert abs(e.variance - x.variance) < 4 * math.hypot(e.se_variance, x.se_variance)


def test_exact_scheme_is_deterministic():
    m, pol = _optimal_a()
    cfg = SimConfig(300, 1e-2, 9, "exact")
    assert terminal_wealth(m, pol, cfg).tobytes() == terminal_wealth(m, pol, cfg).tobytes()
    assert simulate_path(m, pol, cfg, 123) == terminal_wealth(m, pol, cfg)[123]


def test_non_finite_wealth_reports_path():
    m = fixture_a()

    def pol(t, X):
        # quadratic feedback with a huge gain overflows within two steps
        return 1e200 * (1.0 + X * X)

    with pytest.raises(NonFinite) as info:
        terminal_wealth(m, pol, SimConfig(10, 0.1, 0))
    assert info.value.path_index is not None


def test_sample_paths_shapes_and_endpoints():
    m, pol = _optimal_a()
    cfg = SimConfig(50, 1e-2, 4)
    times, X = sample_paths(m, pol, cfg, [0, 50, 100])
    np.testing.assert_allclose(times, [0.0, 0.5, 1.0])
    assert X.shape == (50, 3)
    np.testing.assert_array_equal(X[:, 0], 1.0)
    np.testing.assert_array_equal(X[:, 2], terminal_wealth(m, pol, cfg))
    with pytest.raises(ValueError):
        sample_paths(m, pol, cfg, [101])


class TestMcEstimate:
    def test_moments(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        est = McEstimate.from_samples(x, 0)
        assert est.mean == 2.5
        assert est.variance == pytest.approx(np.var(x, ddof=1))
        assert est.se_mean == pytest.approx(math.sqrt(np.var(x, ddof=1) / 4))

    def test_variance_standard_error_for_normal_samples(self):
        x = np.random.default_rng(0).normal(size=200_000)
        est = McEstimate.from_samples(x, 0)
        assert est.se_variance == pytest.approx(math.sqrt(2 / x.size), rel=0.02)

    def test_single_sample(self):
        est = McEstimate.from_samples(np.array([3.0]), 0)
        assert (est.mean, est.variance, est.se_mean) == (3.0, 0.0, 0.0)
