"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line (visible under ``pytest``
and when this file is run as a script) before asserting.
"""

from __future__ import annotations

import math
import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from mvjump import analytic, duality
from mvjump.analytic import beta_from_risk_weight, beta_from_target_mean, solve
from mvjump.model import Curve, load_model
from mvjump.policy import FeedbackPolicy
from mvjump.sim import McEstimate, SimConfig, terminal_wealth

from conftest import CONFIGS, fixture_a, fixture_b, random_model

RANDOM_SEEDS = (101, 102, 103, 104, 105)
# DOP853 / closed-form references for Fixture A
M2_REFERENCE = 1.539909
VAR_REFERENCE = 0.099908


@pytest.fixture
def report(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
        if capman is None:
            print(line)
        else:
            with capman.global_and_fixture_disabled():
                print("\n" + line)

    return emit


@pytest.fixture(scope="module")
def target_mean_run():
    """Fixture A at target mean 1.2: 2e5 optimal paths at dt = 1e-3."""
    m = fixture_a()
    beta = beta_from_target_mean(m, 1.2)
    sol = solve(m, 1.0, beta)
    start = time.perf_counter()
    x = terminal_wealth(m, FeedbackPolicy.optimal(sol), SimConfig(200_000, 1e-3, 2024))
    return m, beta, x, time.perf_counter() - start


def test_ode_oracle_equivalence(report):
    models = [("A", fixture_a()), ("B", fixture_b())] + [(f"rand{s}", random_model(s)) for s in RANDOM_SEEDS]
    worst_err, worst_time = 0.0, 0.0
    for _, m in models:
        start = time.perf_counter()
        sol = solve(m, 1.0, beta_from_risk_weight(m, 1.0))
        errs = analytic.oracle_errors(sol, steps=10_000)
        worst_time = max(worst_time, time.perf_counter() - start)
        worst_err = max(worst_err, max(errs.values()))
    ok = worst_err <= 1e-7 and worst_time < 1.0
    report(1, "RK4 vs closed forms", ok, f"max sup error {worst_err:.2e}, slowest model {worst_time:.2f}s")
    assert ok


def test_identity_suite(report):
    m = fixture_a()
    start = time.perf_counter()
    sol = solve(m, 1.0, beta_from_risk_weight(m, 1.0))
    g = m.grid
    id_phi = float(np.max(np.abs(sol.phi(g) + sol.P(g))))
    id_psi = float(np.max(np.abs(sol.psi(g) + sol.Q(g))))
    vf = duality.value_function(sol)
    grid = duality.check_relations(sol, vf, *duality.grid_samples(sol, 50, 50))
    paths = duality.check_relations(sol, vf, *duality.path_samples(sol, SimConfig(100, 1e-3, 7)))
    elapsed = time.perf_counter() - start
    rel = max(
        r.max_p_residual for r in (grid, paths)
    ), max(r.max_q_residual for r in (grid, paths)), max(r.max_r_residual for r in (grid, paths))
    ham = max(grid.max_hamiltonian_residual, paths.max_hamiltonian_residual)
    ok = max(id_phi, id_psi) <= 1e-12 and max(rel) <= 1e-10 and ham <= 1e-10 and elapsed < 5.0
    report(
        2,
        "identities and adjoint relations",
        ok,
        f"|phi+P|={id_phi:.1e} |psi+Q|={id_psi:.1e} p/q/r={max(rel):.1e} H={ham:.1e} in {elapsed:.2f}s",
    )
    assert ok


def _max_hjb(m) -> float:
    sol = solve(m, 1.0, beta_from_risk_weight(m, 1.0))
    return max(float(np.max(np.abs(c[1:-1]))) for c in duality.hjb_residuals(sol))


def test_hjb_residuals(report):
    worst = max(_max_hjb(m) for m in (fixture_a(), fixture_b(), load_model(CONFIGS / "sampled.json")))
    # not gated: steep random curves leave O(h^2) difference error, see the notes
    random_worst = max(_max_hjb(random_model(s)) for s in RANDOM_SEEDS)
    sol_a = solve(fixture_a(), 1.0, 1.0)
    c2_bad = duality.hjb_residuals(replace(sol_a, P=Curve.constant(1.0)))[0][1:-1]
    corrupt_err = float(np.max(np.abs(c2_bad + 0.05)))
    ok = worst <= 1e-6 and corrupt_err <= 1e-9
    report(
        3,
        "HJB residuals",
        ok,
        f"max |c| {worst:.2e} (random models, informational: {random_worst:.1e}), "
        f"corrupted c2 off -0.05 by {corrupt_err:.1e}",
    )
    assert ok


@pytest.mark.slow
def test_frontier_by_monte_carlo(report, target_mean_run):
    m, beta, x, elapsed = target_mean_run
    est = McEstimate.from_samples(x, 2024)
    z = (est.mean - 1.2) / est.se_mean
    rel_var = abs(est.variance - VAR_REFERENCE) / VAR_REFERENCE
    ok = abs(beta - 1.871757) <= 5e-7 and abs(z) <= 3 and rel_var <= 0.05 and elapsed < 60
    report(
        4,
        "frontier by Monte Carlo",
        ok,
        f"beta={beta:.6f} mean={est.mean:.6f} (z={z:+.2f}) var={est.variance:.6f} "
        f"({100 * rel_var:.2f}% off) in {elapsed:.1f}s",
    )
    assert ok


@pytest.mark.slow
def test_second_moment_consistency(report, target_mean_run):
    m, beta, x, _ = target_mean_run
    m2_rounded = analytic.terminal_second_moment(m, 1.871757)
    m2 = analytic.terminal_second_moment(m, beta)
    mean = float(analytic.mean_terminal_wealth(m, beta))
    var = analytic.frontier_variance(m, mean).variance
    rel = abs(m2 - mean**2 - var) / var
    sq = x * x
    z = (float(np.mean(sq)) - m2) / (float(np.std(sq, ddof=1)) / math.sqrt(sq.size))
    ok = abs(m2_rounded - M2_REFERENCE) <= 1e-6 and rel <= 1e-6 and abs(z) <= 3
    report(
        5,
        "second moment",
        ok,
        f"m2(T)={m2_rounded:.7f} frontier rel gap {rel:.1e} MC z={z:+.2f}",
    )
    assert ok


def test_embedding_fixed_point(report):
    m = fixture_a()
    lin = beta_from_risk_weight(m, 1.0, method="linear")
    fp = beta_from_risk_weight(m, 1.0, method="fixed_point")
    consistency = abs(2 * lin - 1 - 2 * float(analytic.mean_terminal_wealth(m, lin)))
    ok = abs(lin - fp) <= 1e-10 and consistency <= 1e-10 and abs(lin - 1.661973) <= 1e-6
    report(
        6,
        "embedding fixed point",
        ok,
        f"beta={lin:.9f} |linear-iterate|={abs(lin - fp):.1e} self-consistency {consistency:.1e}",
    )
    assert ok


def _objective(x: np.ndarray, w: float) -> tuple[float, float]:
    """w Var - Mean and its delta-method standard error."""
    mean = float(np.mean(x))
    dev = x - mean
    var = float(np.mean(dev * dev))
    influence = w * (dev * dev - var) - dev
    return w * var - mean, float(np.std(influence, ddof=1)) / math.sqrt(x.size)


@pytest.mark.slow
def test_optimality_gap(report):
    m = fixture_a()
    w = 1.0
    sol = solve(m, w, beta_from_risk_weight(m, w))
    cfg = SimConfig(100_000, 1e-3, 77)
    opt, se_opt = _objective(terminal_wealth(m, FeedbackPolicy.optimal(sol), cfg), w)
    worst = -math.inf
    details = []
    for eps in (0.2, -0.2):
        val, se = _objective(terminal_wealth(m, FeedbackPolicy.optimal(sol, eps), cfg), w)
        margin = (opt - val) / math.hypot(se_opt, se)
        worst = max(worst, margin)
        details.append(f"eps={eps:+.1f}: {val:.5f}")
    ok = worst <= 3.0
    report(7, "optimality gap", ok, f"optimal {opt:.5f}; " + ", ".join(details) + f"; worst margin {worst:+.2f} se")
    assert ok


def test_determinism_across_threads(report):
    argv = [
        sys.executable, "-m", "mvjump", "simulate", "--config", str(CONFIGS / "fixture_a.json"),
        "--paths", "20000", "--dt", "0.01", "--seed", "99",
    ]
    outs = []
    for threads in ("1", "4"):
        env = dict(os.environ, MVJUMP_THREADS=threads)
        outs.append(subprocess.run(argv, env=env, capture_output=True, check=True).stdout)
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    report(8, "determinism across thread counts", ok, f"{len(outs[0])} bytes, identical={outs[0] == outs[1]}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
