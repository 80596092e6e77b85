"""``mvjump`` command line: solve, frontier, simulate, check."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import analytic, duality
from .errors import MvJumpError
from .model import MarketModel, model_from_dict, model_to_dict, validate_model
from .policy import FeedbackPolicy, optimal_control_x
from .sim import McEstimate, SimConfig, monte_carlo, terminal_wealth

OBJECTIVES = ("risk_weight", "target_mean")


def _g(x: float) -> str:
    return f"{x:.9g}"


@dataclass
class RunConfig:
    model_path: str
    model: MarketModel
    raw_model: dict[str, Any]
    objective: tuple[str, float] | None
    options: dict[str, Any] = field(default_factory=dict)

    def digest(self) -> str:
        payload = {
            "model": model_to_dict(self.model),
            "objective": list(self.objective) if self.objective else None,
            "options": self.options,
        }
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_run_config(args: argparse.Namespace, options: dict[str, Any]) -> RunConfig:
    with open(args.config) as fh:
        raw = json.load(fh)
    objective = None
    from_file = raw.get("objective")
    if from_file is not None:
        if not isinstance(from_file, dict) or len(from_file) != 1 or set(from_file) - set(OBJECTIVES):
            raise MvJumpError("config 'objective' must hold exactly one of risk_weight, target_mean")
        ((name, value),) = from_file.items()
        objective = (name, float(value))
    if args.risk_weight is not None:
        objective = ("risk_weight", args.risk_weight)
    elif args.target_mean is not None:
        objective = ("target_mean", args.target_mean)
    model = model_from_dict(raw)
    return RunConfig(args.config, model, raw, objective, options)


@dataclass(frozen=True)
class Resolved:
    beta: float
    w: float
    multiplier: float | None
    sol: analytic.CoefficientSolution


def implied_risk_weight(m: MarketModel, target_mean: float) -> float:
    """Risk weight whose optimum has mean ``target_mean``; inf at the bond-only point."""
    beta = analytic.beta_from_target_mean(m, target_mean)
    gap = beta - target_mean
    return 1.0 / (2.0 * gap) if gap > 0 else math.inf


def resolve(cfg: RunConfig) -> Resolved:
    if cfg.objective is None:
        raise MvJumpError("an objective is required: --risk-weight W or --target-mean M")
    m = cfg.model
    name, value = cfg.objective
    if name == "risk_weight":
        beta = analytic.beta_from_risk_weight(m, value)
        return Resolved(beta, value, analytic.multiplier(value, beta), analytic.solve(m, value, beta))
    beta = analytic.beta_from_target_mean(m, value)
    w = implied_risk_weight(m, value)
    # controls in wealth terms do not depend on w; it only scales the LQ state
    w_lq = w if math.isfinite(w) else 1.0
    return Resolved(beta, w, None, analytic.solve(m, w_lq, beta))


# commands


def run_solve(cfg: RunConfig, times: list[float] | None, at: tuple[float, float] | None) -> list[str]:
    m = cfg.model
    r = resolve(cfg)
    mean = float(analytic.mean_terminal_wealth(m, r.beta))
    var = analytic.frontier_variance(m, mean).variance
    lines = [
        f"config_hash={cfg.digest()}",
        f"objective={cfg.objective[0]} value={_g(cfg.objective[1])}",
        f"beta={_g(r.beta)}",
        f"risk_weight={_g(r.w)}",
    ]
    if r.multiplier is not None:
        lines.append(f"lambda_hat={_g(r.multiplier)}")
    lines += [f"mean_T={_g(mean)}", f"var_T={_g(var)}", f"std_T={_g(math.sqrt(var))}"]
    if times is None:
        times = list(np.linspace(0.0, m.T, 5))
    table = r.sol.table(times)
    cols = list(table)
    lines.append(" ".join(f"{c:>16}" for c in cols))
    for i in range(len(times)):
        lines.append(" ".join(f"{_g(table[c][i] + 0.0):>16}" for c in cols))
    if at is not None:
        t, X = at
        lines.append(f"v_hat(t={_g(t)},X={_g(X)})={_g(float(optimal_control_x(r.sol, t, X)))}")
    return lines


def frontier_means(m: MarketModel, args: argparse.Namespace) -> list[float]:
    if args.means:
        means = [float(v) for v in args.means.split(",")]
    else:
        if args.mean_min is None or args.mean_max is None:
            raise MvJumpError("give --means or both --mean-min and --mean-max")
        if not args.mean_min < args.mean_max:
            raise MvJumpError("--mean-min must be below --mean-max")
        if args.points < 2:
            raise MvJumpError("--points must be >= 2")
        means = np.linspace(args.mean_min, args.mean_max, args.points).tolist()
    if args.include_vertex:
        means.append(analytic.risk_free_terminal(m))
    return sorted(means)


def run_frontier(cfg: RunConfig, means: list[float], out) -> None:
    analytic.write_frontier_csv(analytic.frontier(cfg.model, means), out)


def _z(estimate: float, reference: float, se: float) -> float:
    if se > 0:
        return (estimate - reference) / se
    return 0.0 if math.isclose(estimate, reference, rel_tol=1e-12, abs_tol=1e-15) else math.inf


def reference_moments(m: MarketModel, policy: FeedbackPolicy) -> tuple[float, float]:
    if policy.kind == "optimal" and not policy.value:
        mean = float(analytic.mean_terminal_wealth(m, policy.sol.beta))
        return mean, analytic.frontier_variance(m, mean).variance
    if policy.kind in ("zero", "constant"):
        return analytic.constant_policy_moments(m, policy.value)
    return math.nan, math.nan


def run_simulate(cfg: RunConfig, sim: SimConfig, policy_text: str, csv_path: str | None) -> list[str]:
    m = cfg.model
    sol = resolve(cfg).sol if policy_text == "optimal" else None
    policy = FeedbackPolicy.parse(policy_text, sol)
    x = terminal_wealth(m, policy, sim)
    if csv_path:
        with open(csv_path, "w") as fh:
            fh.write("path_index,terminal_wealth\n")
            for i, v in enumerate(x.tolist()):
                fh.write(f"{i},{v:.17g}\n")
    est = McEstimate.from_samples(x, sim.seed)
    ref_mean, ref_var = reference_moments(m, policy)
    fields = [
        ("policy", policy.describe()),
        ("scheme", sim.scheme),
        ("paths", str(est.n_paths)),
        ("dt", _g(sim.dt)),
        ("seed", str(sim.seed)),
        ("mean", _g(est.mean)),
        ("se_mean", _g(est.se_mean)),
        ("var", _g(est.variance)),
        ("se_var", _g(est.se_variance)),
        ("closed_mean", _g(ref_mean)),
        ("closed_var", _g(ref_var)),
        ("z_mean", _g(_z(est.mean, ref_mean, est.se_mean))),
        ("z_var", _g(_z(est.variance, ref_var, est.se_variance))),
        ("config_hash", cfg.digest()),
    ]
    return [" ".join(f"{k}={v}" for k, v in fields)]


@dataclass
class CheckItem:
    name: str
    value: float
    limit: float

    @property
    def passed(self) -> bool:
        return math.isfinite(self.value) and self.value <= self.limit


def run_check(
    cfg: RunConfig,
    tol: float | None,
    z_max: float,
    sim: SimConfig,
    relation_paths: int = 100,
) -> list[CheckItem]:
    """Full residual suite; identity items use 1e-10, numerical ones 1e-6 unless ``tol``."""
    tol_id = 1e-10 if tol is None else tol
    tol_fd = 1e-6 if tol is None else tol
    m = cfg.model
    r = resolve(cfg)
    sol = r.sol
    g = m.grid
    items = [
        CheckItem("identity_phi_plus_P", float(np.max(np.abs(sol.phi(g) + sol.P(g)))), tol_id),
        CheckItem("identity_psi_plus_Q", float(np.max(np.abs(sol.psi(g) + sol.Q(g)))), tol_id),
    ]
    for name, err in analytic.oracle_errors(sol).items():
        items.append(CheckItem(f"rk4_oracle_{name}", err, tol_fd))
    vf = duality.value_function(sol)
    grid_rep = duality.check_relations(sol, vf, *duality.grid_samples(sol))
    for name, value in grid_rep.as_dict().items():
        limit = tol_fd if name.startswith("hjb") else tol_id
        items.append(CheckItem(f"grid_{name}", value, limit))
    path_cfg = SimConfig(relation_paths, sim.dt, sim.seed, sim.scheme)
    path_rep = duality.check_relations(sol, vf, *duality.path_samples(sol, path_cfg))
    for name in ("p_relation", "q_relation", "r_relation", "hamiltonian"):
        items.append(CheckItem(f"path_{name}", path_rep.as_dict()[name], tol_id))
    mean = float(analytic.mean_terminal_wealth(m, r.beta))
    if cfg.objective[0] == "risk_weight":
        w = cfg.objective[1]
        items.append(CheckItem("embedding_fixed_point", abs(2 * w * r.beta - 1 - 2 * w * mean), tol_id))
        fp = analytic.beta_from_risk_weight(m, w, method="fixed_point")
        items.append(CheckItem("beta_linear_vs_iteration", abs(fp - r.beta), tol_id))
    else:
        items.append(CheckItem("target_mean_recovered", abs(mean - cfg.objective[1]), tol_id))
    m2 = analytic.terminal_second_moment(m, r.beta)
    items.append(
        CheckItem("second_moment_rk4_vs_closed", abs(m2 - analytic.second_moment_closed_form(m, r.beta)), tol_fd)
    )
    var = analytic.frontier_variance(m, mean).variance
    items.append(CheckItem("second_moment_vs_frontier", abs(m2 - mean * mean - var) / max(var, 1e-300), tol_fd))
    est = monte_carlo(m, FeedbackPolicy.optimal(sol), sim)
    items.append(CheckItem("mc_mean_abs_z", abs(_z(est.mean, mean, est.se_mean)), z_max))
    items.append(CheckItem("mc_var_abs_z", abs(_z(est.variance, var, est.se_variance)), z_max))
    return items


# argument parsing


def _pair(text: str) -> tuple[float, float]:
    a, b = text.split(",")
    return float(a), float(b)


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="model config (JSON)")
    obj = common.add_mutually_exclusive_group()
    obj.add_argument("--risk-weight", type=float, help="risk weight w > 0 on the variance")
    obj.add_argument("--target-mean", type=float, help="target terminal mean M")
    common.add_argument("--dump-model", action="store_true", help="print the parsed model and exit")

    simopts = argparse.ArgumentParser(add_help=False)
    simopts.add_argument("--paths", type=int, default=200_000)
    simopts.add_argument("--dt", type=float, default=1e-3)
    simopts.add_argument("--seed", type=int, default=42)
    simopts.add_argument("--scheme", choices=("euler", "exact"), default="euler")

    parser = argparse.ArgumentParser(prog="mvjump", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="optimal policy and coefficient table")
    p.add_argument("--times", type=_float_list, help="comma-separated times for the table")
    p.add_argument("--at", type=_pair, metavar="t,X", help="print the optimal amount v(t, X)")

    p = sub.add_parser("frontier", parents=[common], help="efficient frontier as CSV")
    p.add_argument("--mean-min", type=float)
    p.add_argument("--mean-max", type=float)
    p.add_argument("--points", type=int, default=11)
    p.add_argument("--means", help="explicit comma-separated target means")
    p.add_argument("--include-vertex", action="store_true", help="add the bond-only point")
    p.add_argument("--out", help="CSV path (default stdout)")

    p = sub.add_parser("simulate", parents=[common, simopts], help="Monte Carlo of terminal wealth")
    p.add_argument("--policy", default="optimal", help="optimal | zero | constant:<v>")
    p.add_argument("--csv", help="dump path_index,terminal_wealth")

    p = sub.add_parser("check", parents=[common, simopts], help="full verification suite")
    p.set_defaults(paths=20_000)
    p.add_argument("--tol", type=float, help="override every residual tolerance")
    p.add_argument("--z", type=float, default=3.0, help="max |z| for Monte Carlo moments")
    p.add_argument("--json", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = sys.stdout
    try:
        options = {
            k: v
            for k, v in vars(args).items()
            if k not in ("config", "risk_weight", "target_mean", "dump_model", "csv", "out", "json")
        }
        cfg = load_run_config(args, options)
        if args.dump_model:
            out.write(json.dumps(model_to_dict(cfg.model)) + "\n")
            return 0
        validate_model(cfg.model)
        if args.command == "solve":
            lines = run_solve(cfg, args.times, args.at)
        elif args.command == "frontier":
            means = frontier_means(cfg.model, args)
            if args.out:
                with open(args.out, "w", newline="") as fh:
                    run_frontier(cfg, means, fh)
            else:
                run_frontier(cfg, means, out)
            return 0
        elif args.command == "simulate":
            sim = SimConfig(args.paths, args.dt, args.seed, args.scheme)
            lines = run_simulate(cfg, sim, args.policy, args.csv)
        else:
            sim = SimConfig(args.paths, args.dt, args.seed, args.scheme)
            items = run_check(cfg, args.tol, args.z, sim)
            failed = [it.name for it in items if not it.passed]
            if args.json:
                payload = {
                    "config_hash": cfg.digest(),
                    "checks": [
                        {"name": it.name, "value": it.value, "limit": it.limit, "pass": it.passed}
                        for it in items
                    ],
                    "failed": failed,
                }
                out.write(json.dumps(payload, indent=2) + "\n")
            else:
                out.write(f"config_hash={cfg.digest()}\n")
                for it in items:
                    status = "PASS" if it.passed else "FAIL"
                    out.write(f"{it.name:<32} {it.value:12.3e}  <= {it.limit:9.1e}  {status}\n")
                if failed:
                    out.write("failed: " + ", ".join(failed) + "\n")
            return 1 if failed else 0
    except (MvJumpError, ValueError, OSError, KeyError) as exc:
        print(f"mvjump: error: {exc}", file=sys.stderr)
        return 1
    out.write("\n".join(lines) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
