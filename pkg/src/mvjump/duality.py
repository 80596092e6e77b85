"""Value function, adjoint processes and the checks tying them together.

The adjoint triple built from the maximum-principle ansatz is

    p = phi y + psi,   q = phi sigma u,   r_k = phi u eta_k,

and with V(t, y) = P y^2 / 2 + Q y + R the two approaches must satisfy
p = -V_y, q = -V_yy sigma u and -r_k = V_y(y + u eta_k) - V_y(y) at the
optimal control. The generator uses the jump increment ``u * eta_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .analytic import CoefficientSolution
from .errors import MismatchedSpec
from .model import Curve, MarketModel
from .policy import FeedbackPolicy, optimal_control_y
from .sim import SimConfig, sample_paths


@dataclass(frozen=True, eq=False)
class ValueFunction:
    P: Curve
    Q: Curve
    R: Curve
    w: float
    beta: float


@dataclass(frozen=True)
class AdjointState:
    p: np.ndarray | float
    q: np.ndarray | float
    r: np.ndarray  # leading axis runs over jump marks


@dataclass(frozen=True)
class DualityReport:
    max_p_residual: float
    max_q_residual: float
    max_r_residual: float
    max_hamiltonian_residual: float
    hjb_coeff_residuals: tuple[float, float, float]

    def as_dict(self) -> dict[str, float]:
        c2, c1, c0 = self.hjb_coeff_residuals
        return {
            "p_relation": self.max_p_residual,
            "q_relation": self.max_q_residual,
            "r_relation": self.max_r_residual,
            "hamiltonian": self.max_hamiltonian_residual,
            "hjb_c2": c2,
            "hjb_c1": c1,
            "hjb_c0": c0,
        }


def value_function(sol: CoefficientSolution) -> ValueFunction:
    return ValueFunction(sol.P, sol.Q, sol.R, sol.w, sol.beta)


def value_at(vf: ValueFunction, t, y):
    """(V, V_y, V_yy) at (t, y)."""
    P, Q = vf.P(t), vf.Q(t)
    return 0.5 * P * y * y + Q * y + vf.R(t), P * y + Q, P


def adjoint_at(sol: CoefficientSolution, t, y, u) -> AdjointState:
    m = sol.model
    phi = sol.phi(t)
    r = np.array([phi * u * mark.eta(t) for mark in m.marks]) if m.marks else np.empty((0,))
    return AdjointState(p=phi * y + sol.psi(t), q=phi * m.sigma(t) * u, r=r)


def hamiltonian_residual(sol: CoefficientSolution, m: MarketModel, t, y, u):
    """dH/du = (mu - rho) p + sigma q + sum_k lambda_k eta_k r_k."""
    adj = adjoint_at(sol, t, y, u)
    out = m.drift_gap(t) * adj.p + m.sigma(t) * adj.q
    for k, mark in enumerate(m.marks):
        out = out + mark.intensity * mark.eta(t) * adj.r[k]
    return out


def _grid_derivative(values: np.ndarray, h: float) -> np.ndarray:
    # central differences inside, one-sided at both ends
    return np.gradient(values, h, edge_order=1)


def _stencil_mean(values: np.ndarray) -> np.ndarray:
    """Average matching the difference stencil: 1-2-1 inside, 1-1 at the ends.

    Pairing this with the difference quotient keeps the residual second order
    across the kinks of piecewise-linear coefficients.
    """
    out = np.empty_like(values)
    out[1:-1] = 0.25 * (values[:-2] + 2.0 * values[1:-1] + values[2:])
    out[0] = 0.5 * (values[0] + values[1])
    out[-1] = 0.5 * (values[-2] + values[-1])
    return out


def hjb_residuals(sol: CoefficientSolution, m: MarketModel | None = None):
    """Completed-square coefficients (c2, c1, c0) at every grid node.

    Each vanishes when P, Q, R solve their ODEs. Derivatives are central
    differences on the grid; the remaining terms are averaged over the same
    stencil.
    """
    m = m or sol.model
    g = m.grid
    P, Q, R = sol.P(g), sol.Q(g), sol.R(g)
    dP, dQ, dR = (_grid_derivative(a, m.h) for a in (P, Q, R))
    theta = m.theta_curve.samples
    rho = m.rho_curve.samples
    c = sol.shift
    c2 = 0.5 * (dP - _stencil_mean((theta - 2.0 * rho) * P))
    c1 = dQ - _stencil_mean((theta - rho) * Q - c * rho * P)
    c0 = dR + _stencil_mean((c * rho - 0.5 * theta * Q / P) * Q)
    return c2, c1, c0


def hjb_residual(sol: CoefficientSolution, m: MarketModel, t) -> tuple[float, float, float]:
    c2, c1, c0 = hjb_residuals(sol, m)
    g = m.grid
    return tuple(float(np.interp(t, g, c)) for c in (c2, c1, c0))


def generator(vf: ValueFunction, m: MarketModel, t: float, y, u):
    """A^u V(t, y) for the LQ state, jumps entering as y -> y + u eta_k.

    The time derivative of V comes from grid finite differences.
    """
    g = m.grid
    dP, dQ, dR = (
        float(np.interp(t, g, _grid_derivative(c(g), m.h))) for c in (vf.P, vf.Q, vf.R)
    )
    V, Vy, Vyy = value_at(vf, t, y)
    c = math.sqrt(vf.w) * vf.beta
    rho = m.rho(t)
    out = 0.5 * dP * y * y + dQ * y + dR
    out = out + Vy * (y * rho + u * m.drift_gap(t) + c * rho) + 0.5 * Vyy * u * u * m.sigma(t) ** 2
    for mark in m.marks:
        jump = u * mark.eta(t)
        Vj = value_at(vf, t, y + jump)[0]
        out = out + mark.intensity * (Vj - V - jump * Vy)
    return out


def check_relations(sol: CoefficientSolution, vf: ValueFunction, t, y) -> DualityReport:
    """Evaluate every MP/DPP relation at sampled (t, y*) with u* the optimal control."""
    if vf.w != sol.w or vf.beta != sol.beta:
        raise MismatchedSpec(
            f"value function built for (w={vf.w}, beta={vf.beta}), "
            f"coefficients for (w={sol.w}, beta={sol.beta})"
        )
    m = sol.model
    t = np.asarray(t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    u = optimal_control_y(sol, t, y)
    adj = adjoint_at(sol, t, y, u)
    _, Vy, Vyy = value_at(vf, t, y)
    res_p = np.abs(adj.p + Vy)
    res_q = np.abs(adj.q + Vyy * m.sigma(t) * u)
    res_r = 0.0
    for k, mark in enumerate(m.marks):
        Vy_jump = value_at(vf, t, y + u * mark.eta(t))[1]
        res_r = max(res_r, float(np.max(np.abs(-adj.r[k] - (Vy_jump - Vy)))))
    res_h = np.abs(hamiltonian_residual(sol, m, t, y, u))
    c2, c1, c0 = hjb_residuals(_with_value_function(sol, vf), m)
    inner = slice(1, -1)
    return DualityReport(
        max_p_residual=float(np.max(res_p)),
        max_q_residual=float(np.max(res_q)),
        max_r_residual=res_r,
        max_hamiltonian_residual=float(np.max(res_h)),
        hjb_coeff_residuals=tuple(float(np.max(np.abs(c[inner]))) for c in (c2, c1, c0)),
    )


def _with_value_function(sol: CoefficientSolution, vf: ValueFunction) -> CoefficientSolution:
    if vf.P is sol.P and vf.Q is sol.Q and vf.R is sol.R:
        return sol
    return replace(sol, P=vf.P, Q=vf.Q, R=vf.R)


def grid_samples(sol: CoefficientSolution, n_t: int = 50, n_y: int = 50, y_span: float = 3.0):
    """(t, y) pairs on an n_t x n_y lattice; times are model grid nodes."""
    m = sol.model
    idx = np.unique(np.round(np.linspace(0, m.grid_n, n_t)).astype(int))
    tt, yy = np.meshgrid(m.grid[idx], np.linspace(-y_span, y_span, n_y), indexing="ij")
    return tt.ravel(), yy.ravel()


def path_samples(sol: CoefficientSolution, cfg: SimConfig, n_times: int = 10):
    """(t, y*) pairs along simulated optimal paths, ``n_times`` per path."""
    m = sol.model
    n_steps = cfg.n_steps(m.T)
    steps = sorted(set(np.round(np.linspace(0, n_steps, n_times)).astype(int).tolist()))
    times, X = sample_paths(m, FeedbackPolicy.optimal(sol), cfg, steps)
    y = math.sqrt(sol.w) * (X - sol.beta)
    return np.broadcast_to(times, y.shape).ravel(), y.ravel()
