"""Closed-form coefficient functions, terminal-wealth moments and the frontier.

Notation: ``c = sqrt(w) * beta`` is the constant that shifts the LQ state,
``I_f(t) = int_t^T f(s) ds`` for f in {rho, theta}. The coefficient functions
solve (backward from T)

    phi' = (theta - 2 rho) phi,              phi(T) = -1
    psi' = (theta - rho) psi - c rho phi,     psi(T) = 0
    P'   = (theta - 2 rho) P,                 P(T) = 1
    Q'   = (theta - rho) Q - c rho P,         Q(T) = 0
    R'   = -(c rho - theta Q / (2 P)) Q,      R(T) = 0

so that ``phi = -exp(2 I_rho - I_theta)`` and ``P = -phi``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .errors import NoConvergence, NonFinite
from .model import Curve, MarketModel

RK4_STEPS = 10_000


@dataclass(frozen=True, eq=False)
class CoefficientSolution:
    """phi, psi (maximum principle) and P, Q, R (value function) on the model grid."""

    model: MarketModel
    w: float
    beta: float
    phi: Curve
    psi: Curve
    P: Curve
    Q: Curve
    R: Curve
    theta: Curve
    lambda_cap: Curve

    @property
    def shift(self) -> float:
        """sqrt(w) * beta, the constant in the LQ state drift."""
        return math.sqrt(self.w) * self.beta

    def table(self, times) -> dict[str, np.ndarray]:
        times = np.asarray(times, dtype=float)
        return {
            "t": times,
            "phi": self.phi(times),
            "psi": self.psi(times),
            "P": self.P(times),
            "Q": self.Q(times),
            "R": self.R(times),
            "theta": self.theta(times),
            "Lambda": self.lambda_cap(times),
        }


@dataclass(frozen=True)
class FrontierPoint:
    target_mean: float
    variance: float
    beta: float

    @property
    def std_dev(self) -> float:
        return math.sqrt(self.variance)


# closed forms, evaluable at any t (vectorised)


def _tail_integrals(m: MarketModel, t):
    return m.int_rho(t, m.T), m.int_theta(t, m.T)


def mp_closed_form(m: MarketModel, w: float, beta: float, t):
    """(phi(t), psi(t)) by variation of constants on the adjoint-ansatz ODEs."""
    i_rho, i_theta = _tail_integrals(m, t)
    c = math.sqrt(w) * beta
    phi = -np.exp(2.0 * i_rho - i_theta)
    psi = -c * np.exp(i_rho - i_theta) * np.expm1(i_rho)
    return phi, psi


def dpp_closed_form(m: MarketModel, w: float, beta: float, t):
    """(P(t), Q(t)) of the quadratic value function."""
    i_rho, i_theta = _tail_integrals(m, t)
    c = math.sqrt(w) * beta
    P = np.exp(2.0 * i_rho - i_theta)
    # Q / P = c (1 - exp(-I_rho)), the fixed offset in the optimal feedback
    Q = P * (-c * np.expm1(-i_rho))
    return P, Q


def solve_mp_coefficients(m: MarketModel, w: float, beta: float) -> tuple[Curve, Curve]:
    phi, psi = mp_closed_form(m, w, beta, m.grid)
    return Curve.sampled(phi, m.T), Curve.sampled(psi, m.T)


def solve_dpp_coefficients(m: MarketModel, w: float, beta: float) -> tuple[Curve, Curve, Curve]:
    g = m.grid
    c = math.sqrt(w) * beta

    def integrand(t):
        P, Q = dpp_closed_form(m, w, beta, t)
        return (c * m.rho_curve(t) - 0.5 * m.theta_curve(t) * Q / P) * Q

    # R(t) = int_t^T [c rho - theta Q / (2P)] Q ds, Simpson on each grid cell
    # (the integrand is smooth inside cells; kinks sit on the nodes)
    ends = integrand(g)
    mids = integrand(0.5 * (g[1:] + g[:-1]))
    cells = (m.h / 6.0) * (ends[1:] + 4.0 * mids + ends[:-1])
    R = np.concatenate((np.cumsum(cells[::-1])[::-1], [0.0]))
    P, Q = dpp_closed_form(m, w, beta, g)
    return Curve.sampled(P, m.T), Curve.sampled(Q, m.T), Curve.sampled(R, m.T)


def solve(m: MarketModel, w: float, beta: float) -> CoefficientSolution:
    """Tabulate all coefficient functions for risk weight ``w`` and shift ``beta``."""
    if not w > 0:
        raise ValueError(f"risk weight must be positive, got {w}")
    phi, psi = solve_mp_coefficients(m, w, beta)
    P, Q, R = solve_dpp_coefficients(m, w, beta)
    return CoefficientSolution(
        model=m,
        w=float(w),
        beta=float(beta),
        phi=phi,
        psi=psi,
        P=P,
        Q=Q,
        R=R,
        theta=m.theta_curve,
        lambda_cap=m.lambda_curve,
    )


# numerical ODE oracle


def rk4(
    rhs: Callable[[float, list[float]], Sequence[float]],
    y_start: Sequence[float],
    t_start: float,
    t_stop: float,
    steps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Classic fixed-step RK4 from ``t_start`` to ``t_stop`` (either direction).

    Returns ``(times, states)`` with ``states[i]`` the state at ``times[i]``,
    ordered in the direction of integration.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    h = (t_stop - t_start) / steps
    half = 0.5 * h
    y = [float(v) for v in y_start]
    out = np.empty((steps + 1, len(y)))
    out[0] = y
    for n in range(steps):
        t = t_start + n * h
        try:
            k1 = rhs(t, y)
            k2 = rhs(t + half, [a + half * b for a, b in zip(y, k1)])
            k3 = rhs(t + half, [a + half * b for a, b in zip(y, k2)])
            k4 = rhs(t + h, [a + h * b for a, b in zip(y, k3)])
            y = [
                a + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
            ]
        except OverflowError:
            y = [math.inf]
        if not all(math.isfinite(v) for v in y):
            raise NonFinite(f"RK4 state became non-finite at t={t + h:.6g}")
        out[n + 1] = y
    times = t_start + h * np.arange(steps + 1)
    times[-1] = t_stop
    return times, out


def ode_numeric_oracle(
    rhs: Callable[[float, list[float]], Sequence[float]],
    terminal_value: float | Sequence[float],
    T: float,
    steps: int = RK4_STEPS,
) -> Curve | tuple[Curve, ...]:
    """Integrate ``y' = rhs(t, y)`` backward from ``y(T) = terminal_value`` to 0.

    Returns one curve per state component, sampled on the integration grid.
    """
    scalar = np.ndim(terminal_value) == 0
    y_T = [terminal_value] if scalar else list(terminal_value)
    _, states = rk4(rhs, y_T, T, 0.0, steps)
    states = states[::-1]
    curves = tuple(Curve.sampled(states[:, j], T) for j in range(states.shape[1]))
    return curves[0] if scalar else curves


def phi_rhs(m: MarketModel) -> Callable:
    theta, rho = m.theta_curve, m.rho_curve

    def rhs(t, y):
        return [(theta(t) - 2.0 * rho(t)) * y[0]]

    return rhs


def mp_rhs(m: MarketModel, w: float, beta: float) -> Callable:
    """Right-hand side of the coupled (phi, psi) system."""
    theta, rho = m.theta_curve, m.rho_curve
    c = math.sqrt(w) * beta

    def rhs(t, y):
        th, r = theta(t), rho(t)
        phi, psi = y
        return [(th - 2.0 * r) * phi, (th - r) * psi - c * r * phi]

    return rhs


def dpp_rhs(m: MarketModel, w: float, beta: float) -> Callable:
    """Right-hand side of the coupled (P, Q, R) system."""
    theta, rho = m.theta_curve, m.rho_curve
    c = math.sqrt(w) * beta

    def rhs(t, y):
        th, r = theta(t), rho(t)
        P, Q, _ = y
        return [
            (th - 2.0 * r) * P,
            (th - r) * Q - c * r * P,
            -(c * r - 0.5 * th * Q / P) * Q,
        ]

    return rhs


def oracle_errors(sol: CoefficientSolution, steps: int = RK4_STEPS) -> dict[str, float]:
    """Sup-norm gaps between RK4 solutions and the closed forms, per function."""
    m = sol.model
    times, mp = rk4(mp_rhs(m, sol.w, sol.beta), [-1.0, 0.0], m.T, 0.0, steps)
    _, dpp = rk4(dpp_rhs(m, sol.w, sol.beta), [1.0, 0.0, 0.0], m.T, 0.0, steps)
    phi, psi = mp_closed_form(m, sol.w, sol.beta, times)
    P, Q = dpp_closed_form(m, sol.w, sol.beta, times)
    # R is a quadrature tabulated on the model grid: compare at RK4 times on grid nodes
    cell = times / m.h
    on_grid = np.abs(cell - np.round(cell)) < 1e-9 * max(1.0, m.grid_n)
    return {
        "phi": float(np.max(np.abs(mp[:, 0] - phi))),
        "psi": float(np.max(np.abs(mp[:, 1] - psi))),
        "P": float(np.max(np.abs(dpp[:, 0] - P))),
        "Q": float(np.max(np.abs(dpp[:, 1] - Q))),
        "R": float(np.max(np.abs(dpp[on_grid, 2] - sol.R(times[on_grid])))),
    }


# moments of the optimal terminal wealth


def risk_free_terminal(m: MarketModel) -> float:
    """x0 * exp(int_0^T rho): terminal wealth of the all-bond portfolio."""
    return m.x0 * math.exp(m.int_rho(0.0, m.T))


def mean_terminal_wealth(m: MarketModel, beta: float, t=None):
    """E X(t) under the optimal policy with shift ``beta`` (t defaults to T)."""
    if t is None:
        t = m.T
    i_rho_0t = m.int_rho(0.0, t)
    i_theta_0t = m.int_theta(0.0, t)
    return (
        m.x0 * np.exp(i_rho_0t - i_theta_0t)
        + beta * np.exp(-m.int_rho(t, m.T)) * -np.expm1(-i_theta_0t)
    )


def second_moment_rhs(m: MarketModel, beta: float) -> Callable:
    """(E X^2, bond discount) system; the discount obeys d' = rho d."""
    theta, rho = m.theta_curve, m.rho_curve
    b2 = beta * beta

    def rhs(t, y):
        th, r = theta(t), rho(t)
        m2, disc = y
        return [(2.0 * r - th) * m2 + th * b2 * disc * disc, r * disc]

    return rhs


def terminal_second_moment(m: MarketModel, beta: float, steps: int = RK4_STEPS) -> float:
    """E X(T)^2 under the optimal policy, by forward RK4 of the moment ODE."""
    disc0 = math.exp(-m.int_rho(0.0, m.T))
    _, states = rk4(second_moment_rhs(m, beta), [m.x0**2, disc0], 0.0, m.T, steps)
    return float(states[-1, 0])


def second_moment_closed_form(m: MarketModel, beta: float) -> float:
    i_rho = m.int_rho(0.0, m.T)
    i_theta = m.int_theta(0.0, m.T)
    return m.x0**2 * math.exp(2.0 * i_rho - i_theta) - beta**2 * math.expm1(-i_theta)


# frontier and the two ways of fixing beta


def beta_from_target_mean(m: MarketModel, target_mean: float) -> float:
    i_rho = m.int_rho(0.0, m.T)
    i_theta = m.int_theta(0.0, m.T)
    return (target_mean - m.x0 * math.exp(i_rho - i_theta)) / -math.expm1(-i_theta)


def frontier_variance(m: MarketModel, target_mean: float) -> FrontierPoint:
    i_theta = m.int_theta(0.0, m.T)
    gap = target_mean - risk_free_terminal(m)
    return FrontierPoint(
        target_mean=float(target_mean),
        variance=gap * gap / math.expm1(i_theta),
        beta=beta_from_target_mean(m, target_mean),
    )


def frontier(m: MarketModel, means: Iterable[float]) -> list[FrontierPoint]:
    return [frontier_variance(m, M) for M in means]


def write_frontier_csv(points: Iterable[FrontierPoint], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["target_mean", "variance", "std_dev", "beta"])
    for p in points:
        writer.writerow([f"{v:.12g}" for v in (p.target_mean, p.variance, p.std_dev, p.beta)])


def beta_from_risk_weight(
    m: MarketModel,
    w: float,
    method: str = "linear",
    damping: float = 1.0,
    tol: float = 1e-12,
    max_iter: int = 10_000,
) -> float:
    """Shift beta with 2 w beta = 1 + 2 w E X(T; beta).

    ``method="linear"`` uses that E X(T; beta) is affine in beta.
    ``method="fixed_point"`` iterates beta <- (1 + 2 w E X(T; beta)) / (2 w)
    from 0 with the given damping, and serves as the independent check.
    """
    if not w > 0:
        raise ValueError(f"risk weight must be positive, got {w}")
    if method == "linear":
        i_rho = m.int_rho(0.0, m.T)
        i_theta = m.int_theta(0.0, m.T)
        return (1.0 + 2.0 * w * m.x0 * math.exp(i_rho - i_theta)) / (2.0 * w * math.exp(-i_theta))
    if method != "fixed_point":
        raise ValueError(f"unknown method {method!r}")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    beta = 0.0
    for _ in range(max_iter):
        target = (1.0 + 2.0 * w * float(mean_terminal_wealth(m, beta))) / (2.0 * w)
        new = (1.0 - damping) * beta + damping * target
        if abs(new - beta) < tol:
            return new
        beta = new
    raise NoConvergence(f"fixed point did not settle within {max_iter} iterations")


def multiplier(w: float, beta: float) -> float:
    """The embedding multiplier lambda-hat = 2 w beta."""
    return 2.0 * w * beta


# reference moments for non-optimal constant policies


def constant_policy_moments(m: MarketModel, v: float) -> tuple[float, float]:
    """(E X(T), Var X(T)) when a constant amount ``v`` is held in the stock."""
    T = m.T

    def growth(s):
        return np.exp(m.int_rho(s, T))

    mean = risk_free_terminal(m) + v * m.integrate(lambda s: m.drift_gap(s) * growth(s), 0.0, T)
    var = v * v * m.integrate(lambda s: m.big_lambda(s) * growth(s) ** 2, 0.0, T)
    return mean, var
