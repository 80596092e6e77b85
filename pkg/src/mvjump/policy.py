"""Optimal feedback laws in wealth coordinates (X, v) and LQ coordinates (y, u).

The substitution is ``y = sqrt(w) (X - beta)``, ``u = sqrt(w) v``. All controls
are vectorised over ``t`` and the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytic import CoefficientSolution


@dataclass(frozen=True)
class ProblemSpec:
    w: float
    beta: float
    x0: float

    @property
    def y0(self) -> float:
        return math.sqrt(self.w) * (self.x0 - self.beta)


def to_lq_coords(spec: ProblemSpec, X, v):
    s = math.sqrt(spec.w)
    return s * (X - spec.beta), s * v


def from_lq_coords(spec: ProblemSpec, y, u):
    s = math.sqrt(spec.w)
    return y / s + spec.beta, u / s


def _gain(sol: CoefficientSolution, t):
    m = sol.model
    return m.drift_gap(t) / m.big_lambda(t)


def optimal_control_y(sol: CoefficientSolution, t, y):
    """u(t, y) = -[y + sqrt(w) beta (1 - exp(-int_t^T rho))] (mu - rho) / Lambda."""
    offset = sol.shift * -np.expm1(-sol.model.int_rho(t, sol.model.T))
    return -(y + offset) * _gain(sol, t)


def optimal_control_y_dpp(sol: CoefficientSolution, t, y):
    """Completed-square minimiser -(y + Q/P) (mu - rho) / Lambda."""
    return -(y + sol.Q(t) / sol.P(t)) * _gain(sol, t)


def optimal_control_y_mp(sol: CoefficientSolution, t, y):
    """Hamiltonian stationary point (rho - mu)(phi y + psi) / (phi Lambda)."""
    m = sol.model
    phi = sol.phi(t)
    return -m.drift_gap(t) * (phi * y + sol.psi(t)) / (phi * m.big_lambda(t))


def optimal_control_x(sol: CoefficientSolution, t, X):
    """v(t, X) = [beta exp(-int_t^T rho) - X] (mu - rho) / Lambda."""
    return (sol.beta * sol.model.discount(t) - X) * _gain(sol, t)


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    """Amount invested in the stock as a function of (t, X).

    ``optimal`` follows the optimal law plus ``value`` (0 unless perturbed);
    ``constant`` holds ``value``; ``zero`` stays in the bond.
    """

    kind: str
    sol: CoefficientSolution | None = None
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("optimal", "constant", "zero"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "optimal" and self.sol is None:
            raise ValueError("an optimal policy needs a coefficient solution")

    @classmethod
    def optimal(cls, sol: CoefficientSolution, shift: float = 0.0) -> FeedbackPolicy:
        return cls("optimal", sol, float(shift))

    @classmethod
    def constant(cls, v: float) -> FeedbackPolicy:
        return cls("constant", None, float(v))

    @classmethod
    def zero(cls) -> FeedbackPolicy:
        return cls("zero")

    @classmethod
    def parse(cls, text: str, sol: CoefficientSolution | None = None) -> FeedbackPolicy:
        """Parse ``optimal``, ``zero`` or ``constant:<v>``."""
        if text == "optimal":
            return cls.optimal(sol)
        if text == "zero":
            return cls.zero()
        if text.startswith("constant:"):
            return cls.constant(float(text.split(":", 1)[1]))
        raise ValueError(f"policy must be optimal|zero|constant:<v>, got {text!r}")

    def __call__(self, t, X):
        if self.kind == "optimal":
            v = optimal_control_x(self.sol, t, X)
            return v + self.value if self.value else v
        return np.zeros_like(X) + self.value

    def describe(self) -> str:
        if self.kind == "optimal":
            return "optimal" if not self.value else f"optimal{self.value:+g}"
        return "zero" if self.kind == "zero" else f"constant:{self.value:g}"
