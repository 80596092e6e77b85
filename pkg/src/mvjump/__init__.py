"""Mean-variance portfolio selection for jump diffusions.

Closed-form optimal policies from the maximum principle and from dynamic
programming, the efficient frontier, and numerical cross-checks (RK4 and
Monte Carlo) of every formula.
"""

from .analytic import (
    CoefficientSolution,
    FrontierPoint,
    beta_from_risk_weight,
    beta_from_target_mean,
    frontier_variance,
    mean_terminal_wealth,
    solve,
    terminal_second_moment,
)
from .model import Curve, JumpMark, MarketModel, load_model, validate_model
from .policy import FeedbackPolicy, ProblemSpec
from .sim import McEstimate, SimConfig, monte_carlo

__all__ = [
    "CoefficientSolution",
    "Curve",
    "FeedbackPolicy",
    "FrontierPoint",
    "JumpMark",
    "MarketModel",
    "McEstimate",
    "ProblemSpec",
    "SimConfig",
    "beta_from_risk_weight",
    "beta_from_target_mean",
    "frontier_variance",
    "load_model",
    "mean_terminal_wealth",
    "monte_carlo",
    "solve",
    "terminal_second_moment",
    "validate_model",
]
