"""Jump-diffusion market: coefficient curves, validation and grid quadrature.

The jump measure is a finite family of marks, so every ``int eta^m lambda(dz)``
collapses to ``sum_k lambda_k * eta_k(t)**m``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import (
    BadCurve,
    BadHorizon,
    BadIntensity,
    BadWealth,
    DegenerateNoise,
    DriftDominance,
    ReversedLimits,
)

DEFAULT_GRID_N = 2000


@dataclass(frozen=True, eq=False)
class Curve:
    """Deterministic function of time: a constant, or uniform samples on [0, span].

    Sampled curves are linearly interpolated between samples. Evaluation accepts
    a float (returns float) or an array (returns an array of the same shape).
    """

    value: float = 0.0
    samples: np.ndarray | None = None
    span: float | None = None

    @classmethod
    def constant(cls, value: float) -> Curve:
        return cls(value=float(value))

    @classmethod
    def sampled(cls, samples: Sequence[float] | np.ndarray, span: float) -> Curve:
        arr = np.array(samples, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise BadCurve("a sampled curve needs at least 2 points")
        if not np.all(np.isfinite(arr)):
            raise BadCurve("curve samples must be finite")
        if not span > 0:
            raise BadCurve("curve span must be positive")
        arr.setflags(write=False)
        return cls(samples=arr, span=float(span))

    @property
    def kind(self) -> str:
        return "constant" if self.samples is None else "sampled"

    @cached_property
    def _fast(self) -> tuple[list[float], float, int]:
        n = self.samples.size
        return self.samples.tolist(), (n - 1) / self.span, n - 2

    def __call__(self, t):
        if self.samples is None:
            if np.ndim(t) == 0:
                return self.value
            return np.full(np.shape(t), self.value)
        if np.ndim(t) == 0:
            s, scale, last = self._fast
            x = float(t) * scale
            i = int(x)
            if i > last:
                i = last
            elif i < 0:
                i = 0
            frac = x - i
            return s[i] + frac * (s[i + 1] - s[i])
        xp = np.linspace(0.0, self.span, self.samples.size)
        return np.interp(t, xp, self.samples)

    def scaled(self, factor: float) -> Curve:
        if self.samples is None:
            return Curve.constant(self.value * factor)
        return Curve.sampled(self.samples * factor, self.span)

    def to_json(self) -> float | dict[str, list[float]]:
        if self.samples is None:
            return self.value
        return {"samples": self.samples.tolist()}


@dataclass(frozen=True, eq=False)
class JumpMark:
    """One jump type: amplitude curve eta_k(t) and Poisson intensity lambda_k."""

    eta: Curve
    intensity: float


class Primitive:
    """Exact antiderivative ``F(t) = int_0^t f`` of the piecewise-linear
    interpolant of ``values`` on a uniform grid.

    At grid nodes this is the composite trapezoid rule; between nodes the
    partial cell is integrated exactly.
    """

    def __init__(self, grid: np.ndarray, values: np.ndarray):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        self.h = grid[1] - grid[0]
        cells = 0.5 * self.h * (self.values[1:] + self.values[:-1])
        self.cum = np.concatenate(([0.0], np.cumsum(cells)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        n = self.grid.size - 1
        i = np.clip(np.floor(t / self.h).astype(int), 0, n - 1)
        dt = t - self.grid[i]
        v0 = self.values[i]
        ft = v0 + (self.values[i + 1] - v0) * (dt / self.h)
        out = self.cum[i] + 0.5 * dt * (v0 + ft)
        return float(out) if out.ndim == 0 else out

    def between(self, a, b):
        return self(b) - self(a)


@dataclass(frozen=True, eq=False)
class MarketModel:
    """Bond rate rho, stock drift mu, volatility sigma and jump marks on [0, T].

    ``grid_n`` is the number of intervals of the shared quadrature/ODE grid.
    Construct freely; call :func:`validate_model` before solving.
    """

    T: float
    x0: float
    rho: Curve
    mu: Curve
    sigma: Curve
    marks: tuple[JumpMark, ...] = field(default=())
    grid_n: int = DEFAULT_GRID_N

    @cached_property
    def grid(self) -> np.ndarray:
        g = np.linspace(0.0, self.T, self.grid_n + 1)
        g.setflags(write=False)
        return g

    @property
    def h(self) -> float:
        return self.T / self.grid_n

    def drift_gap(self, t):
        """D_t = mu_t - rho_t."""
        return self.mu(t) - self.rho(t)

    def big_lambda(self, t):
        """sigma_t^2 + sum_k lambda_k eta_k(t)^2."""
        out = self.sigma(t) ** 2
        for mark in self.marks:
            out = out + mark.intensity * mark.eta(t) ** 2
        return out

    def jump_mean(self, t):
        """sum_k lambda_k eta_k(t); the compensator rate per unit of exposure."""
        out = 0.0 * self.sigma(t)
        for mark in self.marks:
            out = out + mark.intensity * mark.eta(t)
        return out

    def theta(self, t):
        return self.drift_gap(t) ** 2 / self.big_lambda(t)

    # Grid tabulations. Closed forms and the ODE oracle both work with these
    # piecewise-linear interpolants, so quadrature on the grid is exact for them.

    @cached_property
    def rho_curve(self) -> Curve:
        return Curve.sampled(self.rho(self.grid), self.T)

    @cached_property
    def theta_curve(self) -> Curve:
        return Curve.sampled(self.theta(self.grid), self.T)

    @cached_property
    def lambda_curve(self) -> Curve:
        return Curve.sampled(self.big_lambda(self.grid), self.T)

    @cached_property
    def rho_primitive(self) -> Primitive:
        return Primitive(self.grid, self.rho_curve.samples)

    @cached_property
    def theta_primitive(self) -> Primitive:
        return Primitive(self.grid, self.theta_curve.samples)

    def int_rho(self, a, b):
        return self.rho_primitive.between(a, b)

    def int_theta(self, a, b):
        return self.theta_primitive.between(a, b)

    def discount(self, t):
        """exp(-int_t^T rho): value at t of one unit of bond paid at T."""
        return np.exp(-self.int_rho(t, self.T))

    def integrate(self, f: Callable, a: float, b: float) -> float:
        return integrate(f, a, b, self.grid)


def validate_model(m: MarketModel) -> MarketModel:
    """Return ``m`` unchanged if every invariant holds at every grid point."""
    if not (math.isfinite(m.T) and m.T > 0):
        raise BadHorizon(f"horizon T must be positive, got {m.T}")
    if not (math.isfinite(m.x0) and m.x0 > 0):
        raise BadWealth(f"initial wealth must be positive, got {m.x0}")
    if int(m.grid_n) != m.grid_n or m.grid_n < 2:
        raise BadCurve(f"grid_n must be an integer >= 2, got {m.grid_n}")
    named = [("rho", m.rho), ("mu", m.mu), ("sigma", m.sigma)]
    named += [(f"marks[{k}].eta", mk.eta) for k, mk in enumerate(m.marks)]
    for name, curve in named:
        if curve.samples is not None and not math.isclose(curve.span, m.T, rel_tol=1e-12):
            raise BadCurve(f"{name} is sampled over [0, {curve.span}], expected [0, {m.T}]")
        if not np.all(np.isfinite(curve(m.grid))):
            raise BadCurve(f"{name} is not finite on the grid")
    for k, mark in enumerate(m.marks):
        if not (math.isfinite(mark.intensity) and mark.intensity > 0):
            raise BadIntensity(f"marks[{k}] intensity must be positive, got {mark.intensity}")
    g = m.grid
    rho = m.rho(g)
    if np.any(rho <= 0):
        raise BadCurve(f"rho must be positive; min over grid is {rho.min()}")
    gap = m.drift_gap(g)
    if np.any(gap <= 0):
        i = int(np.argmin(gap))
        raise DriftDominance(f"mu_t <= rho_t at t={g[i]:.6g} (mu - rho = {gap[i]:.6g})")
    lam = m.big_lambda(g)
    if np.any(lam <= 0):
        i = int(np.argmin(lam))
        raise DegenerateNoise(f"Lambda_t = {lam[i]:.6g} <= 0 at t={g[i]:.6g}")
    return m


def big_lambda(m: MarketModel, t):
    return m.big_lambda(t)


def theta(m: MarketModel, t):
    return m.theta(t)


def integrate(f: Callable, a: float, b: float, grid: np.ndarray) -> float:
    """Composite trapezoid over the grid nodes inside [a, b], plus both limits.

    Exact for integrands that are piecewise linear on the grid.
    """
    if a > b:
        raise ReversedLimits(f"lower limit {a} exceeds upper limit {b}")
    if a == b:
        return 0.0
    inner = grid[(grid > a) & (grid < b)]
    nodes = np.concatenate(([a], inner, [b]))
    vals = np.asarray(f(nodes), dtype=float)
    return float(np.sum(0.5 * np.diff(nodes) * (vals[1:] + vals[:-1])))


# config file I/O


def _curve_from_json(obj: Any, T: float, name: str) -> Curve:
    if isinstance(obj, bool):
        raise BadCurve(f"{name}: expected a number or {{'samples': [...]}}")
    if isinstance(obj, (int, float)):
        return Curve.constant(float(obj))
    if isinstance(obj, dict) and set(obj) == {"samples"}:
        return Curve.sampled(obj["samples"], T)
    raise BadCurve(f"{name}: expected a number or {{'samples': [...]}}, got {obj!r}")


def model_from_dict(d: dict[str, Any]) -> MarketModel:
    """Build (but do not validate) a model from parsed config JSON."""
    missing = {"T", "x0", "rho", "mu", "sigma"} - set(d)
    if missing:
        raise BadCurve(f"model config is missing keys: {sorted(missing)}")
    T = float(d["T"])
    marks = []
    for k, mk in enumerate(d.get("marks", [])):
        marks.append(
            JumpMark(
                eta=_curve_from_json(mk["eta"], T, f"marks[{k}].eta"),
                intensity=float(mk["intensity"]),
            )
        )
    return MarketModel(
        T=T,
        x0=float(d["x0"]),
        rho=_curve_from_json(d["rho"], T, "rho"),
        mu=_curve_from_json(d["mu"], T, "mu"),
        sigma=_curve_from_json(d["sigma"], T, "sigma"),
        marks=tuple(marks),
        grid_n=int(d.get("grid_n", DEFAULT_GRID_N)),
    )


def model_to_dict(m: MarketModel) -> dict[str, Any]:
    return {
        "T": m.T,
        "x0": m.x0,
        "grid_n": m.grid_n,
        "rho": m.rho.to_json(),
        "mu": m.mu.to_json(),
        "sigma": m.sigma.to_json(),
        "marks": [{"eta": mk.eta.to_json(), "intensity": mk.intensity} for mk in m.marks],
    }


def load_model(path: str | Path) -> MarketModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
