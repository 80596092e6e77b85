"""Monte Carlo simulation of controlled wealth under the jump-diffusion market.

Each path owns a Philox counter-based stream keyed by ``(seed, path_index)``,
so a path's draws never depend on how paths are split across workers. Within
the main stream, word ``step * (1 + n_marks) + j`` feeds the Brownian normal
(j = 0) and the Poisson count of mark ``j - 1``. The exact-jump-time scheme
reads jump data from side streams, one per mark.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import NonFinite
from .model import MarketModel
from .policy import FeedbackPolicy

CHUNK = 2048
_SCHEMES = {
    "euler": "euler",
    "euler-poisson-count": "euler",
    "exact": "exact",
    "exact-jump-times": "exact",
}


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    dt: float
    seed: int
    scheme: str = "euler"

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        object.__setattr__(self, "scheme", _SCHEMES[self.scheme])

    def n_steps(self, T: float) -> int:
        if self.dt > T * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds the horizon T={T}")
        return max(1, round(T / self.dt))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    variance: float
    se_mean: float
    se_variance: float
    n_paths: int
    seed: int

    @classmethod
    def from_samples(cls, x: np.ndarray, seed: int) -> McEstimate:
        n = x.size
        # shift by the first sample so identical paths give exactly zero spread
        shifted = x - x[0]
        mean = float(x[0] + np.mean(shifted))
        if n < 2:
            return cls(mean, 0.0, 0.0, 0.0, n, seed)
        dev = shifted - np.mean(shifted)
        var = float(np.sum(dev * dev) / (n - 1))
        m4 = float(np.mean(dev**4))
        se_var = math.sqrt(max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n)
        return cls(mean, var, math.sqrt(var / n), se_var, n, seed)


def _stream(seed: int, path_index: int, stream: int = 0) -> np.random.Philox:
    return np.random.Philox(key=(seed << 64) | path_index, counter=stream << 192)


def _to_uniform(raw: np.ndarray) -> np.ndarray:
    # midpoints of 2^53 equal bins: strictly inside (0, 1)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _poisson_table(mean: float) -> np.ndarray:
    """Cumulative Poisson probabilities, truncated where the tail is below 1e-17."""
    p = math.exp(-mean)
    cdf = [p]
    k = 0
    while 1.0 - cdf[-1] > 1e-17 and k < 1000:
        k += 1
        p *= mean / k
        cdf.append(cdf[-1] + p)
    cdf[-1] = 1.0
    return np.array(cdf)


class _Stepper:
    """Pre-evaluated coefficients on the simulation time grid."""

    def __init__(self, m: MarketModel, n_steps: int):
        self.m = m
        self.N = n_steps
        self.h = m.T / n_steps
        self.times = self.h * np.arange(n_steps + 1)
        self.times[-1] = m.T
        left = self.times[:-1]
        self.rho = np.asarray(m.rho(left), dtype=float)
        self.gap = np.asarray(m.drift_gap(left), dtype=float)
        self.sigma = np.asarray(m.sigma(left), dtype=float)
        self.eta = [np.asarray(mk.eta(left), dtype=float) for mk in m.marks]
        # exact bond growth over each step keeps v = 0 paths on x0 exp(int rho)
        self.growth = np.exp(m.int_rho(left, self.times[1:]))


def _main_uniforms(seed: int, start: int, stop: int, words: int) -> np.ndarray:
    raw = np.empty((stop - start, words), dtype=np.uint64)
    for row, p in enumerate(range(start, stop)):
        raw[row] = _stream(seed, p).random_raw(words)
    return _to_uniform(raw)


def _run_euler(st: _Stepper, policy, X, U, record, rec_out):
    m, h, K = st.m, st.h, len(st.m.marks)
    n = X.size
    U = U.reshape(n, st.N, 1 + K)
    Z = np.ascontiguousarray(ndtri(U[:, :, 0]).T)
    J = np.zeros((st.N, n))
    for k, mark in enumerate(m.marks):
        lam_h = mark.intensity * h
        counts = np.searchsorted(_poisson_table(lam_h), U[:, :, 1 + k].T, side="left")
        J += st.eta[k][:, None] * (counts - lam_h)
    sqrt_h = math.sqrt(h)
    for s in range(st.N):
        if record is not None and s in record:
            rec_out[record[s]] = X
        v = policy(st.times[s], X)
        X = st.growth[s] * X + v * (st.gap[s] * h + st.sigma[s] * sqrt_h * Z[s] + J[s])
    return X


def _jump_events(m: MarketModel, seed: int, start: int, stop: int):
    """Per-path sorted jump times on [0, T] with mark ids and sub-step normals."""
    T = m.T
    per_path = []
    for p in range(start, stop):
        times, ids, normals = [], [], []
        for k, mark in enumerate(m.marks):
            gen = _stream(seed, p, stream=1 + k)
            lt = mark.intensity * T
            batch = int(math.ceil(lt + 8.0 * math.sqrt(lt) + 8.0))
            clock = 0.0
            while clock < T:
                u = _to_uniform(gen.random_raw(2 * batch)).reshape(batch, 2)
                arrivals = clock + np.cumsum(-np.log(u[:, 0]) / mark.intensity)
                keep = arrivals < T
                times.append(arrivals[keep])
                normals.append(ndtri(u[keep, 1]))
                ids.append(np.full(int(keep.sum()), k))
                clock = arrivals[-1]
        t = np.concatenate(times) if times else np.empty(0)
        order = np.argsort(t, kind="stable")
        per_path.append(
            (
                t[order],
                np.concatenate(ids)[order] if ids else np.empty(0, int),
                np.concatenate(normals)[order] if normals else np.empty(0),
            )
        )
    width = max(1, max(len(e[0]) for e in per_path)) + 1
    n = stop - start
    ev_t = np.full((n, width), np.inf)
    ev_k = np.zeros((n, width), dtype=int)
    ev_z = np.zeros((n, width))
    for row, (t, k, z) in enumerate(per_path):
        ev_t[row, : t.size] = t
        ev_k[row, : t.size] = k
        ev_z[row, : t.size] = z
    return ev_t, ev_k, ev_z


def _diffuse(m: MarketModel, policy, t, dh, X, Z):
    """One predictable step of length dh from time t (arrays), jumps compensated."""
    v = policy(t, X)
    growth = np.exp(m.int_rho(t, t + dh))
    drift = (m.drift_gap(t) - m.jump_mean(t)) * dh
    return growth * X + v * (drift + m.sigma(t) * np.sqrt(dh) * Z)


def _run_exact(st: _Stepper, policy, X, U, events, record, rec_out):
    m, K = st.m, len(st.m.marks)
    n = X.size
    Z = np.ascontiguousarray(ndtri(U.reshape(n, st.N, 1 + K)[:, :, 0]).T)
    ev_t, ev_k, ev_z = events
    rows = np.arange(n)
    ptr = np.zeros(n, dtype=int)
    X = X.copy()
    for s in range(st.N):
        if record is not None and s in record:
            rec_out[record[s]] = X.copy()
        t0, t1 = st.times[s], st.times[s + 1]
        cur = np.full(n, t0)
        while True:
            nxt = ev_t[rows, ptr]
            idx = np.nonzero(nxt < t1)[0]
            if idx.size == 0:
                break
            tau = nxt[idx]
            col = ptr[idx]
            Xi = _diffuse(m, policy, cur[idx], tau - cur[idx], X[idx], ev_z[idx, col])
            v_jump = policy(tau, Xi)
            eta = np.empty(idx.size)
            for k, mark in enumerate(m.marks):
                sel = ev_k[idx, col] == k
                if sel.any():
                    eta[sel] = mark.eta(tau[sel])
            X[idx] = Xi + v_jump * eta
            cur[idx] = tau
            ptr[idx] += 1
        X = _diffuse(m, policy, cur, t1 - cur, X, Z[s])
    return X


def _simulate_chunk(
    m: MarketModel,
    policy: FeedbackPolicy,
    cfg: SimConfig,
    start: int,
    stop: int,
    record_steps: list[int] | None = None,
):
    st = _Stepper(m, cfg.n_steps(m.T))
    K = len(m.marks)
    U = _main_uniforms(cfg.seed, start, stop, st.N * (1 + K))
    X = np.full(stop - start, float(m.x0))
    record = None if record_steps is None else {s: j for j, s in enumerate(record_steps)}
    rec_out = None if record is None else [None] * len(record_steps)
    # overflow is reported below as NonFinite with the offending path index
    with np.errstate(over="ignore", invalid="ignore"):
        if cfg.scheme == "euler":
            X = _run_euler(st, policy, X, U, record, rec_out)
        else:
            events = _jump_events(m, cfg.seed, start, stop)
            X = _run_exact(st, policy, X, U, events, record, rec_out)
    if record is not None and st.N in record:
        rec_out[record[st.N]] = X
    bad = np.nonzero(~np.isfinite(X))[0]
    if bad.size:
        p = start + int(bad[0])
        raise NonFinite(f"wealth became non-finite on path {p}", path_index=p)
    return X, rec_out


def worker_count(workers: int | None = None) -> int:
    """Explicit ``workers``, else ``MVJUMP_THREADS``, else the CPU count."""
    if workers is None:
        env = os.environ.get("MVJUMP_THREADS")
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


def terminal_wealth(
    m: MarketModel,
    policy: FeedbackPolicy,
    cfg: SimConfig,
    workers: int | None = None,
) -> np.ndarray:
    """Terminal wealth of paths 0..n_paths-1, in path-index order."""
    bounds = [(a, min(a + CHUNK, cfg.n_paths)) for a in range(0, cfg.n_paths, CHUNK)]

    def run(b):
        return _simulate_chunk(m, policy, cfg, *b)[0]

    nw = min(worker_count(workers), len(bounds))
    if nw == 1:
        parts = [run(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            parts = list(pool.map(run, bounds))
    return np.concatenate(parts)


def simulate_path(m: MarketModel, policy: FeedbackPolicy, cfg: SimConfig, path_index: int) -> float:
    X, _ = _simulate_chunk(m, policy, cfg, path_index, path_index + 1)
    return float(X[0])


def sample_paths(
    m: MarketModel,
    policy: FeedbackPolicy,
    cfg: SimConfig,
    record_steps: list[int],
) -> tuple[np.ndarray, np.ndarray]:
    """States of paths 0..n_paths-1 at the given step indices.

    Returns ``(times, states)`` with ``states`` of shape (n_paths, len(record_steps)).
    """
    n_steps = cfg.n_steps(m.T)
    if any(not 0 <= s <= n_steps for s in record_steps):
        raise ValueError(f"record steps must lie in [0, {n_steps}]")
    parts = []
    for a in range(0, cfg.n_paths, CHUNK):
        _, rec = _simulate_chunk(m, policy, cfg, a, min(a + CHUNK, cfg.n_paths), list(record_steps))
        parts.append(np.stack(rec, axis=1))
    times = np.array([s * m.T / n_steps for s in record_steps])
    return times, np.concatenate(parts)


def monte_carlo(
    m: MarketModel,
    policy: FeedbackPolicy,
    cfg: SimConfig,
    workers: int | None = None,
) -> McEstimate:
    return McEstimate.from_samples(terminal_wealth(m, policy, cfg, workers), cfg.seed)
