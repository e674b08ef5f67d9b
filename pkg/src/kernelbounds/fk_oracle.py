"""Feynman-Kac Monte Carlo for T(t)f(x) and weighted masses.

Paths follow dY = (q'(Y) + F(Y)) dt + sqrt(2 q(Y)) dW (Euler-Maruyama,
d = 1) and carry the killing factor exp(-sum V(Y_i) dt) accumulated at
left points.  Paths are processed in fixed-size blocks, each with its own
counter-based Philox stream keyed by (seed, block index), so the result
does not depend on how blocks are scheduled over workers.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coefficients import eval_fields
from .errors import BlowupError, HeavyTailWarning

__all__ = ["MCConfig", "MCEstimate", "simulate", "estimate_semigroup", "estimate_xi"]

DRIFT_TARGET = 0.1
MAX_HALVINGS = 8


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 10_000
    dt: float = 1e-3
    seed: int = 0
    antithetic: bool = True
    block: int = 2048
    radius: float = 30.0
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("need at least two paths")
        if self.antithetic and (self.n_paths % 2 or self.block % 2):
            raise ValueError("antithetic sampling needs even path and block counts")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class MCEstimate:
    mean: float
    se: float
    n_paths: int
    killed_fraction: float
    ceiling: Optional[float] = None

    def within(self, value, k=3.0, extra=0.0):
        return abs(self.mean - value) <= k * self.se + extra


def _coeffs(spec, y):
    f = eval_fields(spec, y[:, None])
    q = f["Q"][:, 0, 0]
    return f["grad_Q"][:, 0, 0, 0] + f["F"][:, 0], np.sqrt(2 * q), f["V"]


def _block(spec, x, times, cfg, b, n):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, b])))
    marks = [max(1, int(round(t / cfg.dt))) for t in times]
    dts = [t / k for t, k in zip(times, marks)]
    y = np.full(n, float(x))
    logw = np.zeros(n)
    half = n // 2
    limit = 10 * cfg.radius
    out = {}
    for i in range(1, max(marks) + 1):
        # step size: the one of the earliest time not yet reached
        dt = next(d for k, d in zip(marks, dts) if k >= i)
        drift, sig, v = _coeffs(spec, y)
        if cfg.antithetic:
            z = rng.standard_normal(half)
            z = np.concatenate([z, -z])
        else:
            z = rng.standard_normal(n)
        with np.errstate(divide="ignore"):
            lev = np.ceil(np.log2(np.abs(drift) * dt / DRIFT_TARGET))
        lev = np.clip(np.nan_to_num(lev, nan=0.0, neginf=0.0), 0, MAX_HALVINGS).astype(int)
        plain = lev == 0
        logw[plain] -= v[plain] * dt
        y[plain] += drift[plain] * dt + sig[plain] * math.sqrt(dt) * z[plain]
        for L in np.unique(lev[~plain]):
            idx = np.flatnonzero(lev == L)
            m = 2**L
            h = dt / m
            yy, lw = y[idx], logw[idx]
            for _ in range(m):
                d2, s2, v2 = _coeffs(spec, yy)
                lw = lw - v2 * h
                yy = yy + d2 * h + s2 * math.sqrt(h) * rng.standard_normal(len(idx))
            y[idx], logw[idx] = yy, lw
        if not np.all(np.abs(y) <= limit):
            raise BlowupError(f"path left |y| <= {limit:g}; check the drift sign")
        for t, k in zip(times, marks):
            if k == i:
                out[t] = (y.copy(), logw.copy())
    return out


def _blocks(cfg):
    sizes, left = [], cfg.n_paths
    while left > 0:
        sizes.append(min(cfg.block, left))
        left -= sizes[-1]
    return sizes


def simulate(spec, x, t, cfg):
    """Endpoints Y_t and log killing weights for every path, in block order.

    With a sequence of times the same paths are recorded at each of them
    and a dict keyed by time is returned.
    """
    if spec.dim != 1:
        raise NotImplementedError("the Monte Carlo oracle handles d = 1")
    many = np.ndim(t) > 0
    times = sorted(float(s) for s in np.atleast_1d(t))
    jobs = list(enumerate(_blocks(cfg)))

    def run(job):
        return _block(spec, x, times, cfg, job[0], job[1])

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    res = {s: (np.concatenate([o[s][0] for o in parts]),
               np.concatenate([o[s][1] for o in parts])) for s in times}
    return res if many else res[times[0]]


def _estimate(vals, weights, cfg):
    n = len(vals)
    mean = math.fsum(vals) / n
    if cfg.antithetic:
        # pairs are (i, i + half) within each block
        pairs = []
        start = 0
        for size in _blocks(cfg):
            half = size // 2
            blk = vals[start:start + size]
            pairs.append(0.5 * (blk[:half] + blk[half:]))
            start += size
        pm = np.concatenate(pairs)
        se = float(np.std(pm, ddof=1) / math.sqrt(len(pm))) if len(pm) > 1 else 0.0
    else:
        se = float(np.std(vals, ddof=1) / math.sqrt(n))
    killed = 1.0 - math.fsum(weights) / n
    return MCEstimate(mean=mean, se=se, n_paths=n, killed_fraction=killed)


def estimate_semigroup(spec, x, t, f, cfg, paths=None):
    """Monte Carlo estimate of T(t)f(x) = E[f(Y_t) exp(-int V(Y_s) ds)].

    ``paths`` may carry a (Y_t, log weight) pair from ``simulate``.
    """
    y, logw = paths if paths is not None else simulate(spec, x, t, cfg)
    w = np.exp(logw)
    return _estimate(np.asarray(f(y), dtype=float) * w, w, cfg)


def estimate_xi(spec, x, t, W, cfg, h_integral=None, paths=None):
    """Monte Carlo estimate of xi_W(t, x) = E[W(t, Y_t) exp(-int V)].

    With ``h_integral`` (the integral of h over (0, t]) the ceiling
    exp(h_integral) W(0, x) is attached to the result.
    """
    y, logw = paths if paths is not None else simulate(spec, x, t, cfg)
    vals = np.exp(W.log_value(t, y[:, None]) + logw)
    est = _estimate(vals, np.exp(logw), cfg)
    total = math.fsum(vals)
    if total > 0:
        top = np.sort(vals)[-max(1, len(vals) // 100):]
        if math.fsum(top) > 0.5 * total:
            warnings.warn("top 1% of paths carry more than half of the estimate",
                          HeavyTailWarning, stacklevel=2)
    if h_integral is not None:
        w0 = float(np.exp(W.log_value(0.0, np.array([[float(x)]])))[0])
        est.ceiling = math.exp(h_integral) * w0
    return est
