"""Estimators for growth rates, growth indices and Hoelder exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import closed_moments as cm
from .simulator import GridSpec, _Geometry, map_reduce_paths

__all__ = [
    "fit_lyapunov",
    "RayScan",
    "growth_index_scan",
    "HolderQuery",
    "predicted_holder",
    "HolderFit",
    "empirical_holder",
    "holder_lower_bound_check",
]


# ---------------------------------------------------------------- Lyapunov exponents


def fit_lyapunov(series, window) -> float:
    """Least-squares slope of log(moment) against t over ``window``."""
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("series must be a sequence of (t, value) pairs")
    t, m = arr[:, 0], arr[:, 1]
    if np.any(np.diff(t) <= 0):
        raise ValueError("series times must be strictly increasing")
    lo, hi = window
    if lo < t[0] or hi > t[-1]:
        raise ValueError(f"window [{lo}, {hi}] is outside the series range [{t[0]}, {t[-1]}]")
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 3:
        raise ValueError("fewer than 3 points in the fitting window")
    if np.any(m[sel] <= 0):
        raise ValueError("moment values must be positive")
    slope, _ = np.polyfit(t[sel], np.log(m[sel]), 1)
    return float(slope)


# ---------------------------------------------------------------- growth indices


@dataclass
class RayScan:
    """t^{-1} log sup_{|x| >= alpha t} E[u^2] per ray slope alpha.

    ``crossing`` is the interpolated sign change; when the scan has none,
    ``bracket`` holds the one-sided information (lo, hi) with None for the
    missing side.
    """

    alphas: np.ndarray
    t_eval: float
    values: np.ndarray
    crossing: Optional[float] = None
    bracket: tuple = (None, None)

    def __post_init__(self):
        if np.any(np.diff(self.alphas) <= 0):
            raise ValueError("alphas must be strictly increasing")


def _crossing(alphas, values):
    for n in range(len(alphas) - 1):
        v1, v2 = values[n], values[n + 1]
        if v1 == 0:
            return float(alphas[n]), (float(alphas[n]), float(alphas[n]))
        if v1 > 0 and v2 <= 0:
            if v2 == 0:
                return float(alphas[n + 1]), (float(alphas[n]), float(alphas[n + 1]))
            # v2 = -inf (zero moment) puts the crossing on the positive side
            frac = 0.0 if np.isinf(v2) else v1 / (v1 - v2)
            a = alphas[n] + frac * (alphas[n + 1] - alphas[n])
            return float(a), (float(alphas[n]), float(alphas[n + 1]))
    if values[-1] == 0:
        return float(alphas[-1]), (float(alphas[-1]), float(alphas[-1]))
    if np.all(values > 0):
        return None, (float(alphas[-1]), None)
    return None, (None, float(alphas[0]))


def growth_index_scan(field: Callable[[float, float], float], alphas: Sequence[float],
                      t_eval: float, kappa: float, x_max: Optional[float] = None,
                      n_extra: int = 16) -> RayScan:
    """Scan ray slopes and locate where the growth rate changes sign.

    The sup over |x| >= alpha t is taken over one shared point set: the ray
    points +-alpha t plus ``n_extra`` evenly spaced points per side up to
    ``x_max`` (default (max alpha + kappa) t). Sharing the set makes the
    values nonincreasing in alpha.
    """
    al = np.asarray(alphas, dtype=float)
    if np.any(al <= 0):
        raise ValueError("ray slopes must be positive")
    if t_eval <= 0:
        raise ValueError("t_eval must be positive")
    if x_max is None:
        x_max = (al[-1] + kappa) * t_eval
    pts = np.unique(np.concatenate([al * t_eval,
                                    np.linspace(al[0] * t_eval, x_max, n_extra)]))
    sup_right = np.array([field(t_eval, x) for x in pts])
    sup_left = np.array([field(t_eval, -x) for x in pts])
    vals = np.maximum(sup_right, sup_left)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("second-moment field returned a negative or non-finite value")
    # tail maxima: entry n is the sup over pts[n:]
    tail = np.maximum.accumulate(vals[::-1])[::-1]
    idx = np.searchsorted(pts, al * t_eval * (1 - 1e-12))
    with np.errstate(divide="ignore"):
        out = np.log(tail[idx]) / t_eval
    cross, bracket = _crossing(al, out)
    return RayScan(al, float(t_eval), out, cross, bracket)


# ---------------------------------------------------------------- Hoelder exponents


@dataclass(frozen=True)
class HolderQuery:
    """Integrability order gamma of the initial position (g in L^{2 gamma}_loc).

    ``a`` is an optional power-law singularity exponent, g(x) = |x|^{-a}.
    """

    gamma: float = math.inf
    a: Optional[float] = None

    def __post_init__(self):
        if not self.gamma >= 1:
            raise ValueError("gamma must be >= 1")
        if self.a is not None and not 0 <= self.a < 0.5:
            raise ValueError("a must lie in [0, 1/2)")

    @property
    def gamma_dual(self) -> float:
        if math.isinf(self.gamma):
            return 1.0
        if self.gamma == 1:
            return math.inf
        return self.gamma / (self.gamma - 1.0)

    @property
    def consistent(self) -> bool:
        """|x|^{-a} lies in L^{2 gamma}_loc, i.e. gamma < 1/(2a)."""
        return self.a is None or self.a == 0 or self.gamma < 1.0 / (2.0 * self.a)


def predicted_holder(q: HolderQuery) -> float:
    if q.a is not None:
        return (1.0 - 2.0 * q.a) / 2.0
    return 0.5 / q.gamma_dual


@dataclass
class HolderFit:
    exponent: float
    lags: np.ndarray
    rms: np.ndarray
    direction: str
    n_paths: int
    degenerate: bool = False
    intercept: float = field(default=float("nan"))


def _node_col(geo: _Geometry, x: float) -> int:
    c = int(round((x - geo.win_x[0]) / geo.grid.dx))
    if not (0 <= c < geo.n_win) or abs(geo.win_x[c] - x) > 1e-9 * max(1.0, abs(x)):
        raise ValueError(f"region too small for lag set: x={x:.6g} is not inside the output window")
    return c


def empirical_holder(grid: GridSpec, init: cm.InitialData, rho, kappa: float, t: float,
                     centers: Sequence[float], lags: Sequence[float], direction: str = "x",
                     align: str = "center", n_threads: int = 1) -> HolderFit:
    """L^2-increment exponent of the stochastic term I = u - J0.

    Each center c and lag h give a pair of points split along ``direction``:
    (c - h/2, c + h/2) for align="center", (c - h, c) for "right" and
    (c, c + h) for "left"; the other coordinate is held at t (direction "x")
    or at c (direction "t", where c is read as a position). Mean squares are
    averaged over the centers and the exponent is the slope of
    log sqrt(mean square) against log h. Every pair point must be a lattice
    node inside the grid window.
    """
    if direction not in ("x", "t"):
        raise ValueError("direction must be 'x' or 't'")
    split = {"center": (-0.5, 0.5), "right": (-1.0, 0.0), "left": (0.0, 1.0)}
    if align not in split:
        raise ValueError("align must be 'center', 'left' or 'right'")
    wa, wb = split[align]
    lags = np.asarray(sorted(lags), dtype=float)
    if len(lags) < 2:
        raise ValueError("need at least two lags")
    if lags[0] <= 0:
        raise ValueError("lags must be positive")
    geo = _Geometry(grid)
    pairs = []  # (lag index, level a, col a, level b, col b)
    for n, h in enumerate(lags):
        for c in centers:
            if direction == "x":
                ka = kb = int(round(t / grid.dt))
                xa, xb = c + wa * h, c + wb * h
            else:
                ka, kb = int(round((t + wa * h) / grid.dt)), int(round((t + wb * h) / grid.dt))
                if ka < 0 or kb > geo.K:
                    raise ValueError("region too small for lag set: time pair leaves [0, t_max]")
                xa = xb = c
            ca, cb = _node_col(geo, xa), _node_col(geo, xb)
            if not (geo.win_mask[ka, ca] and geo.win_mask[kb, cb]):
                raise ValueError(f"pair for lag {h:.6g} at center {c:.6g} is off the lattice parity")
            pairs.append((n, ka, ca, kb, cb))
    levels = sorted({p[1] for p in pairs} | {p[3] for p in pairs})
    pos = {k: i for i, k in enumerate(levels)}
    la = np.array([pos[p[1]] for p in pairs])
    ca = np.array([p[2] for p in pairs])
    lb = np.array([pos[p[3]] for p in pairs])
    cb = np.array([p[4] for p in pairs])
    which = np.array([p[0] for p in pairs])

    def reducer(u, I, ctx):
        d = I[:, la, ca] - I[:, lb, cb]
        return {"sq": np.sum(d * d, axis=0)}

    tot, _ = map_reduce_paths(grid, init, rho, kappa, reducer, keep=levels, n_threads=n_threads)
    per_pair = tot["sq"] / grid.n_paths
    ms = np.array([per_pair[which == n].mean() for n in range(len(lags))])
    if np.all(ms == 0):
        return HolderFit(float("nan"), lags, np.zeros_like(ms), direction, grid.n_paths, degenerate=True)
    if np.any(ms <= 0):
        raise ValueError("some lags show zero increments; the field is partially degenerate")
    rms = np.sqrt(ms)
    slope, icept = np.polyfit(np.log(lags), np.log(rms), 1)
    return HolderFit(float(slope), lags, rms, direction, grid.n_paths, False, float(icept))


def holder_lower_bound_check(a: float, t: float, lags: Sequence[float], kappa: float, lam: float):
    """(h, lhs, rhs) for the spatial increment at the cone edge x = kappa t.

    lhs = lam^2 L(t, kappa t, kappa t - h), the exact G^2-part of
    ||I(t, kappa t) - I(t, kappa t - h)||_2^2 with g = |x|^{-a}, and
    rhs = lam^2 t h^{1-2a} / (16 (1 - 2a)).
    """
    if not 0 <= a < 0.5:
        raise ValueError("a must lie in [0, 1/2)")
    out = []
    x = kappa * t
    for h in lags:
        if not 0 < h <= 2 * kappa * t:
            raise ValueError("lags must lie in (0, 2 kappa t]")
        lhs = lam * lam * cm.powerlaw_increment(t, x, x - h, a, kappa)
        rhs = lam * lam * t * h ** (1.0 - 2.0 * a) / (16.0 * (1.0 - 2.0 * a))
        out.append((float(h), float(lhs), float(rhs)))
    return out
