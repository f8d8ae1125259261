"""Composite Gauss-Legendre quadrature over backward light cones.

In characteristic coordinates u = kappa*s - y, w = kappa*s + y the backward
cone of (t, x) is the triangle {u <= A, w <= B, u + w >= 0} with
A = kappa*t - x and B = kappa*t + x, and ds dy = du dw / (2 kappa).
Break lines are supplied as fixed u or w values; lines flagged singular get
geometrically graded panels.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

_ORDER = 10
_GRADED_ORDER = 12
_GRADE_RATIO = 0.2
_GRADE_LEVELS = 16
# innermost graded panel uses u = eps * tau^m, which turns u^{-alpha} into a smooth-enough power
_INNER_POWER = 24


class QuadratureError(RuntimeError):
    pass


@lru_cache(maxsize=None)
def _gauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _panel_rule(lo, hi, order):
    g, gw = _gauss(order)
    return lo[:, None] + (hi - lo)[:, None] * g[None, :], (hi - lo)[:, None] * gw[None, :]


def _inner_rule(eps):
    # int_0^eps f(u) du = int_0^1 f(eps tau^m) eps m tau^{m-1} d tau
    g, gw = _gauss(_GRADED_ORDER)
    m = _INNER_POWER
    return eps * g**m, eps * m * g ** (m - 1) * gw


def _graded_side():
    """Offsets from a singular end and weights, covering [0, 1] of the first plain panel."""
    grid = _GRADE_RATIO ** np.arange(_GRADE_LEVELS, -1, -1)
    x, w = _panel_rule(grid[:-1], grid[1:], _GRADED_ORDER)
    xi, wi = _inner_rule(grid[0])
    return np.concatenate([xi, x.ravel()]), np.concatenate([wi, w.ravel()])


@lru_cache(maxsize=None)
def _unit_rule(n_uniform, left_sing, right_sing):
    """Rule on [0, 1] as (offsets from 0, weights, offsets from 1, weights).

    Nodes near a singular end are stored as offsets from that end so they never
    round onto it.
    """
    if left_sing and right_sing and n_uniform == 1:
        n_uniform = 2
    edges = np.linspace(0.0, 1.0, n_uniform + 1)
    lo, hi = edges[:-1], edges[1:]
    left_x, left_w, right_d, right_w = [], [], [], []
    if left_sing:
        d, w = _graded_side()
        left_x.append(d * hi[0]), left_w.append(w * hi[0])
        lo, hi = lo[1:], hi[1:]
    if right_sing:
        size = hi[-1] - lo[-1]
        d, w = _graded_side()
        right_d.append(d * size), right_w.append(w * size)
        lo, hi = lo[:-1], hi[:-1]
    if len(lo):
        x, w = _panel_rule(lo, hi, _ORDER)
        left_x.append(x.ravel()), left_w.append(w.ravel())
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0)
    return cat(left_x), cat(left_w), cat(right_d), cat(right_w)


def _map(lo, hi, rule):
    """Map a unit rule onto [lo, hi] (arrays broadcast along a leading axis)."""
    lx, lw, rd, rw = rule
    length = hi - lo
    x = np.concatenate([lo[..., None] + length[..., None] * lx, hi[..., None] - length[..., None] * rd], axis=-1)
    w = np.concatenate([length[..., None] * lw, length[..., None] * rw], axis=-1)
    return x, w


def _near(v, pts, scale):
    return any(abs(v - p) <= 1e-12 * max(1.0, scale) for p in pts)


def _triangle_once(f, A, B, ubreaks, wbreaks, using, wsing, h):
    scale = abs(A) + abs(B)
    ucuts = {-B, A}
    ucuts.update(b for b in ubreaks if -B < b < A)
    ucuts.update(-b for b in wbreaks if -B < -b < A)
    ucuts = sorted(ucuts)
    using_all = list(using) + [-b for b in wsing]
    total = 0.0
    for u0, u1 in zip(ucuts[:-1], ucuts[1:]):
        if u1 - u0 <= 0:
            continue
        nu = max(1, math.ceil((u1 - u0) / h))
        rule = _unit_rule(nu, _near(u0, using_all, scale), _near(u1, using_all, scale))
        U, WU = _map(np.asarray(u0), np.asarray(u1), rule)
        umid = 0.5 * (u0 + u1)
        # w break points strictly inside (-u, B) for u in this slab
        wcuts = sorted(b for b in wbreaks if -umid < b < B)
        lowers = [None] + wcuts
        uppers = wcuts + [B]
        # the moving lower limit -u meets a singular w line at a slab end
        moving_sing = _near(-u0, wsing, scale) or _near(-u1, wsing, scale)
        for lo, hi in zip(lowers, uppers):
            lo_arr = -U if lo is None else np.full_like(U, lo)
            hi_arr = np.full_like(U, hi)
            nw = max(1, math.ceil(float(np.max(hi_arr - lo_arr)) / h))
            left_s = moving_sing if lo is None else _near(lo, wsing, scale)
            right_s = _near(hi, wsing, scale)
            W, WW = _map(lo_arr, hi_arr, _unit_rule(nw, left_s, right_s))
            vals = f(np.broadcast_to(U[:, None], W.shape), W)
            total += float(np.sum(vals * WW * WU[:, None]))
    return total


def triangle_quad(f, A, B, ubreaks=(), wbreaks=(), using=(), wsing=(),
                  h=None, rtol=1e-10, atol=1e-14, max_halvings=6):
    """Integral of f(u, w) over {u <= A, w <= B, u + w >= 0}.

    Refines by halving the panel length until two successive estimates agree.
    """
    if A + B <= 0:
        return 0.0
    if h is None:
        h = max((A + B) / 4.0, 1e-3)
    prev = _triangle_once(f, A, B, ubreaks, wbreaks, using, wsing, h)
    for _ in range(max_halvings):
        h *= 0.5
        cur = _triangle_once(f, A, B, ubreaks, wbreaks, using, wsing, h)
        change = abs(cur - prev)
        if change <= max(atol, rtol * abs(cur)):
            return cur
        prev = cur
    raise QuadratureError(f"cone quadrature did not reach rtol={rtol} (last change {change:.3e})")
