"""Monte Carlo for the mild form u = J0 + int int G(t-s, x-y) rho(u(s,y)) W(ds, dy).

Lattice
-------
Nodes sit at (t_k, x_i) = (k dt, (i + shift) dx) with dx = kappa dt and
i = k (mod 2). Noise lives on diamonds with vertices (l, j), (l+1, j-1),
(l+1, j+1), (l+2, j); on the first row the cells are the upper halves of such
diamonds, i.e. triangles resting on t = 0. Backward light cones of nodes are
exact unions of these cells, so no cell is ever cut by a cone boundary. The
diamond with bottom vertex (l, j) carries rho(c(l, j) + I(t_l, x_j)) times a
white-noise increment of variance equal to its area (2 dt dx; dt dx for the
triangles). Here c is the root-mean-square of J0 over the diamond, signed by
its mean: J0 is deterministic, so averaging it keeps the scheme adapted, and
for linear couplings each cell then carries the exact integral of J0^2. This
matters next to singular characteristics, where a point value badly
misrepresents the cell. Triangles use g directly below their top node.

With I(k, i) the stochastic term, inclusion-exclusion over two overlapping
cones gives

    I(k, i) = I(k-1, i-1) + I(k-1, i+1) - I(k-2, i) + rho(c(k-2, i) + I(k-2, i)) xi(k-2, i) / 2,

so each path costs O(n_t n_x).

Reproducibility
---------------
Each path draws its noise from its own Philox stream keyed by
(master_seed, path_index), in a fixed cell order. Paths are processed in
batches whose size depends only on the grid; per-batch partial sums are merged
in batch order, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .closed_moments import (
    InitialData,
    Linear,
    LipschitzEnvelope,
    QuasiLinear,
    SingularPointError,
    j0_wave,
)

__all__ = [
    "GridSpec",
    "UserRho",
    "NoiseField",
    "FieldEstimate",
    "sample_noise",
    "simulate_path",
    "simulate_path_direct",
    "discrete_second_moment",
    "map_reduce_paths",
    "mc_moments",
]

_BATCH_CELLS = 1 << 22
_MAX_BATCH = 512
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class GridSpec:
    """Simulation grid. The output window is [x_min, x_max] for 0 <= t <= t_max.

    ``x_shift`` moves nodes to (i + x_shift) dx; 0.5 keeps nodes off the
    characteristic lines through the origin.
    """

    t_max: float
    x_min: float
    x_max: float
    dt: float
    kappa: float = 1.0
    n_paths: int = 1000
    master_seed: int = 0
    x_shift: float = 0.0

    def __post_init__(self):
        if not (self.t_max > 0 and self.dt > 0 and self.kappa > 0):
            raise ValueError("t_max, dt and kappa must be positive")
        if not self.x_min < self.x_max:
            raise ValueError("need x_min < x_max")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if not 0 <= self.master_seed <= _SEED_MASK:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        k = round(self.t_max / self.dt)
        if abs(k * self.dt - self.t_max) > 1e-9 * self.t_max:
            raise ValueError("t_max must be a whole number of time steps")

    @property
    def dx(self) -> float:
        return self.kappa * self.dt

    @property
    def n_t(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass(frozen=True)
class UserRho:
    """A user-supplied coupling rho(u) (vectorised) with its declared Lipschitz envelope."""

    fn: Callable
    envelope: LipschitzEnvelope


def _rho_fn(rho):
    if isinstance(rho, Linear):
        lam = rho.lam
        return lambda u: lam * u
    if isinstance(rho, QuasiLinear):
        lam, vb = rho.lam, rho.vbar
        if vb == 0:
            return lambda u: lam * u
        return lambda u: lam * np.sqrt(vb * vb + u * u)
    if isinstance(rho, UserRho):
        return rho.fn
    raise TypeError(f"cannot simulate with coupling {rho!r}; use Linear, QuasiLinear or UserRho")


class _Geometry:
    """Index bookkeeping for the trapezoid of nodes that feeds the output window.

    Columns c = 0..W-1 stand for i = c + off. Level k uses columns k..W-1-k of
    matching parity; the output window is columns n_t..n_t + n_win - 1.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        K = grid.n_t
        dx = grid.dx
        eps = 1e-9
        i_lo = math.ceil(grid.x_min / dx - grid.x_shift - eps)
        i_hi = math.floor(grid.x_max / dx - grid.x_shift + eps)
        if i_hi < i_lo:
            raise ValueError("output window contains no lattice column")
        self.K = K
        self.n_win = i_hi - i_lo + 1
        self.off = i_lo - K
        self.W = self.n_win + 2 * K
        self.levels = [self._cols(k) for k in range(K + 1)]
        self.cell_offsets = np.cumsum([0] + [len(self.levels[k]) for k in range(1, K + 1)])
        self.n_cells = int(self.cell_offsets[-1])
        self.win = slice(K, K + self.n_win)
        self.win_x = (np.arange(i_lo, i_hi + 1) + grid.x_shift) * dx
        self.times = np.arange(K + 1) * grid.dt
        par = (np.arange(i_lo, i_hi + 1)[None, :] - np.arange(K + 1)[:, None]) % 2 == 0
        self.win_mask = par

    def _cols(self, k):
        start = k
        if (start + self.off - k) % 2:
            start += 1
        return np.arange(start, self.W - k, 2)

    def x_of(self, cols):
        return (cols + self.off + self.grid.x_shift) * self.grid.dx

    def batch_size(self):
        per_path = max(self.W, (self.K + 1) * self.n_win)
        return int(max(1, min(_MAX_BATCH, _BATCH_CELLS // per_path)))


def _j0_levels(geo: _Geometry, init: InitialData, kappa):
    """J0 on every level's columns (full-width rows, zero elsewhere); level 0 is g itself."""
    out = np.zeros((geo.K + 1, geo.W))
    for k, cols in enumerate(geo.levels):
        x = geo.x_of(cols)
        if k == 0:
            vals = init.position.value(x)
        else:
            try:
                vals = j0_wave(geo.times[k], x, init, kappa)
            except SingularPointError as exc:
                raise SingularPointError(
                    f"J0 is singular at a lattice node on level {k}; shift the lattice (x_shift=0.5)") from exc
        vals = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise SingularPointError(f"J0 is not finite on level {k}; shift the lattice (x_shift=0.5)")
        out[k, cols] = vals
    return out


_GL = np.polynomial.legendre.leggauss(10)


def _piece_integrals(fn, lo, hi, singular):
    """(int fn, int fn^2) over [lo, hi]; fn is smooth inside, possibly singular at an end."""
    if any(abs(lo - p) < 1e-14 or abs(hi - p) < 1e-14 for p in singular):
        one = integrate.quad(lambda v: float(fn(v)), lo, hi, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
        two = integrate.quad(lambda v: float(fn(v)) ** 2, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
        return one, two
    x, w = _GL
    v = fn(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
    h = 0.5 * (hi - lo)
    return h * float(np.dot(w, v)), h * float(np.dot(w, v * v))


def _interval_means(fn, edges, breaks, singular):
    """Means of fn and fn^2 over consecutive intervals [edges[n], edges[n+1]]."""
    cuts = np.array(sorted(set(breaks) | set(singular)), dtype=float)
    m1 = np.empty(len(edges) - 1)
    m2 = np.empty(len(edges) - 1)
    for n, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        inner = cuts[(cuts > lo) & (cuts < hi)]
        pts = np.concatenate([[lo], inner, [hi]])
        a = b = 0.0
        for p, q in zip(pts[:-1], pts[1:]):
            da, db = _piece_integrals(fn, p, q, singular)
            a, b = a + da, b + db
        m1[n], m2[n] = a / (hi - lo), b / (hi - lo)
    return m1, m2


def _j0_cells(geo: _Geometry, init: InitialData, kappa):
    """Signed RMS of J0 over every diamond, indexed by its bottom vertex (levels 0..K-2).

    A diamond is the square [u_b, u_b + 2dx] x [w_b, w_b + 2dx] in u = kappa t - x,
    w = kappa t + x, and J0 = P(u) + Q(w) there, so both moments factor into
    one-dimensional interval means.
    """
    grid = geo.grid
    dx = grid.dx
    out = np.zeros((max(geo.K - 1, 0), geo.W))
    if geo.K < 2:
        return out
    ub, wb, us, ws = init.char_breaks()
    u_all, w_all = [], []
    for l in range(geo.K - 1):
        x = geo.x_of(geo.levels[l])
        u_all.append(kappa * geo.times[l] - x)
        w_all.append(kappa * geo.times[l] + x)
    # interval ends lie on one grid of spacing 2 dx; index them from a common origin
    u0 = min(float(np.min(u)) for u in u_all)
    w0 = min(float(np.min(w)) for w in w_all)
    nu = int(round((max(float(np.max(u)) for u in u_all) - u0) / (2 * dx))) + 1
    nw = int(round((max(float(np.max(w)) for w in w_all) - w0) / (2 * dx))) + 1
    p1, p2 = _interval_means(init.P, u0 + 2 * dx * np.arange(nu + 1), ub, us)
    q1, q2 = _interval_means(init.Q, w0 + 2 * dx * np.arange(nw + 1), wb, ws)
    for l, cols in enumerate(geo.levels[:geo.K - 1]):
        iu = np.rint((u_all[l] - u0) / (2 * dx)).astype(int)
        iw = np.rint((w_all[l] - w0) / (2 * dx)).astype(int)
        mean = p1[iu] + q1[iw]
        ms = p2[iu] + 2.0 * p1[iu] * q1[iw] + q2[iw]
        out[l, cols] = np.where(mean < 0, -1.0, 1.0) * np.sqrt(np.maximum(ms, 0.0))
    return out


def _path_key(seed, path):
    return np.array([seed & _SEED_MASK, path & _SEED_MASK], dtype=np.uint64)


def _standard_normals(geo: _Geometry, seed: int, path: int):
    gen = np.random.Generator(np.random.Philox(key=_path_key(seed, path)))
    return gen.standard_normal(geo.n_cells)


@dataclass
class NoiseField:
    """Noise increments by top level: ``levels[k]`` holds (lattice indices i, increments) of the cells topped at level k."""

    grid: GridSpec
    levels: dict
    areas: dict


def sample_noise(grid: GridSpec, path_index: int) -> NoiseField:
    """The noise increments a path uses; each has variance equal to its cell area."""
    if not 0 <= path_index < grid.n_paths:
        raise ValueError("path_index out of range")
    geo = _Geometry(grid)
    z = _standard_normals(geo, grid.master_seed, path_index)
    area = grid.dt * grid.dx
    levels, areas = {}, {}
    for k in range(1, geo.K + 1):
        cols = geo.levels[k]
        a = area if k == 1 else 2.0 * area
        vals = math.sqrt(a) * z[geo.cell_offsets[k - 1]: geo.cell_offsets[k]]
        levels[k] = (cols + geo.off, vals)
        areas[k] = a
    return NoiseField(grid, levels, areas)


def _simulate_batch(geo: _Geometry, jc, g1, rho_fn, paths, keep):
    """Stochastic terms I on the kept levels, shape (len(paths), len(keep), n_win)."""
    grid = geo.grid
    B = len(paths)
    W, K = geo.W, geo.K
    z = np.empty((B, geo.n_cells))
    for b, p in enumerate(paths):
        z[b] = _standard_normals(geo, grid.master_seed, p)
    area = grid.dt * grid.dx
    s_tri, s_dia = 0.5 * math.sqrt(area), 0.5 * math.sqrt(2.0 * area)
    keep_pos = {k: n for n, k in enumerate(keep)}
    out = np.zeros((B, len(keep), geo.n_win))
    # three rotating rows: levels k-2, k-1, k; off-parity entries are never read
    bufs = [np.zeros((B, W)) for _ in range(3)]
    for k in range(1, K + 1):
        cols = geo.levels[k]
        sl = slice(int(cols[0]), int(cols[-1]) + 1, 2)
        left = slice(sl.start - 1, sl.stop - 1, 2)
        right = slice(sl.start + 1, sl.stop + 1, 2)
        zk = z[:, geo.cell_offsets[k - 1]: geo.cell_offsets[k]]
        cur, prev, prev2 = bufs[k % 3], bufs[(k - 1) % 3], bufs[(k - 2) % 3]
        if k == 1:
            # triangles resting on t = 0 carry rho(g) taken directly below the node
            cur[:, sl] = s_tri * rho_fn(np.broadcast_to(g1, (B, len(cols)))) * zk
        else:
            u_bottom = jc[k - 2, sl][None, :] + prev2[:, sl]
            cur[:, sl] = prev[:, left] + prev[:, right] - prev2[:, sl] + s_dia * rho_fn(u_bottom) * zk
        if k in keep_pos:
            out[:, keep_pos[k]] = np.where(geo.win_mask[k], cur[:, geo.win], 0.0)
    return out


def _prepare(grid, init, rho, kappa):
    if abs(kappa - grid.kappa) > 1e-15 * max(1.0, kappa):
        raise ValueError("kappa disagrees with the grid's kappa")
    geo = _Geometry(grid)
    j0 = _j0_levels(geo, init, kappa)
    # g below the level-1 nodes (those positions are not level-0 nodes)
    g1 = np.asarray(init.position.value(geo.x_of(geo.levels[1])), dtype=float)
    if not np.all(np.isfinite(g1)):
        raise SingularPointError("g is not finite below a level-1 node; shift the lattice")
    return geo, j0, _j0_cells(geo, init, kappa), g1, _rho_fn(rho)


def simulate_path(grid: GridSpec, init: InitialData, rho, kappa: float, path_index: int):
    """(times, xs, u) for one path on the output window; off-parity entries are NaN."""
    if not 0 <= path_index < grid.n_paths:
        raise ValueError("path_index out of range")
    geo, j0, jc, g1, rfn = _prepare(grid, init, rho, kappa)
    keep = list(range(geo.K + 1))
    I = _simulate_batch(geo, jc, g1, rfn, [path_index], keep)[0]
    u = j0[:, geo.win] + I
    return geo.times, geo.win_x, np.where(geo.win_mask, u, np.nan)


def simulate_path_direct(grid: GridSpec, init: InitialData, rho, kappa: float, path_index: int):
    """Reference O(n_t^2 n_x) evaluation: sum rho(u(bottom)) xi / 2 over all cells in each backward cone."""
    geo, j0, jc, g1, rfn = _prepare(grid, init, rho, kappa)
    noise = sample_noise(grid, path_index)
    K, W = geo.K, geo.W
    u = np.full((K + 1, W), np.nan)
    u[0, geo.levels[0]] = j0[0, geo.levels[0]]
    # contributions: list of (level of top, columns, rho(u(bottom)) * xi / 2)
    contrib = []
    for k in range(1, K + 1):
        cols = geo.levels[k]
        if k == 1:
            rho_b = rfn(g1)
        else:
            rho_b = rfn(jc[k - 2, cols] + u[k - 2, cols] - j0[k - 2, cols])
        contrib.append((k, cols, 0.5 * rho_b * noise.levels[k][1]))
        vals = j0[k, cols].copy()
        for top, ccols, w in contrib:
            # cell topped at (top, c) lies in the backward cone of (k, i) iff |c - i| <= k - top
            near = np.abs(ccols[None, :] - cols[:, None]) <= (k - top)
            vals += near @ w
        u[k, cols] = vals
    out = u[:, geo.win]
    return geo.times, geo.win_x, np.where(geo.win_mask, out, np.nan)


def discrete_second_moment(grid: GridSpec, init: InitialData, rho, kappa: float):
    """Exact second moment of the lattice scheme (no sampling), for Linear/QuasiLinear rho.

    Uses E[rho(c + I)^2] = lam^2 (vbar^2 + c^2 + E[I^2]) cell by cell with the
    same inclusion-exclusion recursion as the paths.
    """
    if isinstance(rho, Linear):
        lam, vb = rho.lam, 0.0
    elif isinstance(rho, QuasiLinear):
        lam, vb = rho.lam, rho.vbar
    else:
        raise TypeError("discrete_second_moment needs a Linear or QuasiLinear coupling")
    geo, j0, jc, g1, _ = _prepare(grid, init, rho, kappa)
    K, W = geo.K, geo.W
    area = grid.dt * grid.dx
    f = np.zeros((K + 1, W))
    f[0] = j0[0] ** 2
    s_prev2 = np.zeros(W)
    s_prev = np.zeros(W)
    for k in range(1, K + 1):
        cols = geo.levels[k]
        s = np.zeros(W)
        if k == 1:
            s[cols] = area * lam * lam * (vb * vb + g1 * g1)
        else:
            s[cols] = (s_prev[cols - 1] + s_prev[cols + 1] - s_prev2[cols]
                       + 2.0 * area * lam * lam * (vb * vb + jc[k - 2, cols] ** 2 + 0.25 * s_prev2[cols]))
        f[k, cols] = j0[k, cols] ** 2 + 0.25 * s[cols]
        s_prev2, s_prev = s_prev, s
    return geo.times, geo.win_x, np.where(geo.win_mask, f[:, geo.win], np.nan)


# ---------------------------------------------------------------- batched reductions


def map_reduce_paths(grid: GridSpec, init: InitialData, rho, kappa: float, reducer,
                     keep=None, n_threads: int = 1):
    """Run every path and reduce.

    ``reducer(u, I, ctx)`` receives arrays of shape (batch, len(keep), n_win) and
    returns a dict of arrays that are summed over batches in batch order.
    ``ctx`` carries times, xs, the parity mask and J0 on the kept levels.
    """
    geo, j0, jc, g1, rfn = _prepare(grid, init, rho, kappa)
    keep = list(range(geo.K + 1)) if keep is None else sorted(set(int(k) for k in keep))
    j0_keep = j0[keep][:, geo.win]
    ctx = {"times": geo.times[keep], "xs": geo.win_x, "mask": geo.win_mask[keep],
           "j0": j0_keep, "levels": keep, "grid": grid}
    bs = geo.batch_size()
    batches = [list(range(s, min(s + bs, grid.n_paths))) for s in range(0, grid.n_paths, bs)]

    def work(paths):
        I = _simulate_batch(geo, jc, g1, rfn, paths, keep)
        return reducer(j0_keep[None] + I, I, ctx)

    if n_threads <= 1:
        parts = [work(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            parts = list(ex.map(work, batches))
    total = {}
    for part in parts:  # batch order
        for key, val in part.items():
            total[key] = val if key not in total else total[key] + val
    return total, ctx


@dataclass
class FieldEstimate:
    """Per-node sample moments with standard errors; NaN off the lattice parity."""

    grid: GridSpec
    times: np.ndarray
    xs: np.ndarray
    n_paths: int
    mean: np.ndarray
    se_mean: np.ndarray
    moments: dict = field(default_factory=dict)
    se: dict = field(default_factory=dict)
    two_point: dict = field(default_factory=dict)


def _shifted_stats(sum1, sum2, ref, n):
    """Mean and delete-one jackknife SE from sums of (y - ref) and (y - ref)^2.

    For a sample mean the jackknife SE reduces to s / sqrt(n); shifting by the
    first path's value makes a path-independent field come out exactly.
    """
    m = sum1 / n
    mean = ref + m
    var = np.maximum(sum2 - n * m * m, 0.0) / (n - 1)
    return mean, np.sqrt(var / n)


def mc_moments(grid: GridSpec, init: InitialData, rho, kappa: float, p_list=(2,),
               n_threads: int = 1, two_point_refs=()) -> FieldEstimate:
    """Empirical mean and even moments E[u^p] on the output window.

    ``two_point_refs`` lists positions y; for each, E[u(t,x) u(t,y)] is
    estimated on the levels where y is a node.
    """
    if grid.n_paths < 2:
        raise ValueError("need at least two paths for standard errors")
    for p in p_list:
        if p < 2 or p % 2:
            raise ValueError("moment orders must be even integers >= 2")
    geo = _Geometry(grid)
    ref_cols = []
    for y in two_point_refs:
        c = int(round((y - geo.win_x[0]) / grid.dx))
        if not (0 <= c < geo.n_win and abs(geo.win_x[c] - y) < 1e-9 * max(1.0, abs(y))):
            raise ValueError(f"two-point reference {y} is not a window column")
        ref_cols.append(c)

    def statistics(u):
        stats = {1: u}
        for p in p_list:
            stats[p] = u**p
        for n, c in enumerate(ref_cols):
            stats[("tp", n)] = u * u[:, :, c:c + 1]
        return stats

    # every statistic is accumulated relative to path 0's value
    path0, _ = map_reduce_paths(GridSpec(**{**grid.__dict__, "n_paths": 1}), init, rho, kappa,
                                lambda u, I, ctx: {k: v[0] for k, v in statistics(u).items()})

    def reducer(u, I, ctx):
        out = {}
        for key, y in statistics(u).items():
            d = y - path0[key]
            out[(key, "s1")] = np.sum(d, axis=0)
            out[(key, "s2")] = np.sum(d * d, axis=0)
        return out

    tot, ctx = map_reduce_paths(grid, init, rho, kappa, reducer, n_threads=n_threads)
    n = grid.n_paths
    mask = ctx["mask"]
    nan = lambda a: np.where(mask, a, np.nan)
    mean, se_mean = _shifted_stats(tot[(1, "s1")], tot[(1, "s2")], path0[1], n)
    est = FieldEstimate(grid, ctx["times"], ctx["xs"], n, nan(mean), nan(se_mean))
    for p in p_list:
        m, s = _shifted_stats(tot[(p, "s1")], tot[(p, "s2")], path0[p], n)
        est.moments[p] = nan(m)
        est.se[p] = nan(s)
    for nref, (y, c) in enumerate(zip(two_point_refs, ref_cols)):
        key = ("tp", nref)
        m, s = _shifted_stats(tot[(key, "s1")], tot[(key, "s2")], path0[key], n)
        ok = mask & mask[:, c:c + 1]
        est.two_point[float(y)] = (np.where(ok, m, np.nan), np.where(ok, s, np.nan))
    return est
