"""Lattice space-time convolutions, theta-weighted convolutions and Picard iteration.

Fields live on a lattice symmetric about x = 0 with dx = kappa*dt, so light
cones through the origin pass exactly through lattice nodes. A field has one
of two roles:

* ``source``: row l stands for the time cell [t_l, t_{l+1}] (point samples, or
  exact cell averages for cone kernels). This is the role of ``f`` in f * g.
* ``lag``: row d >= 1 stands for the lag cell [t_{d-1}, t_d]; row 0 is never
  used. This is the role of the kernel ``g``.

With those conventions

    (f * g)[k, i] = dt dx sum_{l<k} sum_j f[l, j] g[k-l, i-j]

is the left-endpoint rule in time and midpoint rule in space. Fields are zero
outside the lattice.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .closed_moments import InitialData, Linear, QuasiLinear, as_quasilinear, j0_wave
from .heat_extension import ThetaSpec, theta_value

__all__ = [
    "Lattice",
    "LatticeField",
    "GridMismatchError",
    "PicardNonConvergence",
    "sample",
    "cone_kernel_field",
    "ThetaField",
    "theta_field",
    "conv_star",
    "conv_L0",
    "theta_conv",
    "multi_conv_forward",
    "multi_conv_backward",
    "multi_conv_kernel",
    "rearrangement_check",
    "PicardResult",
    "picard_second_moment",
]

_MAX_ORDER = 3


class GridMismatchError(ValueError):
    pass


class PicardNonConvergence(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class Lattice:
    """Nodes t_k = k dt (k = 0..n_t) and x_j = j dx (j = -n_x..n_x), dx = kappa dt."""

    dt: float
    kappa: float
    n_t: int
    n_x: int

    def __post_init__(self):
        if not (self.dt > 0 and self.kappa > 0):
            raise ValueError("dt and kappa must be positive")
        if self.n_t < 1 or self.n_x < 0:
            raise ValueError("need n_t >= 1 and n_x >= 0")

    @classmethod
    def covering(cls, t_max: float, dt: float, kappa: float, x_max: float | None = None):
        """Smallest lattice reaching t_max whose x range holds the forward cone (or x_max)."""
        n_t = int(round(t_max / dt))
        if abs(n_t * dt - t_max) > 1e-9 * max(1.0, t_max):
            raise ValueError("t_max must be a multiple of dt")
        reach = kappa * t_max if x_max is None else max(x_max, kappa * t_max)
        n_x = int(np.ceil(reach / (kappa * dt) - 1e-9)) + 1
        return cls(dt, kappa, n_t, n_x)

    @property
    def dx(self) -> float:
        return self.kappa * self.dt

    @property
    def shape(self):
        return (self.n_t + 1, 2 * self.n_x + 1)

    @property
    def times(self):
        return np.arange(self.n_t + 1) * self.dt

    @property
    def xs(self):
        return np.arange(-self.n_x, self.n_x + 1) * self.dx

    @property
    def area(self) -> float:
        return self.dt * self.dx

    def node(self, t, x):
        """(time index, array column) of the node at (t, x)."""
        k = int(round(t / self.dt))
        j = int(round(x / self.dx))
        if abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)) or abs(j * self.dx - x) > 1e-9 * max(1.0, abs(x)):
            raise ValueError(f"({t}, {x}) is not a lattice node")
        if not (0 <= k <= self.n_t and -self.n_x <= j <= self.n_x):
            raise ValueError(f"({t}, {x}) lies outside the lattice")
        return k, j + self.n_x


@dataclass(frozen=True, eq=False)
class LatticeField:
    lattice: Lattice
    values: np.ndarray
    role: str = "source"

    def __post_init__(self):
        if self.values.shape != self.lattice.shape:
            raise GridMismatchError(f"values shape {self.values.shape} != lattice {self.lattice.shape}")
        if self.role not in ("source", "lag"):
            raise ValueError("role must be 'source' or 'lag'")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def at(self, t, x) -> float:
        return float(self.values[self.lattice.node(t, x)])

    def lag_values(self):
        v = self.values.copy()
        v[0] = 0.0
        return v

    def source_values(self):
        return self.values if self.role == "source" else self.lag_values()


def _same(*fields):
    lat = fields[0].lattice
    for f in fields[1:]:
        if f.lattice != lat:
            raise GridMismatchError("fields live on different lattices")
    return lat


def sample(lat: Lattice, fn, role: str = "source") -> LatticeField:
    """Point samples fn(t_k, x_j)."""
    T, X = np.meshgrid(lat.times, lat.xs, indexing="ij")
    return LatticeField(lat, np.asarray(fn(T, X), dtype=float) + 0.0 * T, role)


@lru_cache(maxsize=None)
def _gl(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _cone_cell_averages(lat: Lattice, fn, order=6):
    """avg[m, j] = mean of fn over [t_m, t_{m+1}] x [x_j - dx/2, x_j + dx/2] restricted to |x| <= kappa t.

    The cone edge crosses the cell's vertical sides at mid-cell, so each time
    interval splits into two halves on which the x-limits are linear in time
    and the integrand is smooth.
    """
    dt, dx, kap = lat.dt, lat.dx, lat.kappa
    g, gw = _gl(order)
    out = np.zeros((lat.n_t + 1, 2 * lat.n_x + 1))
    for m in range(lat.n_t + 1):
        reach = min(m + 1, lat.n_x)
        js = np.arange(-reach, reach + 1)
        xc = js * dx
        total = np.zeros(len(js))
        for half in (0, 1):
            tau = (m + 0.5 * half + 0.5 * g) * dt  # (order,)
            wt = 0.5 * dt * gw
            lo = np.maximum(xc[None, :] - 0.5 * dx, -kap * tau[:, None])
            hi = np.minimum(xc[None, :] + 0.5 * dx, kap * tau[:, None])
            length = np.maximum(hi - lo, 0.0)
            xq = lo[..., None] + length[..., None] * g
            vals = np.asarray(fn(np.broadcast_to(tau[:, None, None], xq.shape), xq), dtype=float)
            inner = np.sum(vals * gw, axis=-1) * length
            total += np.sum(inner * wt[:, None], axis=0)
        out[m, js + lat.n_x] = total / (dt * dx)
    return out


def cone_kernel_field(lat: Lattice, fn, role: str = "lag", order: int = 6) -> LatticeField:
    """Exact cell averages of a kernel supported on the forward cone |x| <= kappa t.

    Cells cut by the cone boundary are averaged over their inside part only.
    """
    avg = _cone_cell_averages(lat, fn, order)
    if role == "source":
        return LatticeField(lat, avg, "source")
    vals = np.zeros(lat.shape)
    vals[1:] = avg[:-1]
    return LatticeField(lat, vals, "lag")


@dataclass(frozen=True, eq=False)
class ThetaField:
    """theta^2 on a lattice (stored squared, since only theta^2 enters)."""

    lattice: Lattice
    sq: np.ndarray

    def __post_init__(self):
        if self.sq.shape != self.lattice.shape:
            raise GridMismatchError("theta field does not match the lattice")
        if np.any(self.sq < 0) or not np.all(np.isfinite(self.sq)):
            raise ValueError("theta^2 must be finite and nonnegative")


def theta_field(lat: Lattice, theta) -> ThetaField:
    """theta^2 on the lattice from a ThetaSpec, a LatticeField of theta values or a callable theta(t, x)."""
    if isinstance(theta, ThetaField):
        if theta.lattice != lat:
            raise GridMismatchError("theta field lives on a different lattice")
        return theta
    if isinstance(theta, LatticeField):
        _same(theta, LatticeField(lat, np.zeros(lat.shape)))
        th = theta.values
    elif isinstance(theta, ThetaSpec.__args__):
        th = theta_value(theta, lat.times)[:, None] + np.zeros(lat.shape)
    else:
        th = sample(lat, theta).values
    return ThetaField(lat, np.asarray(th * th, dtype=float))


# ---------------------------------------------------------------- plain convolution


def conv_star(f: LatticeField, g: LatticeField, points=None):
    """(f * g) at every node, or at the listed (t, x) nodes if ``points`` is given."""
    lat = _same(f, g)
    src = f.source_values()
    ker = g.lag_values()
    if points is not None:
        return np.array([_conv_at(lat, src, ker, *lat.node(t, x)) for t, x in points])
    out = np.zeros(lat.shape)
    for d in range(1, lat.n_t + 1):
        row = ker[d]
        if not np.any(row):
            continue
        out[d:] += ndimage.convolve1d(src[: lat.n_t + 1 - d], row, axis=1, mode="constant", cval=0.0)
    return LatticeField(lat, out * lat.area, "source")


def _conv_at(lat, src, ker, k, i):
    if k == 0:
        return 0.0
    nx = lat.n_x
    rows = src[k - 1::-1][:k]  # rows k-d for d = 1..k
    pad = np.pad(rows, ((0, 0), (2 * nx, 2 * nx)))
    # src[k-d, i-e] for e = -nx..nx sits at padded column i - e + 2 nx
    cols = i - np.arange(-nx, nx + 1) + 2 * nx
    return float(np.sum(ker[1:k + 1] * pad[:, cols]) * lat.area)


def conv_L0(f: LatticeField, lam: float) -> LatticeField:
    """f * L0 with L0 = lam^2 G^2 = lam^2/4 on the cone, via running sums along characteristics.

    The lag-cell averages of the indicator are 1 strictly inside, 7/8 on the
    cells next to the edge, 1/8 on the edge cells and 3/4 at lag one, offset
    zero. This equals conv_star(f, cone_kernel_field(L0)) in O(n_t n_x) work.
    """
    lat = f.lattice
    h = f.source_values()
    n_t = lat.n_t
    pad = n_t + 2
    h = np.pad(h, ((0, 0), (pad, pad)))
    width = h.shape[1]
    tri = np.zeros((n_t + 1, width))   # sum over rows l <= k-1 with |j - i| <= k-1-l
    dm = np.zeros((n_t + 1, width))    # sum_{l<k} h[l, i-(k-l)]
    dp = np.zeros((n_t + 1, width))    # sum_{l<k} h[l, i+(k-l)]
    out = np.zeros((n_t + 1, width))
    for k in range(1, n_t + 1):
        dm[k, 1:] = dm[k - 1, :-1] + h[k - 1, :-1]
        dp[k, :-1] = dp[k - 1, 1:] + h[k - 1, 1:]
        if k == 1:
            tri[1] = h[0]
        else:
            tri[k, 1:-1] = (h[k - 1, 1:-1] + h[k - 2, 1:-1] + tri[k - 1, :-2] + tri[k - 1, 2:]
                            - tri[k - 2, 1:-1])
        inner = tri[k - 1]
        near = np.zeros(width)
        near[1:-1] = dm[k, 2:] + dp[k, :-2]
        out[k] = inner + 0.875 * near - h[k - 1] + 0.125 * (dm[k] + dp[k])
    out = out[:, pad:-pad]
    return LatticeField(lat, out * lat.area * 0.25 * lam * lam, "source")


def theta_conv(f: LatticeField, g: LatticeField, theta) -> LatticeField:
    """(f |> g) = ((theta^2 f) * g)."""
    lat = _same(f, g)
    th2 = theta_field(lat, theta).sq
    return conv_star(LatticeField(lat, th2 * f.source_values(), "source"), g)


# ---------------------------------------------------------------- multiple weighted convolutions
#
# Positions are handled on an unbounded index line: an array column c stands
# for position c - off, and every lattice field is zero outside its own range.


def _check_order(gs):
    if not 2 <= len(gs) <= _MAX_ORDER:
        raise ValueError(f"only orders 2..{_MAX_ORDER} are supported, got {len(gs)}")
    return _same(*gs)


def _on_line(lat, arr, off, size):
    """Embed a lattice array (rows, 2 n_x + 1) into columns [0, size) with position = col - off."""
    out = np.zeros((arr.shape[0], size))
    out[:, off - lat.n_x: off + lat.n_x + 1] = arr
    return out


def _indices(lat, t, x, s, y):
    k, ic = lat.node(t, x)
    d = int(round(s / lat.dt))
    e = int(round(y / lat.dx))
    if abs(d * lat.dt - s) > 1e-9 * max(1.0, s) or abs(e * lat.dx - y) > 1e-9 * max(1.0, abs(y)):
        raise ValueError(f"({s}, {y}) is not a lattice point")
    if d < 0 or d > k:
        raise ValueError("need 0 <= s <= t")
    return k, ic - lat.n_x, d, e


def multi_conv_forward(gs, theta, t, x, s, y) -> float:
    """Forward formula: innermost g1(s1, y1), outermost g_n(s - s_{n-1}, y - y_{n-1}).

    Each layer multiplies by theta^2(t - s + s_m, x - y + y_m).
    """
    lat = _check_order(gs)
    th2 = theta_field(lat, theta).sq
    k, i, d, e = _indices(lat, t, x, s, y)
    n = len(gs)
    nx = lat.n_x
    off = n * nx + abs(e) + abs(i) + nx
    size = 2 * off + 1
    g1 = gs[0].source_values()
    h = _on_line(lat, g1[: d + 1], off, size)      # h[a, col] = g1(s_a, position)
    th_line = _on_line(lat, th2, off, size)
    shift = i - e                                   # theta position = x - y + y_m
    # theta^2 rows k - d + a, columns shifted by (i - e)
    th_rows = th_line[k - d: k + 1]
    th_shift = np.zeros_like(th_rows)
    if shift >= 0:
        th_shift[:, : size - shift] = th_rows[:, shift:]
    else:
        th_shift[:, -shift:] = th_rows[:, : size + shift]
    for m in range(1, n):
        ker = gs[m].lag_values()
        weighted = th_shift * h
        nxt = np.zeros_like(h)
        for a1 in range(1, d + 1):
            acc = np.zeros(size)
            for a in range(a1):
                row = ker[a1 - a]
                if np.any(row):
                    acc += ndimage.convolve1d(weighted[a], row, mode="constant", cval=0.0)
            nxt[a1] = acc * lat.area
        h = nxt
    return float(h[d, off + e])


def multi_conv_backward(gs, theta, t, x, s, y) -> float:
    """Backward formula after tau_m = s - s_{n-m}, z_m = y - y_{n-m}.

    Innermost g_n(tau_1, z_1); g_1 enters as g_1(s - tau_{n-1}, y - z_{n-1});
    every layer carries theta^2(t - tau_m, x - z_m).
    """
    lat = _check_order(gs)
    th2 = theta_field(lat, theta).sq
    k, i, d, e = _indices(lat, t, x, s, y)
    n = len(gs)
    nx = lat.n_x
    zr = n * nx + abs(e) + nx          # z ranges over [-zr, zr]
    zs = np.arange(-zr, zr + 1)

    def lat_get(arr, row, pos):
        col = pos + nx
        ok = (col >= 0) & (col < 2 * nx + 1)
        return np.where(ok, arr[row, np.clip(col, 0, 2 * nx)], 0.0)

    # r[tau] over z: start with g_n(tau, z)
    gn = gs[-1].lag_values()
    r = np.zeros((d + 1, len(zs)))
    for tau in range(1, d + 1):
        r[tau] = lat_get(gn, tau, zs)
    for m in range(n - 2, 0, -1):
        ker = gs[m].lag_values()
        nxt = np.zeros_like(r)
        for tau2 in range(1, d + 1):
            acc = np.zeros(len(zs))
            for tau1 in range(1, tau2):
                w = lat_get(th2, k - tau1, i - zs) * r[tau1]
                nz = np.nonzero(w)[0]
                for c in nz:
                    acc += w[c] * lat_get(ker, tau2 - tau1, zs - zs[c])
            nxt[tau2] = acc * lat.area
        r = nxt
    g1 = gs[0].source_values()
    total = 0.0
    for tau in range(1, d + 1):
        total += float(np.sum(lat_get(th2, k - tau, i - zs) * lat_get(g1, d - tau, e - zs) * r[tau]))
    return total * lat.area


def multi_conv_kernel(gs, theta, t, x, route: str = "forward") -> LatticeField:
    """The lag field (s, y) -> |>_n(g_1..g_n)(t, x; s, y) for 1 <= s/dt <= k."""
    lat = _check_order(gs)
    k, _ = lat.node(t, x)
    fn = multi_conv_forward if route == "forward" else multi_conv_backward
    vals = np.zeros(lat.shape)
    for d in range(1, k + 1):
        for col, y in enumerate(lat.xs):
            vals[d, col] = fn(gs, theta, t, x, d * lat.dt, y)
    return LatticeField(lat, vals, "lag")


def _single_conv_at(lat, f_src, th2, kernel_lag, k, i):
    return _conv_at(lat, th2 * f_src, kernel_lag, k, i)


def rearrangement_check(f: LatticeField, gs, theta, t, x):
    """Both sides of the rearrangement identities for iterated weighted convolutions.

    Returns a dict name -> (lhs, rhs):

    ``iterated``: (((f|>g1)|>g2)...|>gn)(t,x) against (f |> |>_n(g..)(t,x;.,.))(t,x).
    ``peel``: (f |> |>_n(g1..gn)) against ((f|>g1) |> |>_{n-1}(g2..gn)), with |>_1(g) = g.
    ``extend`` (only when n + 1 <= 3): the sum over (s, y) of
    (f |> |>_n(g1..gn)(s,y;.,.))(s,y) theta^2(s,y) g_{n+1}(t-s, x-y) against
    (f |> |>_{n+1}(g1..g_{n+1})(t,x;.,.))(t,x); g_{n+1} is taken equal to g_n.

    The discrete identities are exact when f and the g's vanish outside the
    forward cone |x| <= kappa t and n_x >= n_t, so that no intermediate
    convolution is clipped by the lattice edge.
    """
    lat = _check_order(gs)
    _same(f, *gs)
    th = theta_field(lat, theta)
    th2 = th.sq
    k, i = lat.node(t, x)
    n = len(gs)
    fs = f.source_values()

    it = f
    for g in gs:
        it = theta_conv(it, g, th)
    lhs1 = it.values[k, i]
    kern_n = multi_conv_kernel(gs, th, t, x).lag_values()
    rhs1 = _single_conv_at(lat, fs, th2, kern_n, k, i)
    out = {"iterated": (float(lhs1), float(rhs1))}

    f1 = theta_conv(f, gs[0], th).values
    if n - 1 >= 2:
        kern_rest = multi_conv_kernel(gs[1:], th, t, x).lag_values()
    else:
        kern_rest = gs[1].lag_values()
    out["peel"] = (float(rhs1), _single_conv_at(lat, f1, th2, kern_rest, k, i))

    if n + 1 <= _MAX_ORDER:
        gnext = gs[-1]
        inner = np.zeros(lat.shape)
        for kk in range(1, k):
            for ii in range(lat.shape[1]):
                if th2[kk, ii] == 0.0:
                    continue
                tt, xx = lat.times[kk], lat.xs[ii]
                kern = multi_conv_kernel(gs, th, tt, xx).lag_values()
                inner[kk, ii] = _single_conv_at(lat, fs, th2, kern, kk, ii)
        lhs3 = _single_conv_at(lat, inner, th2, gnext.lag_values(), k, i)
        kern_next = multi_conv_kernel(list(gs) + [gnext], th, t, x).lag_values()
        rhs3 = _single_conv_at(lat, fs, th2, kern_next, k, i)
        out["extend"] = (float(lhs3), float(rhs3))
    return out


# ---------------------------------------------------------------- Picard iteration


@dataclass
class PicardResult:
    field: LatticeField
    iterations: int
    residual: float
    history: list


def picard_second_moment(init: InitialData, rho, theta, lat: Lattice,
                         max_iter: int = 200, tol: float = 1e-12,
                         keep_iterates: bool = False) -> PicardResult:
    """Iterate f <- J0^2 + ((vbar^2 + f) theta^2) * L0 from f = J0^2.

    ``max_iter = 0`` returns J0^2. Raises PicardNonConvergence if the sup-norm
    change is still above ``tol`` after ``max_iter`` sweeps (and max_iter > 0).
    """
    if not isinstance(rho, (Linear, QuasiLinear)):
        raise TypeError("Picard iteration needs a Linear or QuasiLinear coupling")
    q = as_quasilinear(rho)
    T, X = np.meshgrid(lat.times, lat.xs, indexing="ij")
    j0 = np.asarray(j0_wave(T, X, init, lat.kappa), dtype=float)
    j0sq = j0 * j0
    th2 = theta_field(lat, theta).sq
    f = j0sq.copy()
    history = [f.copy()] if keep_iterates else []
    residual = float("inf")
    for it in range(1, max_iter + 1):
        src = LatticeField(lat, (q.vbar**2 + f) * th2, "source")
        new = j0sq + conv_L0(src, q.lam).values
        residual = float(np.max(np.abs(new - f)))
        f = new
        if keep_iterates:
            history.append(f.copy())
        if residual <= tol * max(1.0, float(np.max(np.abs(f)))):
            return PicardResult(LatticeField(lat, f), it, residual, history)
    if max_iter == 0:
        return PicardResult(LatticeField(lat, f), 0, 0.0, history)
    raise PicardNonConvergence(f"Picard iteration stalled after {max_iter} sweeps "
                               f"(residual {residual:.3e})", residual)
