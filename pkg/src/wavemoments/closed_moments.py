"""Second-moment formulas, moment bounds and growth quantities for the wave equation.

Initial data enter through the d'Alembert solution J0. In characteristic
coordinates u = kappa*s - y, w = kappa*s + y it splits as J0 = P(u) + Q(w), which
is what the cone quadrature integrates against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import kernels
from ._charquad import triangle_quad
from .kernels import WaveParams, calH, kernel_K, wave_kernel

# ---------------------------------------------------------------- noise coupling


@dataclass(frozen=True)
class Linear:
    lam: float


@dataclass(frozen=True)
class QuasiLinear:
    """|rho(u)|^2 = lam^2 (vbar^2 + u^2)."""

    lam: float
    vbar: float = 0.0

    def __post_init__(self):
        if self.vbar < 0:
            raise ValueError("vbar must be nonnegative")


@dataclass(frozen=True)
class LipschitzEnvelope:
    """lip_lower^2 (sigma_lower^2 + u^2) <= |rho(u)|^2 <= lip_upper^2 (sigma_upper^2 + u^2).

    ``lip_lower=None`` means no lower envelope was declared.
    """

    lip_upper: float
    sigma_upper: float = 0.0
    lip_lower: float | None = None
    sigma_lower: float = 0.0

    def __post_init__(self):
        if self.lip_upper <= 0:
            raise ValueError("lip_upper must be positive")
        if self.sigma_upper < 0 or self.sigma_lower < 0:
            raise ValueError("sigma values must be nonnegative")
        if self.lip_lower is not None and not 0 <= self.lip_lower <= self.lip_upper:
            raise ValueError("need 0 <= lip_lower <= lip_upper")


RhoSpec = Union[Linear, QuasiLinear, LipschitzEnvelope]


class MissingEnvelopeError(ValueError):
    pass


def as_quasilinear(rho: RhoSpec) -> QuasiLinear:
    if isinstance(rho, Linear):
        return QuasiLinear(rho.lam, 0.0)
    if isinstance(rho, QuasiLinear):
        return rho
    raise TypeError("exact moments need a Linear or QuasiLinear coupling; "
                    "use the bound functions for a LipschitzEnvelope")


def _upper_env(rho: RhoSpec):
    if isinstance(rho, LipschitzEnvelope):
        return rho.lip_upper, rho.sigma_upper
    q = as_quasilinear(rho)
    return abs(q.lam), q.vbar


def _lower_env(rho: RhoSpec):
    if isinstance(rho, LipschitzEnvelope):
        if rho.lip_lower is None:
            raise MissingEnvelopeError("rho has no lower envelope (lip_lower)")
        return rho.lip_lower, rho.sigma_lower
    q = as_quasilinear(rho)
    return abs(q.lam), q.vbar


@dataclass(frozen=True)
class MomentConstants:
    p: int
    a_p: float
    z_p: float


def moment_constants(p: int, sigma_upper: float = 0.0) -> MomentConstants:
    """BDG-type constants; z_p = 2 sqrt(p) for p > 2 is an upper bound, not the sharp value."""
    if p < 2 or p % 2:
        raise ValueError(f"p must be an even integer >= 2, got {p}")
    if p == 2:
        return MomentConstants(2, 1.0, 1.0)
    a = math.sqrt(2.0) if sigma_upper == 0 else 2.0 ** ((p - 1) / p)
    return MomentConstants(p, a, 2.0 * math.sqrt(p))


# ---------------------------------------------------------------- initial data


class SingularPointError(ValueError):
    pass


@dataclass(frozen=True)
class Zero:
    def value(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def cumulative(self, x, closed=True):
        return np.zeros_like(np.asarray(x, dtype=float))

    breaks = ()
    singular = ()


@dataclass(frozen=True)
class Constant:
    w: float

    def value(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.w)

    breaks = ()
    singular = ()


@dataclass(frozen=True)
class PowerSingular:
    """g(x) = |x|^{-a}, a in [0, 1/2)."""

    a: float

    def __post_init__(self):
        if not 0 <= self.a < 0.5:
            raise ValueError("PowerSingular needs a in [0, 1/2)")

    def value(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        if self.a == 0:
            return np.ones_like(ax)
        with np.errstate(divide="ignore"):
            return ax ** (-self.a)

    @property
    def breaks(self):
        return (0.0,) if self.a > 0 else ()

    @property
    def singular(self):
        return (0.0,) if self.a > 0 else ()


@dataclass(frozen=True)
class ExpDecay:
    """g(x) = c exp(-beta |x|)."""

    c: float
    beta: float

    def value(self, x):
        return self.c * np.exp(-self.beta * np.abs(np.asarray(x, dtype=float)))

    breaks = (0.0,)
    singular = ()


@dataclass(frozen=True)
class Tabulated:
    """Piecewise-linear profile through (xs, values), zero outside [xs[0], xs[-1]]."""

    xs: tuple
    values: tuple

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim != 1 or len(xs) < 2 or np.any(np.diff(xs) <= 0):
            raise ValueError("Tabulated xs must be strictly increasing with >= 2 points")
        if len(self.values) != len(xs):
            raise ValueError("Tabulated xs and values differ in length")
        object.__setattr__(self, "xs", tuple(float(v) for v in xs))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def value(self, x):
        return np.interp(np.asarray(x, dtype=float), self.xs, self.values, left=0.0, right=0.0)

    @property
    def breaks(self):
        return self.xs

    singular = ()

    def _cum_nodes(self):
        xs, ys = np.asarray(self.xs), np.asarray(self.values)
        return np.concatenate([[0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))])

    def cumulative(self, x, closed=True):
        # exact integral of the linear interpolant from -inf to x
        x = np.asarray(x, dtype=float)
        xs, ys = np.asarray(self.xs), np.asarray(self.values)
        cum = self._cum_nodes()
        xc = np.clip(x, xs[0], xs[-1])
        i = np.clip(np.searchsorted(xs, xc, side="right") - 1, 0, len(xs) - 2)
        d = xc - xs[i]
        slope = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
        return cum[i] + ys[i] * d + 0.5 * slope * d * d

    def square_integral(self, lo, hi):
        """int_lo^hi (interpolant)^2, exact per segment (Simpson on quadratics)."""
        pts = sorted({lo, hi, *[v for v in self.xs if lo < v < hi]})
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            ya, yb = self.value(a), self.value(b)
            ym = self.value(0.5 * (a + b))
            total += (b - a) / 6.0 * (ya * ya + 4 * ym * ym + yb * yb)
        return float(total)

    def abs_integral(self, lo, hi):
        pts = sorted({lo, hi, *[v for v in self.xs if lo < v < hi]})
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            ya, yb = float(self.value(a)), float(self.value(b))
            if ya * yb >= 0:
                total += 0.5 * (abs(ya) + abs(yb)) * (b - a)
            else:
                r = abs(ya) / (abs(ya) + abs(yb))
                total += 0.5 * (abs(ya) * r + abs(yb) * (1 - r)) * (b - a)
        return total


@dataclass(frozen=True)
class ConstantDensity:
    wtilde: float

    def cumulative(self, x, closed=True):
        return self.wtilde * np.asarray(x, dtype=float)

    breaks = ()

    def total_variation(self, lo, hi):
        return abs(self.wtilde) * (hi - lo)


@dataclass(frozen=True)
class Dirac:
    x0: float = 0.0
    mass: float = 1.0

    def cumulative(self, x, closed=True):
        x = np.asarray(x, dtype=float)
        hit = x >= self.x0 if closed else x > self.x0
        return self.mass * hit.astype(float)

    @property
    def breaks(self):
        return (self.x0,)

    def total_variation(self, lo, hi):
        return abs(self.mass) if lo <= self.x0 <= hi else 0.0


@dataclass(frozen=True)
class ExpDecayDensity:
    """mu(dx) = c exp(-beta |x|) dx."""

    c: float
    beta: float

    def cumulative(self, x, closed=True):
        x = np.asarray(x, dtype=float)
        b = self.beta
        return (self.c / b) * np.where(x < 0, np.exp(b * np.minimum(x, 0.0)),
                                       2.0 - np.exp(-b * np.maximum(x, 0.0)))

    breaks = (0.0,)

    def total_variation(self, lo, hi):
        return float(abs(self.cumulative(hi) - self.cumulative(lo)))


@dataclass(frozen=True)
class AtomsPlusDensity:
    atoms: tuple = ()
    density: Tabulated | None = None

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple((float(a), float(m)) for a, m in self.atoms))

    def cumulative(self, x, closed=True):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for loc, m in self.atoms:
            out = out + m * ((x >= loc) if closed else (x > loc))
        if self.density is not None:
            out = out + self.density.cumulative(x)
        return out

    @property
    def breaks(self):
        pts = [a for a, _ in self.atoms]
        if self.density is not None:
            pts += list(self.density.xs)
        return tuple(sorted(set(pts)))

    def total_variation(self, lo, hi):
        tv = sum(abs(m) for a, m in self.atoms if lo <= a <= hi)
        if self.density is not None:
            tv += self.density.abs_integral(lo, hi)
        return tv


_POSITIONS = (Zero, Constant, PowerSingular, ExpDecay, Tabulated)
_VELOCITIES = (Zero, ConstantDensity, Dirac, ExpDecayDensity, AtomsPlusDensity)


@dataclass(frozen=True)
class InitialData:
    position: object = field(default_factory=Zero)
    velocity: object = field(default_factory=Zero)

    def __post_init__(self):
        if not isinstance(self.position, _POSITIONS):
            raise TypeError(f"unsupported position data {self.position!r}")
        if not isinstance(self.velocity, _VELOCITIES):
            raise TypeError(f"unsupported velocity data {self.velocity!r}")

    # characteristic split J0 = P(u) + Q(w)
    def P(self, u):
        u = np.asarray(u, dtype=float)
        return 0.5 * self.position.value(-u) - 0.5 * self.velocity.cumulative(-u, closed=False)

    def Q(self, w):
        w = np.asarray(w, dtype=float)
        return 0.5 * self.position.value(w) + 0.5 * self.velocity.cumulative(w, closed=True)

    def char_breaks(self):
        pos = tuple(self.position.breaks)
        vel = tuple(self.velocity.breaks)
        ub = tuple(sorted({-b for b in pos + vel}))
        wb = tuple(sorted(set(pos + vel)))
        us = tuple(-b for b in self.position.singular)
        ws = tuple(self.position.singular)
        return ub, wb, us, ws


def _velocity_smoothed(v, t, x, kappa):
    """(mu * G(t, .))(x) = mu([x - kappa t, x + kappa t]) / 2."""
    if isinstance(v, Zero):
        return np.zeros(np.broadcast(t, x).shape)
    if isinstance(v, ConstantDensity):
        return kappa * v.wtilde * t + 0.0 * x
    if isinstance(v, Dirac):
        return v.mass * np.asarray(wave_kernel(t, x - v.x0, WaveParams(kappa, 0.0)))
    if isinstance(v, ExpDecayDensity):
        b, ax = v.beta, np.abs(x)
        kt = kappa * t
        outside = np.exp(-b * ax) * np.sinh(b * np.minimum(kt, ax))
        inside = 1.0 - np.exp(-b * kt) * np.cosh(b * np.minimum(ax, kt))
        return v.c / b * np.where(ax >= kt, outside, inside)
    return 0.5 * (v.cumulative(x + kappa * t, closed=True) - v.cumulative(x - kappa * t, closed=False))


def j0_wave(t, x, init: InitialData, kappa: float):
    """d'Alembert solution 1/2 (g(x + kappa t) + g(x - kappa t)) + (mu * G(t, .))(x)."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    pos = init.position
    if isinstance(pos, PowerSingular) and pos.a > 0:
        if np.any((x + kappa * t == 0) | (x - kappa * t == 0)):
            raise SingularPointError("PowerSingular data evaluated on a characteristic line through 0")
    val = 0.5 * (pos.value(x + kappa * t) + pos.value(x - kappa * t))
    # at t = 0 the velocity is integrated over an empty interval, atoms included
    vel = np.where(t > 0, _velocity_smoothed(init.velocity, t, x, kappa), 0.0)
    val = val + vel
    return float(val) if np.ndim(val) == 0 else val


def psi_g(x: float, init: InitialData) -> float:
    """int_{-x}^{x} g(y)^2 dy."""
    g = init.position
    if x <= 0:
        return 0.0
    if isinstance(g, Zero):
        return 0.0
    if isinstance(g, Constant):
        return 2.0 * g.w**2 * x
    if isinstance(g, PowerSingular):
        return 2.0 * x ** (1 - 2 * g.a) / (1 - 2 * g.a)
    if isinstance(g, ExpDecay):
        return g.c**2 * (-math.expm1(-2 * g.beta * x)) / g.beta
    return g.square_integral(-x, x)


def psi_mu_star(x: float, init: InitialData) -> float:
    """(|mu|([-x, x]))^2."""
    v = init.velocity
    if x < 0 or isinstance(v, Zero):
        return 0.0
    return float(v.total_variation(-x, x)) ** 2


# ---------------------------------------------------------------- cone convolutions


def _bessel_kernel(lam, kappa):
    c = lam * lam / (2.0 * kappa)
    q = 0.25 * lam * lam

    def k(a, b):
        return q * kernels.bessel_i0(np.sqrt(np.maximum(c * a * b, 0.0)))

    return k


def j0sq_conv(t, x, init: InitialData, kappa: float, kern, extra=0.0, rtol=1e-10):
    """((extra + J0^2) * k)(t, x) for a cone kernel k given as k(A - u, B - w)."""
    if t <= 0:
        return 0.0
    A, B = kappa * t - x, kappa * t + x
    ub, wb, us, ws = init.char_breaks()

    def f(u, w):
        j = init.P(u) + init.Q(w)
        return (extra + j * j) * kern(A - u, B - w)

    return triangle_quad(f, A, B, ub, wb, us, ws, rtol=rtol) / (2.0 * kappa)


def _fast_kind(init: InitialData):
    pos, vel = init.position, init.velocity
    if isinstance(pos, (Zero, Constant)) and isinstance(vel, (Zero, ConstantDensity)):
        return "constant"
    if isinstance(pos, (Zero, Constant)) and isinstance(vel, Dirac):
        return "dirac"
    return None


def _j0sq_star_K(t, x, init, kappa, lam, rtol=1e-10):
    """(J0^2 * K)(t, x) with K built from coupling lam."""
    # lam^2 can underflow for a nonzero lam; the convolution is O(lam^2) anyway
    if lam * lam == 0 or t <= 0:
        return 0.0
    p = WaveParams(kappa, lam)
    kind = _fast_kind(init)
    w = init.position.w if isinstance(init.position, Constant) else 0.0
    if kind == "constant":
        wt = init.velocity.wtilde if isinstance(init.velocity, ConstantDensity) else 0.0
        c = p.rate
        H = calH(t, p)
        return ((w * w + 4 * kappa * wt * wt / lam**2) * H
                + 2 * math.sqrt(2 * kappa) * w * wt / abs(lam) * math.sinh(c * t)
                - 2 * kappa * w * wt * t - (kappa * wt * t) ** 2)
    if kind == "dirac":
        # J0 = w + m G(t, x - x0); uses K * G^2 = (K - L0)/lam^2 and G = 2 G^2 on the cone
        m, x0 = init.velocity.mass, init.velocity.x0
        KmL = kernel_K(t, x - x0, p) - kernels.kernel_L_n(0, t, x - x0, p)
        return w * w * calH(t, p) + (4 * w * m + m * m) * KmL / lam**2
    return j0sq_conv(t, x, init, kappa, _bessel_kernel(lam, kappa), rtol=rtol)


def _moment_form(t, x, init, kappa, lam, vbar, coef=1.0):
    j0 = j0_wave(t, x, init, kappa)
    conv = _j0sq_star_K(t, x, init, kappa, lam)
    return coef * (j0 * j0 + conv) + vbar**2 * calH(t, WaveParams(kappa, lam))


def second_moment(t, x, init: InitialData, rho: RhoSpec, kappa: float) -> float:
    """E[u(t,x)^2] = J0^2 + (J0^2 * K) + vbar^2 H(t) for |rho(u)|^2 = lam^2 (vbar^2 + u^2)."""
    if isinstance(rho, LipschitzEnvelope):
        raise TypeError("second_moment needs a Linear or QuasiLinear coupling")
    q = as_quasilinear(rho)
    return float(_moment_form(t, x, init, kappa, q.lam, q.vbar))


def two_point(t, x, y, init: InitialData, rho: RhoSpec, kappa: float) -> float:
    """E[u(t,x) u(t,y)].

    The (f * G)(T, (x+y)/2) term is reduced with K * G^2 = (K - L0)/lam^2 and
    G = 2 G^2 on the cone, which leaves J0(t,x)J0(t,y) + (J0^2 * K)(T, xbar) + vbar^2 H(T).
    """
    if isinstance(rho, LipschitzEnvelope):
        raise TypeError("two_point needs a Linear or QuasiLinear coupling")
    q = as_quasilinear(rho)
    return float(_two_point_form(t, x, y, init, kappa, q.lam, q.vbar))


def _two_point_form(t, x, y, init, kappa, lam, vbar):
    T = float(kernels.T_kappa(t, x - y, kappa))
    xbar = 0.5 * (x + y)
    prod = j0_wave(t, x, init, kappa) * j0_wave(t, y, init, kappa)
    return prod + _j0sq_star_K(T, xbar, init, kappa, lam) + vbar**2 * calH(T, WaveParams(kappa, lam))


def pth_moment_upper(p: int, t, x, init: InitialData, rho: RhoSpec, kappa: float) -> float:
    """Upper bound on E|u(t,x)|^p raised to 2/p (the ||u||_p^2 bound)."""
    lip, sig = _upper_env(rho)
    mc = moment_constants(p, sig)
    lam_hat = mc.a_p * mc.z_p * lip
    coef = 1.0 if p == 2 else 2.0
    return float(_moment_form(t, x, init, kappa, lam_hat, sig, coef))


def second_moment_lower(t, x, init: InitialData, rho: RhoSpec, kappa: float) -> float:
    lip, sig = _lower_env(rho)
    return float(_moment_form(t, x, init, kappa, lip, sig))


def two_point_bounds(t, x, y, init: InitialData, rho: RhoSpec, kappa: float):
    """(lower, upper) for E[u(t,x)u(t,y)] from the envelopes, p = 2, nonnegative data."""
    lo_l, lo_s = _lower_env(rho)
    up_l, up_s = _upper_env(rho)
    return (float(_two_point_form(t, x, y, init, kappa, lo_l, lo_s)),
            float(_two_point_form(t, x, y, init, kappa, up_l, up_s)))


# ---------------------------------------------------------------- intermittency and growth


def lyapunov_upper(p: int, rho: RhoSpec, kappa: float) -> float:
    lip, sig = _upper_env(rho)
    moment_constants(p, sig)
    if p == 2:
        return lip * math.sqrt(kappa / 2.0)
    if sig == 0:
        return lip * math.sqrt(kappa) * p**1.5
    return lip * math.sqrt(2.0 * kappa) * p**1.5


def lyapunov_anderson_m2(rho: RhoSpec, kappa: float) -> float:
    q = as_quasilinear(rho)
    return abs(q.lam) * math.sqrt(kappa / 2.0)


@dataclass(frozen=True)
class GrowthQuery:
    p: int = 2
    beta_lower: float = 1.0
    beta_upper: float = 1.0

    def __post_init__(self):
        if self.beta_lower <= 0 or self.beta_upper <= 0:
            raise ValueError("decay rates must be positive")
        if self.beta_upper > self.beta_lower:
            raise ValueError("beta_upper must not exceed beta_lower")


def growth_index_bounds(q: GrowthQuery, rho: RhoSpec, kappa: float):
    """(lower, upper) bounds on the exponential growth index of order p."""
    up_lip, sig = _upper_env(rho)
    mc = moment_constants(q.p, sig)
    coef = 1.0 if q.p == 2 else (mc.a_p * mc.z_p) ** 2
    upper = kappa * math.sqrt(1.0 + coef * up_lip**2 / (8.0 * kappa * q.beta_upper**2))
    try:
        lo_lip, _ = _lower_env(rho)
    except MissingEnvelopeError:
        lo_lip = 0.0
    lower = kappa * math.sqrt(1.0 + lo_lip**2 / (8.0 * kappa * q.beta_lower**2))
    return lower, upper


# ---------------------------------------------------------------- G^2 convolutions


def j0sq_star_gsq_bound(t, x, init: InitialData, kappa: float, v: float = 0.0) -> float:
    """Upper bound on ([v^2 + J0^2] * G^2)(t, x)."""
    r = abs(x) + kappa * t
    return (kappa * t * t / 4.0 * (v * v + 3.0 * psi_mu_star(r, init))
            + 3.0 / 16.0 * t * psi_g(r, init))


def j0sq_star_gsq(t, x, init: InitialData, kappa: float, v: float = 0.0, rtol=1e-10) -> float:
    """([v^2 + J0^2] * G^2)(t, x) by cone quadrature."""
    return j0sq_conv(t, x, init, kappa, lambda a, b: 0.25 + 0.0 * a, extra=v * v, rtol=rtol)


def _tri_pow(c, B, a):
    """int over {c <= p <= w <= B} of (p^{-a} + w^{-a})^2, for 0 <= c <= B."""
    e1, e2 = 1.0 - a, 1.0 - 2.0 * a

    def full(b):
        return (a * a - 4 * a + 2) / (e2 * e1 * e1) * b ** (2 * e1)

    if c <= 0:
        return full(B)
    strip = ((B - c) * c**e2 / e2
             + 2.0 * c**e1 * (B**e1 - c**e1) / (e1 * e1)
             + c * (B**e2 - c**e2) / e2)
    return full(B) - full(c) - strip


def powerlaw_j0sq_conv(t, x, a: float, kappa: float) -> float:
    """(J0^2 * G^2)(t, x) for g(x) = |x|^{-a}, mu = 0.

    Inside the cone the value is
    [(kt-x)^{1-a} + (kt+x)^{1-a}]^2 / (32 k (1-a)^2) + t [(kt-x)^{1-2a} + (kt+x)^{1-2a}] / (16(1-2a)).
    Outside, the backward cone lies on one side of the singular point; the
    region integral is evaluated exactly with its lower cutoff |x| - kt.
    """
    if not 0 <= a < 0.5:
        raise ValueError("a must lie in [0, 1/2)")
    if t <= 0:
        return 0.0
    return _powerlaw_from_edge(t, abs(x) - kappa * t, a, kappa)


def _powerlaw_from_edge(t: float, d: float, a: float, kappa: float) -> float:
    # d = |x| - kappa t; near the edge the value moves like |d|^{1-2a}, so
    # callers that know d exactly should pass it rather than recompute it
    if d <= 0:
        lo, hi = -d, 2.0 * kappa * t + d
        e1, e2 = 1.0 - a, 1.0 - 2.0 * a
        return ((lo**e1 + hi**e1) ** 2 / (32.0 * kappa * e1 * e1)
                + t * (lo**e2 + hi**e2) / (16.0 * e2))
    return _tri_pow(d, 2.0 * kappa * t + d, a) / (32.0 * kappa)


def powerlaw_increment(t, x, xp, a: float, kappa: float) -> float:
    """F(t,x) + F(t,x') - 2 F(T, (x+x')/2) with F = powerlaw_j0sq_conv.

    Equals ||I(t,x) - I(t,x')||^2 / lam^2 for the G^2 part of the second moment.
    """
    T = float(kernels.T_kappa(t, x - xp, kappa))
    mid = 0.0
    if T > 0:
        # |x + x'|/2 - kappa T = max(|x|, |x'|) - kappa t, without the rounding
        mid = _powerlaw_from_edge(T, max(abs(x), abs(xp)) - kappa * t, a, kappa)
    return powerlaw_j0sq_conv(t, x, a, kappa) + powerlaw_j0sq_conv(t, xp, a, kappa) - 2.0 * mid
