"""Heat kernel tools for the noise-tapered heat equation with distributional data.

The heat kernel is G_nu(t, x) = (2 pi nu t)^{-1/2} exp(-x^2 / (2 nu t)), the
fundamental solution of d_t - (nu/2) d_x^2. Initial data are k-th derivatives
of a measure mu0; the homogeneous solution is J0 = d_x^k (mu0 * G_nu(t, .)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "One",
    "PowerTaper",
    "ExpInverse",
    "ThetaSpec",
    "theta_value",
    "admissible",
    "DiracAt",
    "ExpGrowthDensity",
    "TabulatedDensity",
    "HeatInitial",
    "heat_kernel",
    "hermite_He",
    "heat_kernel_derivative",
    "derivative_bound_constants",
    "j0_heat",
    "j0_heat_envelope",
    "weak_pairing",
    "gg_square",
    "gg_product",
    "split_bound",
]


def _positive_time(t, name="t"):
    if np.any(np.asarray(t) <= 0):
        raise ValueError(f"{name} must be positive")


# ---------------------------------------------------------------- noise tapers


@dataclass(frozen=True)
class One:
    """theta == 1."""


@dataclass(frozen=True)
class PowerTaper:
    """theta(t) = min(t^r, 1)."""

    r: float

    def __post_init__(self):
        if not self.r >= 0:
            raise ValueError("r must be nonnegative")


@dataclass(frozen=True)
class ExpInverse:
    """theta(t) = exp(-1/t)."""


ThetaSpec = Union[One, PowerTaper, ExpInverse]


def theta_value(spec: ThetaSpec, t):
    t = np.asarray(t, dtype=float)
    if isinstance(spec, One):
        return np.ones_like(t)
    if isinstance(spec, PowerTaper):
        return np.minimum(t**spec.r, 1.0) if spec.r > 0 else np.ones_like(t)
    if isinstance(spec, ExpInverse):
        with np.errstate(divide="ignore"):
            return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    raise TypeError(f"unknown taper {spec!r}")


def admissible(theta: ThetaSpec, k: int) -> bool:
    """Whether derivative order k of heat-admissible measures is allowed under taper theta.

    A taper bounded by t^r near zero admits 0 <= k < 2r + 1/2.
    """
    if int(k) != k or k < 0:
        raise ValueError("k must be a nonnegative integer")
    if isinstance(theta, ExpInverse):
        return True
    r = theta.r if isinstance(theta, PowerTaper) else 0.0
    if not isinstance(theta, (One, PowerTaper)):
        raise TypeError(f"unknown taper {theta!r}")
    return k < 2.0 * r + 0.5


# ---------------------------------------------------------------- kernel and derivatives


def heat_kernel(nu: float, t, x):
    _positive_time(t)
    if nu <= 0:
        raise ValueError("nu must be positive")
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    val = np.exp(-x * x / (2.0 * nu * t)) / np.sqrt(2.0 * math.pi * nu * t)
    return float(val) if val.ndim == 0 else val


def hermite_He(n: int, x, t):
    """Probabilists' Hermite polynomial in x/sqrt(t):

    sum_k (-1)^k C(n, 2k) (2k-1)!! (x/sqrt t)^{n-2k}.
    """
    _positive_time(t)
    if n < 0:
        raise ValueError("n must be nonnegative")
    z = np.asarray(x, dtype=float) / np.sqrt(np.asarray(t, dtype=float))
    total = np.zeros_like(z)
    for k in range(n // 2 + 1):
        dfact = math.prod(range(2 * k - 1, 0, -2)) if k else 1
        total = total + (-1) ** k * math.comb(n, 2 * k) * dfact * z ** (n - 2 * k)
    return float(total) if total.ndim == 0 else total


def heat_kernel_derivative(n: int, nu: float, t, x):
    """d^n/dy^n of G_nu(t, x - y), written with z = x - y as (nu t)^{-n/2} G_nu(t, z) He_n(z; nu t)."""
    _positive_time(t)
    g = np.asarray(heat_kernel(nu, t, x))
    val = (nu * np.asarray(t, dtype=float)) ** (-0.5 * n) * g * np.asarray(hermite_He(n, x, nu * np.asarray(t)))
    return float(val) if np.ndim(val) == 0 else val


def derivative_bound_constants(n: int, nu: float, candidates=(2.0, 4.0, 8.0)):
    """Measured (C_n, nu_n) with |d^n_y G_nu(t, x-y)| <= C_n t^{-n/2} G_{nu_n}(t, x-y).

    In w = z / sqrt(nu t) the ratio is time free:
    nu^{-n/2} sqrt(nu_n/nu) |He_n(w)| exp(-w^2 (1 - nu/nu_n) / 2).
    The sup over w is taken on a grid and polished with a bounded optimiser;
    the candidate nu_n = c * nu with the smallest C_n wins.
    """
    best = None
    for c in candidates:
        shrink = 1.0 - 1.0 / c
        scale = nu ** (-0.5 * n) * math.sqrt(c)

        def ratio(w):
            return scale * abs(hermite_He(n, w, 1.0)) * math.exp(-0.5 * shrink * w * w)

        ws = np.linspace(0.0, 12.0 + 4.0 * math.sqrt(n), 4001)
        vals = scale * np.abs(hermite_He(n, ws, 1.0)) * np.exp(-0.5 * shrink * ws * ws)
        i = int(np.argmax(vals))
        lo, hi = ws[max(i - 1, 0)], ws[min(i + 1, len(ws) - 1)]
        res = optimize.minimize_scalar(lambda w: -ratio(w), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        cn = max(vals[i], -res.fun) * (1.0 + 1e-9)
        if best is None or cn < best[0]:
            best = (cn, c * nu)
    return best


# ---------------------------------------------------------------- initial data


@dataclass(frozen=True)
class DiracAt:
    x0: float = 0.0


@dataclass(frozen=True)
class ExpGrowthDensity:
    """mu0(dx) = exp(c |x|) dx."""

    c: float = 1.0


@dataclass(frozen=True)
class TabulatedDensity:
    """Piecewise-linear density through (xs, values), zero outside [xs[0], xs[-1]]."""

    xs: tuple
    values: tuple

    def __post_init__(self):
        if len(self.xs) != len(self.values) or len(self.xs) < 2:
            raise ValueError("need matching xs and values of length >= 2")
        if any(b <= a for a, b in zip(self.xs[:-1], self.xs[1:])):
            raise ValueError("xs must be strictly increasing")

    def density(self, y):
        return np.interp(y, self.xs, self.values, left=0.0, right=0.0)


@dataclass(frozen=True)
class HeatInitial:
    """mu = mu0^{(k)} with mu0 one of the bases above."""

    k: int
    base: object
    nu: float = 1.0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ValueError("k must be a nonnegative integer")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not isinstance(self.base, (DiracAt, ExpGrowthDensity, TabulatedDensity)):
            raise TypeError(f"unsupported base measure {self.base!r}")
        if isinstance(self.base, ExpGrowthDensity) and not math.isfinite(self.base.c):
            raise ValueError("growth rate must be finite")


def _density_pairing(base, x, kern, nu, t):
    """int mu0(y) kern(x - y) dy for density bases."""
    sd = math.sqrt(nu * t)
    if isinstance(base, TabulatedDensity):
        pts = [p for p in base.xs]
        f = lambda y: base.density(y) * kern(x - y)
        return sum(integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=200)[0]
                   for a, b in zip(pts[:-1], pts[1:]))
    c = base.c
    f = lambda y: math.exp(c * abs(y)) * kern(x - y)
    # the integrand peaks near x +- c nu t; integrate outward from the peaks and from 0
    lo = min(0.0, x - abs(c) * nu * t) - 40.0 * sd
    hi = max(0.0, x + abs(c) * nu * t) + 40.0 * sd
    cuts = sorted({lo, 0.0 if lo < 0.0 < hi else lo, x, hi})
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b > a:
            total += integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=400)[0]
    return total


def j0_heat(t, x, init: HeatInitial) -> float:
    """d_x^k (mu0 * G_nu(t, .))(x), i.e. (-1)^k int mu0(dy) d^k_y[G_nu(t, x - y)]."""
    _positive_time(t)
    k, nu = init.k, init.nu
    sign = (-1) ** k
    if isinstance(init.base, DiracAt):
        return sign * heat_kernel_derivative(k, nu, t, x - init.base.x0)
    kern = lambda z: heat_kernel_derivative(k, nu, t, z)
    return sign * _density_pairing(init.base, x, kern, nu, t)


def j0_heat_envelope(t, x, init: HeatInitial, c_k: float, nu_k: float) -> float:
    """C_k t^{-k/2} (|mu0| * G_{nu_k}(t, .))(x), the dominating function for |J0|."""
    _positive_time(t)
    if isinstance(init.base, DiracAt):
        conv = heat_kernel(nu_k, t, x - init.base.x0)
    else:
        conv = _density_pairing(init.base, x, lambda z: heat_kernel(nu_k, t, z), nu_k, t)
    return c_k * t ** (-0.5 * init.k) * conv


def weak_pairing(psi, t, init: HeatInitial, support=(-1.0, 1.0)) -> float:
    """<psi, J0(t, .)> for psi supported in ``support``, by adaptive quadrature."""
    _positive_time(t)
    a, b = support
    pts = []
    if isinstance(init.base, DiracAt) and a < init.base.x0 < b:
        pts = [init.base.x0]
    f = lambda x: psi(x) * j0_heat(t, x, init)
    # the kernel is sharply peaked for small t, so split around the peak at its own scale
    sd = math.sqrt(init.nu * t)
    cuts = {a, b}
    for p in pts:
        for m in (-40, -10, -3, -1, 0, 1, 3, 10, 40):
            c = p + m * sd
            if a < c < b:
                cuts.add(c)
    cuts = sorted(cuts)
    return sum(integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
               for lo, hi in zip(cuts[:-1], cuts[1:]))


# ---------------------------------------------------------------- identities


def gg_square(nu, t, x):
    """(G_nu(t,x)^2, (4 pi nu t)^{-1/2} G_{nu/2}(t,x))."""
    _positive_time(t)
    lhs = heat_kernel(nu, t, x) ** 2
    rhs = heat_kernel(nu / 2.0, t, x) / math.sqrt(4.0 * math.pi * nu * t)
    return lhs, rhs


def gg_product(nu, t, s, x, y):
    """(G(t,x) G(s,y), G(ts/(t+s), (s x + t y)/(t+s)) G(t+s, x-y))."""
    _positive_time(t)
    _positive_time(s, "s")
    lhs = heat_kernel(nu, t, x) * heat_kernel(nu, s, y)
    rhs = heat_kernel(nu, t * s / (t + s), (s * x + t * y) / (t + s)) * heat_kernel(nu, t + s, x - y)
    return lhs, rhs


def split_bound(t, s, x, z1, z2):
    """(G1(t, x - zbar) G1(s, z1 - z2), m/sqrt(ts) G1(m, x - z1) G1(m, x - z2)) with m = max(4t, s)."""
    _positive_time(t)
    _positive_time(s, "s")
    zbar = 0.5 * (z1 + z2)
    m = max(4.0 * t, s)
    lhs = heat_kernel(1.0, t, x - zbar) * heat_kernel(1.0, s, z1 - z2)
    rhs = m / math.sqrt(t * s) * heat_kernel(1.0, m, x - z1) * heat_kernel(1.0, m, x - z2)
    return lhs, rhs
