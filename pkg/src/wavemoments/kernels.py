"""Special functions and light-cone kernels for the 1-D stochastic wave equation.

All kernels accept numpy arrays for ``t`` and ``x`` and broadcast. The light
cone ``|x| <= kappa*t`` is closed: boundary points count as inside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "WaveParams",
    "DegenerateParameterError",
    "bessel_i0",
    "bessel_i0e",
    "wave_kernel",
    "kernel_K",
    "kernel_L_n",
    "calH",
    "T_kappa",
    "theta_kappa",
    "upsilon",
    "int_cosh_linear",
    "int_sinh_linear",
    "int_sinh_quadratic",
    "int_K_dx",
    "cosh_sinh_window",
]

_SCALED_SWITCH = 30.0


class DegenerateParameterError(ValueError):
    """Raised when a closed form is evaluated at a parameter where it is undefined."""


@dataclass(frozen=True)
class WaveParams:
    """Wave speed ``kappa`` and linear noise coupling ``lam``."""

    kappa: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ValueError(f"kappa must be positive and finite, got {self.kappa}")
        if not math.isfinite(self.lam):
            raise ValueError(f"lam must be finite, got {self.lam}")

    @property
    def rate(self) -> float:
        """|lam| * sqrt(kappa/2), the exponential rate of H and of the second moment."""
        return abs(self.lam) * math.sqrt(self.kappa / 2.0)


def _i0_series(z2q):
    # sum_k q^k/(k!)^2 with q = z^2/4, vectorised with a shared stopping rule
    q = np.asarray(z2q, dtype=float)
    term = np.ones_like(q)
    total = np.ones_like(q)
    k = 0
    while True:
        k += 1
        term = term * q / (k * k)
        total = total + term
        if np.all(term <= 1e-17 * total):
            return total


def _i0e_asymptotic(az):
    # e^{-z} I0(z) ~ (2 pi z)^{-1/2} sum_k ((2k-1)!!)^2 / (k! (8z)^k), used for z > 30
    az = np.asarray(az, dtype=float)
    term = np.ones_like(az)
    total = np.ones_like(az)
    for k in range(1, 40):
        term = term * (2 * k - 1) ** 2 / (k * 8.0 * az)
        total = total + term
        if np.all(term <= 1e-17 * total):
            break
    return total / np.sqrt(2.0 * np.pi * az)


def bessel_i0e(z):
    """Exponentially scaled Bessel function e^{-|z|} I0(z)."""
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    out = np.empty_like(az)
    small = az <= _SCALED_SWITCH
    if np.any(small):
        zs = az[small]
        out[small] = _i0_series(zs * zs / 4.0) * np.exp(-zs)
    if np.any(~small):
        out[~small] = _i0e_asymptotic(az[~small])
    return out if out.ndim else float(out)


def bessel_i0(z):
    """Modified Bessel function I0(z) = sum_k (z^2/4)^k / (k!)^2."""
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    out = np.empty_like(az)
    small = az <= _SCALED_SWITCH
    if np.any(small):
        zs = az[small]
        out[small] = _i0_series(zs * zs / 4.0)
    if np.any(~small):
        zl = az[~small]
        with np.errstate(over="ignore"):
            out[~small] = np.exp(zl) * _i0e_asymptotic(zl)
    return out if out.ndim else float(out)


def _scalar(a):
    return float(a) if np.ndim(a) == 0 else a


def _cone_gap(t, x, kappa):
    """(kappa t)^2 - x^2 and the closed-cone mask."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    inside = (t >= 0) & (np.abs(x) <= kappa * t)
    gap = np.where(inside, (kappa * t) ** 2 - x * x, 0.0)
    return np.maximum(gap, 0.0), inside


def wave_kernel(t, x, p: WaveParams):
    """G(t, x) = 1/2 on the closed cone |x| <= kappa t, t >= 0, and 0 elsewhere."""
    _, inside = _cone_gap(t, x, p.kappa)
    return _scalar(np.where(inside, 0.5, 0.0))


def kernel_K(t, x, p: WaveParams):
    """K(t,x) = lam^2/4 I0(sqrt(lam^2((kappa t)^2 - x^2)/(2 kappa))) on the cone."""
    gap, inside = _cone_gap(t, x, p.kappa)
    arg = np.sqrt(p.lam**2 * gap / (2.0 * p.kappa))
    val = 0.25 * p.lam**2 * np.asarray(bessel_i0(arg))
    return _scalar(np.where(inside, val, 0.0))


def kernel_L_n(n: int, t, x, p: WaveParams):
    """n-th term of the series K = sum L_n; L_0 = lam^2 G^2.

    L_n = lam^{2n+2} ((kappa t)^2 - x^2)^n / (2^{3n+2} (n!)^2 kappa^n) on the cone.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    gap, inside = _cone_gap(t, x, p.kappa)
    q = p.lam**2 * gap / (8.0 * p.kappa)
    # q^n/(n!)^2 via logs would lose the exact zero at the boundary, so go direct
    val = 0.25 * p.lam**2 * q**n / math.factorial(n) ** 2
    return _scalar(np.where(inside, val, 0.0))


def calH(t, p: WaveParams):
    """H(t) = cosh(|lam| sqrt(kappa/2) t) - 1, written as 2 sinh^2 to keep small-t accuracy."""
    t = np.asarray(t, dtype=float)
    return _scalar(2.0 * np.sinh(0.5 * p.rate * t) ** 2)


def T_kappa(t, x, kappa: float):
    """(t - |x|/(2 kappa)) on |x| <= 2 kappa t, else 0."""
    t = np.asarray(t, dtype=float)
    ax = np.abs(np.asarray(x, dtype=float))
    return _scalar(np.where(ax <= 2.0 * kappa * t, t - ax / (2.0 * kappa), 0.0))


def theta_kappa(t, x, y, kappa: float):
    """kappa/4 * T_kappa(t, x - y)^2, the space-time overlap of two backward cones."""
    T = np.asarray(T_kappa(t, np.asarray(x) - np.asarray(y), kappa))
    return _scalar(0.25 * kappa * T * T)


def upsilon(t, p: WaveParams):
    """sum_n B_n(t) with B_n = (lam^2 kappa t^2 / 8)^n / (n!)^2."""
    t = np.asarray(t, dtype=float)
    return _scalar(_i0_series(p.lam**2 * p.kappa * t * t / 8.0))


def _nonzero(a, name="a"):
    if a == 0:
        raise DegenerateParameterError(f"{name} must be nonzero")


def int_cosh_linear(a: float, t):
    """int_0^t cosh(a s)(t - s) ds = (cosh(a t) - 1)/a^2."""
    _nonzero(a)
    t = np.asarray(t, dtype=float)
    return _scalar(2.0 * np.sinh(0.5 * a * t) ** 2 / a**2)


def _odd_tail(x, start):
    # sum_{k >= start} x^k / k! over k of the parity of start; for |x| < 1
    term = x**start / math.factorial(start)
    total = term
    k = start
    for _ in range(30):
        term = term * x * x / ((k + 1) * (k + 2))
        k += 2
        total = total + term
    return total


def int_sinh_linear(a: float, t):
    """int_0^t sinh(a s)(t - s) ds = (sinh(a t) - a t)/a^2."""
    _nonzero(a)
    x = a * np.asarray(t, dtype=float)
    # the difference cancels badly for small a t, so use the Taylor tail there
    val = np.where(np.abs(x) < 1.0, _odd_tail(np.minimum(np.abs(x), 1.0), 3) * np.sign(x),
                   np.sinh(x) - x)
    return _scalar(val / a**2)


def int_sinh_quadratic(a: float, t):
    """int_0^t sinh(a s)(t - s)^2 ds = (2 cosh(a t) - a^2 t^2 - 2)/a^3."""
    _nonzero(a)
    x = a * np.asarray(t, dtype=float)
    small = np.abs(x) < 1.0
    val = np.where(small, 2.0 * _odd_tail(np.where(small, x, 0.0), 4),
                   4.0 * np.sinh(0.5 * x) ** 2 - x * x)
    return _scalar(val / a**3)


def int_K_dx(t, p: WaveParams):
    """Spatial integral of K: |lam| sqrt(kappa/2) sinh(|lam| sqrt(kappa/2) t)."""
    t = np.asarray(t, dtype=float)
    return _scalar(p.rate * np.sinh(p.rate * t))


def cosh_sinh_window(a: float, c: float, b: float, t):
    """int_{bt}^t cosh(a(t - s)) sinh(c s) ds for a != c and b in [0, 1]."""
    if a == c or a == -c:
        raise DegenerateParameterError("cosh_sinh_window needs a^2 != c^2")
    if not 0.0 <= b <= 1.0:
        raise DegenerateParameterError("b must lie in [0, 1]")
    t = np.asarray(t, dtype=float)
    bct = b * c * t
    rest = a * (1.0 - b) * t
    num = c * np.cosh(bct) * np.cosh(rest) - c * np.cosh(c * t) + a * np.sinh(bct) * np.sinh(rest)
    return _scalar(num / (a * a - c * c))
