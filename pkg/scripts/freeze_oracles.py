"""Compute reference values with mpmath (independent of the package) and freeze them.

Run once; tests read tests/oracles.json and never recompute these numbers.

    python3 scripts/freeze_oracles.py
"""

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 30
OUT = Path(__file__).resolve().parent.parent / "tests" / "oracles.json"


def K(t, x, kappa, lam):
    if abs(x) > kappa * t:
        return mp.mpf(0)
    arg = mp.sqrt(max(mp.mpf(0), lam**2 * ((kappa * t) ** 2 - x**2) / (2 * kappa)))
    return lam**2 / 4 * mp.besseli(0, arg)


def f(v):
    return float(v)


def main():
    o = {}
    o["bessel_i0"] = [[z, f(mp.besseli(0, z))] for z in (0.0, 0.5, 2.0, 10.0, 29.5, 30.5, 80.0, 300.0)]
    o["bessel_i0e"] = [[z, f(mp.besseli(0, z) * mp.e ** (-abs(z)))] for z in (0.5, 40.0, 700.0, 5000.0)]
    pts = [(1.0, 0.0, 1.0, 1.0), (1.0, 0.0, 2.0, 2.0), (2.5, 1.2, 1.0, 1.5),
           (5.0, -3.0, 1.0, 1.0), (0.3, 0.1, 0.5, 3.0), (40.0, 10.0, 1.0, 1.0)]
    o["kernel_K"] = [[t, x, k, l, f(K(t, x, k, l))] for t, x, k, l in pts]
    o["calH"] = [[t, k, l, f(mp.cosh(abs(l) * mp.sqrt(k / 2) * t) - 1)]
                 for t, k, l in ((1.0, 2.0, 1.0), (1e-4, 1.0, 1.0), (3.0, 0.5, 2.0), (50.0, 1.0, 1.0))]

    grid = [(0.3, 0.5), (1.0, 1.0), (-1.5, 2.0), (2.0, 0.1), (0.01, 3.0),
            (-0.2, 4.0), (3.0, 2.5), (0.7, 0.0), (5.0, 1.3), (-2.2, 0.9)]
    o["int_cosh_linear"] = [[a, t, f(mp.quad(lambda s: mp.cosh(a * s) * (t - s), [0, t]))] for a, t in grid]
    o["int_sinh_linear"] = [[a, t, f(mp.quad(lambda s: mp.sinh(a * s) * (t - s), [0, t]))] for a, t in grid]
    o["int_sinh_quadratic"] = [[a, t, f(mp.quad(lambda s: mp.sinh(a * s) * (t - s) ** 2, [0, t]))]
                               for a, t in grid]
    wgrid = [(1.0, 2.0, 0.0, 1.0), (0.5, 1.5, 0.3, 2.0), (2.0, 0.3, 0.7, 1.2), (-1.0, 0.5, 0.1, 0.8),
             (3.0, 1.0, 1.0, 2.0), (0.2, 0.9, 0.5, 3.0), (1.1, -0.4, 0.25, 1.7), (2.5, 2.0, 0.9, 0.6),
             (0.8, 1.6, 0.0, 0.0), (1.7, 0.2, 0.4, 4.0)]
    o["cosh_sinh_window"] = [[a, c, b, t, f(mp.quad(lambda s: mp.cosh(a * (t - s)) * mp.sinh(c * s), [b * t, t]))]
                             for a, c, b, t in wgrid]
    kgrid = [(1.0, 2.0, 1.0), (0.5, 1.0, 1.0), (2.0, 1.0, 0.7), (3.0, 0.5, 1.5), (0.1, 1.0, 4.0),
             (1.5, 3.0, 0.3), (4.0, 1.0, 1.0), (2.5, 2.0, 2.0), (0.8, 0.7, -1.2), (1.2, 1.0, 3.0)]
    o["int_K_dx"] = [[t, k, l, f(mp.quad(lambda x: K(t, x, k, l), [-k * t, 0, k * t]))] for t, k, l in kgrid]

    # (J0^2 * G^2)(t, x) for g = |x|^{-a}: G^2 = 1/4 on the backward cone;
    # in characteristic coordinates p = y - kappa s, w = y + kappa s the cone is a triangle
    def powerlaw(t, x, a, kappa):
        a = mp.mpf(a)
        hi = x + kappa * t

        def F(w, b):
            # antiderivative of |w|^{-b}
            return mp.sign(w) * abs(w) ** (1 - b) / (1 - b)

        def inner(p):
            # int_p^hi (|p|^{-a} + |w|^{-a})^2 / 4 dw in closed form
            gp = abs(p) ** (-a)
            return 0.25 * (gp * gp * (hi - p) + 2 * gp * (F(hi, a) - F(p, a)) + F(hi, 2 * a) - F(p, 2 * a))
        lo = x - kappa * t
        brk = [lo] + ([0] if lo < 0 < hi else []) + [hi]
        total = mp.mpf(0)
        for u, v in zip(brk[:-1], brk[1:]):
            # p = z + sgn r^6 smooths the |p|^{-2a} endpoint singularity at z = 0
            if v == 0:
                total += mp.quad(lambda r: inner(-r**6) * 6 * r**5, [0, (-u) ** (mp.mpf(1) / 6)])
            elif u == 0:
                total += mp.quad(lambda r: inner(r**6) * 6 * r**5, [0, v ** (mp.mpf(1) / 6)])
            else:
                total += mp.quad(inner, [u, v])
        # ds dy = dp dw / (2 kappa)
        return 0.25 * total / (2 * kappa)

    o["powerlaw_j0sq_conv"] = [[t, x, a, k, f(powerlaw(t, x, a, k))]
                               for t, x, a, k in ((1.0, 0.3, 0.25, 1.0), (1.0, 1.0, 0.25, 1.0),
                                                  (1.0, 1.6, 0.25, 1.0), (2.0, -0.5, 0.1, 0.5),
                                                  (0.5, 0.0, 0.4, 2.0), (1.0, 0.2, 0.0, 1.0))]
    OUT.write_text(json.dumps(o, indent=1) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
