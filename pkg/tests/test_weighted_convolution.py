import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavemoments import closed_moments as cm
from wavemoments import heat_extension as he
from wavemoments import kernels as kn
from wavemoments import weighted_convolution as wc

P11 = kn.WaveParams(1.0, 1.0)


def smooth_field(lat, rng, role, cone=True):
    """a exp(-b x^2) (1 + c t) + d sin(e x), optionally cut to the forward cone."""
    a, b, c, d, e = rng.uniform(0.2, 1.5, 5)
    T, X = np.meshgrid(lat.times, lat.xs, indexing="ij")
    v = a * np.exp(-b * X * X) * (1 + c * T) + 0.3 * d * np.sin(e * X)
    if cone:
        v = v * (np.abs(X) <= lat.kappa * T + 1e-12)
    return wc.LatticeField(lat, v, role)


# ---------------------------------------------------------------- plain convolution


def test_lattice_nodes_and_bounds():
    lat = wc.Lattice.covering(1.0, 0.25, 2.0)
    assert lat.dx == 0.5 and lat.n_t == 4
    assert lat.node(0.5, -1.0) == (2, lat.n_x - 2)
    with pytest.raises(ValueError):
        lat.node(0.3, 0.0)
    with pytest.raises(ValueError):
        lat.node(0.5, 100.0)
    with pytest.raises(ValueError):
        wc.Lattice.covering(1.0, 0.3, 1.0)


def test_conv_L0_matches_generic_convolution():
    lat = wc.Lattice.covering(0.75, 1 / 32, 1.0)
    rng = np.random.default_rng(1)
    f = smooth_field(lat, rng, "source", cone=False)
    L0 = wc.cone_kernel_field(lat, lambda t, x: kn.kernel_L_n(0, t, x, kn.WaveParams(1.0, 1.7)))
    a = wc.conv_L0(f, 1.7).values
    b = wc.conv_star(f, L0).values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(b))


def test_conv_star_point_queries_match_full():
    lat = wc.Lattice(0.1, 1.0, 8, 10)
    rng = np.random.default_rng(2)
    f = smooth_field(lat, rng, "source", cone=False)
    g = smooth_field(lat, rng, "lag")
    full = wc.conv_star(f, g)
    pts = [(0.8, 0.0), (0.5, -0.3), (0.1, 1.0)]
    assert np.allclose(wc.conv_star(f, g, points=pts), [full.at(t, x) for t, x in pts], rtol=1e-13)


def test_K_star_L0_identity_inside_cone():
    lat = wc.Lattice.covering(1.0, 1 / 256, 1.0)
    Ks = wc.cone_kernel_field(lat, lambda t, x: kn.kernel_K(t, x, P11), role="source")
    out = wc.conv_L0(Ks, 1.0).values
    T, X = np.meshgrid(lat.times, lat.xs, indexing="ij")
    ref = kn.kernel_K(T, X, P11) - kn.kernel_L_n(0, T, X, P11)
    deep = (np.abs(X) <= T - 2 * lat.dx + 1e-12) & (T > 0)
    assert np.max(np.abs(out - ref)[deep]) < 1e-6


def test_theta_one_is_plain_convolution():
    lat = wc.Lattice(0.1, 1.0, 6, 8)
    rng = np.random.default_rng(3)
    f, g = smooth_field(lat, rng, "source"), smooth_field(lat, rng, "lag")
    assert np.array_equal(wc.theta_conv(f, g, he.One()).values, wc.conv_star(f, g).values)


def test_grid_mismatch():
    a = wc.LatticeField(wc.Lattice(0.1, 1.0, 4, 4), np.zeros((5, 9)))
    b = wc.LatticeField(wc.Lattice(0.1, 1.0, 4, 5), np.zeros((5, 11)))
    with pytest.raises(wc.GridMismatchError):
        wc.conv_star(a, b)
    with pytest.raises(wc.GridMismatchError):
        wc.LatticeField(wc.Lattice(0.1, 1.0, 4, 4), np.zeros((4, 9)))


def test_nonfinite_field_rejected():
    with pytest.raises(ValueError):
        wc.LatticeField(wc.Lattice(0.1, 1.0, 1, 0), np.array([[np.nan], [0.0]]))


# ---------------------------------------------------------------- multiple convolutions


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_forward_equals_backward(seed, n):
    rng = np.random.default_rng(seed)
    lat = wc.Lattice(0.1, 1.0, 5, 5)
    gs = [smooth_field(lat, rng, "source")] + [smooth_field(lat, rng, "lag") for _ in range(n - 1)]
    theta = wc.LatticeField(lat, 0.5 + rng.random(lat.shape))
    for s, y in ((0.3, 0.1), (0.5, -0.2), (0.1, 0.0)):
        a = wc.multi_conv_forward(gs, theta, 0.5, 0.1, s, y)
        b = wc.multi_conv_backward(gs, theta, 0.5, 0.1, s, y)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_order_limits():
    lat = wc.Lattice(0.1, 1.0, 3, 3)
    g = wc.LatticeField(lat, np.ones(lat.shape))
    with pytest.raises(ValueError):
        wc.multi_conv_forward([g], he.One(), 0.3, 0.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        wc.multi_conv_forward([g] * 4, he.One(), 0.3, 0.0, 0.1, 0.0)


def test_plain_convolution_is_associative():
    lat = wc.Lattice(0.1, 1.0, 6, 6)
    rng = np.random.default_rng(8)
    f, g1, g2 = smooth_field(lat, rng, "source"), smooth_field(lat, rng, "lag"), smooth_field(lat, rng, "lag")
    left = wc.theta_conv(wc.theta_conv(f, g1, he.One()), g2, he.One()).at(0.6, 0.0)
    right = wc.conv_star(f, wc.LatticeField(lat, wc.conv_star(g1, g2).values, "lag")).at(0.6, 0.0)
    assert left == pytest.approx(right, rel=1e-12)


@pytest.mark.parametrize("theta", [he.One(), he.PowerTaper(0.5), he.ExpInverse()])
def test_rearrangement_identities(theta):
    lat = wc.Lattice(0.1, 1.0, 5, 6)
    rng = np.random.default_rng(11)
    f = smooth_field(lat, rng, "source")
    gs = [smooth_field(lat, rng, "lag"), smooth_field(lat, rng, "lag")]
    out = wc.rearrangement_check(f, gs, theta, 0.5, 0.0)
    assert set(out) == {"iterated", "peel", "extend"}
    for lhs, rhs in out.values():
        assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-14)


# ---------------------------------------------------------------- Picard iteration


def test_picard_constant_data():
    lat = wc.Lattice.covering(1.0, 1 / 128, 1.0)
    res = wc.picard_second_moment(cm.InitialData(cm.Constant(1.0)), cm.Linear(1.0), he.One(), lat)
    assert res.field.at(1.0, 0.0) == pytest.approx(math.cosh(math.sqrt(0.5)), abs=1e-3)


def test_picard_dirac_velocity_away_from_edge():
    # vbar > 0 feeds the whole backward cone, so the lattice must hold it
    lat = wc.Lattice.covering(1.0, 1 / 128, 1.0, x_max=2.0)
    init = cm.InitialData(cm.Zero(), cm.Dirac(0.0, 1.0))
    res = wc.picard_second_moment(init, cm.QuasiLinear(1.0, 0.5), he.One(), lat)
    for x in (0.0, 0.25, -0.5, 0.75):
        ref = cm.second_moment(1.0, x, init, cm.QuasiLinear(1.0, 0.5), 1.0)
        assert res.field.at(1.0, x) == pytest.approx(ref, abs=1e-3)


@pytest.mark.parametrize("theta", [he.One(), he.PowerTaper(1.0)])
def test_picard_iterates_monotone(theta):
    lat = wc.Lattice.covering(1.0, 1 / 64, 1.0)
    res = wc.picard_second_moment(cm.InitialData(cm.ExpDecay(1.0, 1.0)), cm.QuasiLinear(1.5, 0.2), theta, lat,
                                  keep_iterates=True)
    h = res.history
    assert len(h) == res.iterations + 1
    for a, b in zip(h[:-1], h[1:]):
        assert np.all(b >= a - 1e-15)


def test_picard_first_order_convergence():
    init = cm.InitialData(cm.Constant(1.0))
    errs = []
    for n in (32, 64, 128):
        lat = wc.Lattice.covering(1.0, 1 / n, 1.0)
        res = wc.picard_second_moment(init, cm.Linear(1.0), he.One(), lat)
        errs.append(abs(res.field.at(1.0, 0.0) - math.cosh(math.sqrt(0.5))))
    for a, b in zip(errs[:-1], errs[1:]):
        assert 1.5 <= a / b <= 3.0


def test_picard_taper_lowers_moment():
    lat = wc.Lattice.covering(1.0, 1 / 64, 1.0)
    init = cm.InitialData(cm.Constant(1.0))
    full = wc.picard_second_moment(init, cm.Linear(1.0), he.One(), lat).field.at(1.0, 0.0)
    tapered = wc.picard_second_moment(init, cm.Linear(1.0), he.PowerTaper(1.0), lat).field.at(1.0, 0.0)
    assert 1.0 < tapered < full


def test_picard_nonconvergence_and_zero_sweeps():
    lat = wc.Lattice.covering(1.0, 1 / 32, 1.0)
    init = cm.InitialData(cm.Constant(1.0))
    with pytest.raises(wc.PicardNonConvergence) as exc:
        wc.picard_second_moment(init, cm.Linear(1.0), he.One(), lat, max_iter=2)
    assert exc.value.residual > 0
    res = wc.picard_second_moment(init, cm.Linear(1.0), he.One(), lat, max_iter=0)
    assert np.all(res.field.values == 1.0)
    with pytest.raises(TypeError):
        wc.picard_second_moment(init, cm.LipschitzEnvelope(1.0), he.One(), lat)
