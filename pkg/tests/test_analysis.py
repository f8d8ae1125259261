import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wavemoments import analysis as an
from wavemoments import closed_moments as cm
from wavemoments import simulator as sim


# ---------------------------------------------------------------- Lyapunov fits


@given(st.floats(-3, 3), st.floats(1e-3, 1e3), st.floats(-1, 1))
def test_fit_invariant_under_scaling(rate, scale, wiggle):
    ts = np.linspace(0, 10, 21)
    ms = np.exp(rate * ts + 0.01 * wiggle * np.sin(ts))
    a = an.fit_lyapunov(list(zip(ts, ms)), (0, 10))
    b = an.fit_lyapunov(list(zip(ts, scale * ms)), (0, 10))
    assert a == pytest.approx(b, abs=1e-9)


def test_fit_recovers_rate_in_window():
    ts = np.linspace(0, 20, 41)
    ms = np.where(ts < 5, 1.0, np.exp(0.3 * (ts - 5)))
    assert an.fit_lyapunov(list(zip(ts, ms)), (5, 20)) == pytest.approx(0.3, abs=1e-12)


def test_fit_errors():
    ts = np.linspace(0, 1, 5)
    good = list(zip(ts, np.exp(ts)))
    with pytest.raises(ValueError):
        an.fit_lyapunov(good, (0, 2))
    with pytest.raises(ValueError):
        an.fit_lyapunov(good, (0.1, 0.3))
    with pytest.raises(ValueError):
        an.fit_lyapunov(list(zip(ts[::-1], np.exp(ts))), (0, 1))
    with pytest.raises(ValueError):
        an.fit_lyapunov(list(zip(ts, -np.exp(ts))), (0, 1))
    with pytest.raises(ValueError):
        an.fit_lyapunov([1, 2, 3], (0, 1))


# ---------------------------------------------------------------- growth scans


def test_scan_locates_synthetic_crossing():
    # exp(2 t - 2.5 |x|): the rate along the ray alpha is 2 - 2.5 alpha, zero at 0.8
    field = lambda t, x: math.exp(2 * t - 2.5 * abs(x))
    scan = an.growth_index_scan(field, np.arange(0.5, 1.2, 0.05), 10.0, kappa=1.0)
    assert scan.crossing == pytest.approx(0.8, abs=1e-9)
    assert np.allclose(scan.values, 2 - 2.5 * scan.alphas)


@given(st.lists(st.floats(0.1, 3.0), min_size=3, max_size=12, unique=True), st.floats(0.1, 2.0),
       st.floats(0.5, 3.0))
def test_scan_values_nonincreasing(alphas, rate, decay):
    alphas = sorted(alphas)
    field = lambda t, x: math.exp(rate * t - decay * abs(x)) * (1 + 0.5 * math.sin(x))
    scan = an.growth_index_scan(field, alphas, 5.0, kappa=1.0)
    assert np.all(np.diff(scan.values) <= 1e-12)


def test_scan_without_sign_change():
    up = an.growth_index_scan(lambda t, x: math.exp(t), [0.5, 1.0], 3.0, 1.0)
    assert up.crossing is None and up.bracket == (1.0, None)
    down = an.growth_index_scan(lambda t, x: math.exp(-t), [0.5, 1.0], 3.0, 1.0)
    assert down.crossing is None and down.bracket == (None, 0.5)


def test_scan_zero_moment_counts_as_decay():
    field = lambda t, x: math.exp(t) if abs(x) <= 1.05 * t else 0.0
    scan = an.growth_index_scan(field, [0.9, 1.0, 1.1, 1.2], 4.0, 1.0)
    assert scan.values[-1] == -math.inf
    assert scan.crossing == pytest.approx(1.0)


def test_scan_argument_checks():
    with pytest.raises(ValueError):
        an.growth_index_scan(lambda t, x: 1.0, [1.0, 0.5], 1.0, 1.0)
    with pytest.raises(ValueError):
        an.growth_index_scan(lambda t, x: 1.0, [-1.0, 0.5], 1.0, 1.0)
    with pytest.raises(ValueError):
        an.growth_index_scan(lambda t, x: -1.0, [0.5, 1.0], 1.0, 1.0)


def test_exact_field_scan_near_prediction():
    init = cm.InitialData(cm.ExpDecay(1.0, 2.0))
    scan = an.growth_index_scan(lambda t, x: cm.second_moment(t, x, init, cm.Linear(1.0), 1.0),
                                np.arange(0.9, 1.2, 0.01), 30.0, 1.0)
    lo, up = cm.growth_index_bounds(cm.GrowthQuery(2, 2.0, 2.0), cm.Linear(1.0), 1.0)
    assert scan.crossing == pytest.approx(up, rel=0.05)


# ---------------------------------------------------------------- Hoelder exponents


def test_predicted_values():
    assert an.predicted_holder(an.HolderQuery()) == 0.5
    assert an.predicted_holder(an.HolderQuery(a=0.25)) == 0.25
    assert an.predicted_holder(an.HolderQuery(1.0)) == 0.0


@given(st.floats(1.0, 1e6), st.floats(1.0, 1e6))
def test_predicted_nonincreasing_in_inverse_gamma(g1, g2):
    lo, hi = sorted((g1, g2))
    assert an.predicted_holder(an.HolderQuery(lo)) <= an.predicted_holder(an.HolderQuery(hi))


@given(st.floats(0.01, 0.49))
def test_predicted_continuous_at_boundary(a):
    gamma = 1.0 / (2.0 * a)
    if gamma < 1:
        return
    assert an.predicted_holder(an.HolderQuery(gamma)) == pytest.approx(
        an.predicted_holder(an.HolderQuery(gamma, a)), abs=1e-12)


def test_query_validation_and_consistency():
    with pytest.raises(ValueError):
        an.HolderQuery(0.5)
    with pytest.raises(ValueError):
        an.HolderQuery(2.0, 0.5)
    assert an.HolderQuery(1.5, 0.25).consistent
    assert not an.HolderQuery(3.0, 0.25).consistent
    assert an.HolderQuery(math.inf).gamma_dual == 1.0
    assert an.HolderQuery(1.0).gamma_dual == math.inf


@given(st.floats(0.0, 0.49), st.floats(0.05, 5.0), st.floats(1e-6, 1.0), st.floats(0.2, 3.0),
       st.floats(0.1, 3.0))
def test_lower_bound_dominance(a, t, frac, kappa, lam):
    h = frac * 2 * kappa * t
    (_, lhs, rhs), = an.holder_lower_bound_check(a, t, [h], kappa, lam)
    assert lhs >= rhs * (1 - 1e-9)


def test_lower_bound_edge_rounding_regression():
    # the midpoint of (kappa t, kappa t - h) sits on the edge of the smaller cone;
    # for a near 1/2 a rounding step across that edge used to cost ~0.1
    (_, lhs, rhs), = an.holder_lower_bound_check(0.46875, 1.0, [0.015952784947625486 * 3.0], 1.5, 1.0)
    assert lhs >= rhs


def test_lower_bound_ratio_stays_above_one_as_lag_shrinks():
    rows = an.holder_lower_bound_check(0.25, 1.0, np.logspace(-8, -1, 8), 1.0, 1.0)
    ratios = [lhs / rhs for _, lhs, rhs in rows]
    assert min(ratios) >= 1.0
    with pytest.raises(ValueError):
        an.holder_lower_bound_check(0.25, 1.0, [3.0], 1.0, 1.0)


def test_empirical_holder_degenerate_without_noise():
    g = sim.GridSpec(0.5, -0.2, 0.1, 1 / 64, 1.0, n_paths=10)
    fit = an.empirical_holder(g, cm.InitialData(cm.Constant(1.0)), cm.Linear(0.0), 1.0, 0.5,
                              [0.0], [2 / 64, 4 / 64], align="right")
    assert fit.degenerate and math.isnan(fit.exponent)


def test_empirical_holder_rough_estimate():
    g = sim.GridSpec(0.5, -0.3, 0.1, 1 / 128, 1.0, n_paths=400, master_seed=1)
    lags = [2 * m / 128 for m in (1, 2, 5, 10)]
    fit = an.empirical_holder(g, cm.InitialData(cm.Constant(1.0)), cm.Linear(1.0), 1.0, 0.5,
                              [0.0], lags, align="right")
    assert 0.3 < fit.exponent < 0.7
    assert np.all(np.diff(fit.rms) > 0)


def test_empirical_holder_time_direction():
    g = sim.GridSpec(0.5, -0.1, 0.1, 1 / 64, 1.0, n_paths=200, master_seed=2)
    fit = an.empirical_holder(g, cm.InitialData(cm.Constant(1.0)), cm.Linear(1.0), 1.0, 0.25,
                              [0.0], [2 / 64, 4 / 64, 8 / 64], direction="t", align="right")
    assert fit.direction == "t" and fit.exponent > 0


def test_empirical_holder_rejects_bad_pairs():
    g = sim.GridSpec(0.5, -0.1, 0.1, 1 / 64, 1.0, n_paths=10)
    init = cm.InitialData(cm.Constant(1.0))
    with pytest.raises(ValueError, match="region too small"):
        an.empirical_holder(g, init, cm.Linear(1.0), 1.0, 0.5, [0.0], [2 / 64, 0.5], align="right")
    with pytest.raises(ValueError, match="parity"):
        an.empirical_holder(g, init, cm.Linear(1.0), 1.0, 0.5, [0.0], [1 / 64, 3 / 64], align="right")
    with pytest.raises(ValueError):
        an.empirical_holder(g, init, cm.Linear(1.0), 1.0, 0.5, [0.0], [2 / 64], align="right")
    with pytest.raises(ValueError):
        an.empirical_holder(g, init, cm.Linear(1.0), 1.0, 0.5, [0.0], [2 / 64, 4 / 64], direction="z")
