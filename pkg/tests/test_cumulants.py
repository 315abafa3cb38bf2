from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rigamp.cumulants import (
    analytic_cumulants,
    analytic_moments_beta,
    default_order,
    estimate_moments_hutchinson,
    exact_moments,
    moments_to_cumulants,
)
from rigamp.ensemble import SpectrumSpec, build_design, trial_rng
from rigamp.errors import InvalidParameterError


def test_exact_moments_examples():
    assert exact_moments([1, 1], 2, 4).m == (1.0, 1.0, 1.0, 1.0)
    assert exact_moments([1, 1], 4, 3).m == (0.5, 0.5, 0.5)
    m = exact_moments([2, 1, 0], 3, 2).m
    assert m[0] == pytest.approx(5 / 3, rel=1e-15)
    assert m[1] == pytest.approx(17 / 3, rel=1e-15)


def test_hutchinson_identity_exact():
    A = build_design(SpectrumSpec("Explicit", (1.0,) * 12), 12, 12, trial_rng(0))
    for probes in (1, 5):
        m = estimate_moments_hutchinson(A, 4, probes, trial_rng(1)).m
        np.testing.assert_allclose(m, 1.0, rtol=1e-12)


def test_hutchinson_matches_exact_within_stderr():
    lam = tuple(np.random.default_rng(3).uniform(0.5, 1.2, 20))
    A = build_design(SpectrumSpec("Explicit", lam), 30, 20, trial_rng(3))
    e = np.array(exact_moments(lam, 30, 5).m)
    table = estimate_moments_hutchinson(A, 5, 200, trial_rng(3, 0, 2))
    z = (np.array(table.m) - e) / np.array(table.stderr)
    assert np.all(np.abs(z) <= 4.0)


def test_hutchinson_converges_to_exact():
    lam = tuple(np.random.default_rng(4).uniform(0.5, 1.2, 20))
    A = build_design(SpectrumSpec("Explicit", lam), 30, 20, trial_rng(4))
    e = np.array(exact_moments(lam, 30, 3).m)
    m = np.array(estimate_moments_hutchinson(A, 3, 20_000, trial_rng(4, 0, 2)).m)
    np.testing.assert_allclose(m, e, rtol=0.01)


def test_hutchinson_gaussian_second_moment():
    A = build_design(SpectrumSpec("IidGaussian"), 2000, 1000, trial_rng(5))
    m2 = estimate_moments_hutchinson(A, 1, 20, trial_rng(5, 0, 2)).m[0]
    exact = np.sum(A.singular_values**2) / 2000
    assert 0.47 <= m2 <= 0.53
    assert 0.47 <= exact <= 0.53


def test_hutchinson_stderr_scaling():
    A = build_design(SpectrumSpec("ScaledBeta"), 60, 40, trial_rng(6))
    spread = {}
    for p in (10, 20):
        reps = np.array([estimate_moments_hutchinson(A, 2, p, trial_rng(6, r, p)).m for r in range(300)])
        spread[p] = reps.std(axis=0, ddof=1)
    ratio = spread[10] / spread[20]
    assert np.all(np.abs(ratio / np.sqrt(2) - 1) <= 0.3)


def test_hutchinson_bad_parameters():
    A = build_design(SpectrumSpec("IidGaussian"), 5, 5, trial_rng(0))
    with pytest.raises(InvalidParameterError):
        estimate_moments_hutchinson(A, 0, 3, trial_rng(0))
    with pytest.raises(InvalidParameterError):
        estimate_moments_hutchinson(A, 2, 0, trial_rng(0))


def test_beta_closed_form_exact():
    m = analytic_moments_beta(Fraction(1, 2), 6, exact=True).m
    assert list(m) == [Fraction(6**k, (k + 1) * (2 * k + 1)) for k in range(1, 7)]
    assert analytic_moments_beta(0.5, 2).m == pytest.approx((1.0, 2.4), rel=1e-15)
    assert analytic_moments_beta(2.0, 1).m[0] == pytest.approx(0.5, rel=1e-15)


def test_kappa2_equals_m2_and_first_orders():
    kap = moments_to_cumulants([1.0, 1.0, 1.0], 1.0, 3).kappa
    assert kap[0] == 1.0
    np.testing.assert_allclose(kap, oracles.cumulants_straight_line([1.0, 1.0, 1.0], 1.0, 3), atol=1e-14)


def test_order_errors():
    with pytest.raises(InvalidParameterError):
        moments_to_cumulants([1.0, 2.0], 1.0, 3)
    with pytest.raises(InvalidParameterError):
        moments_to_cumulants([1.0, 2.0], 1.0, 0)
    with pytest.raises(InvalidParameterError):
        moments_to_cumulants([1.0, 2.0], -1.0, 2)
    assert default_order(10) == 24


def test_exact_gaussian_design_cumulants():
    A = build_design(SpectrumSpec("IidGaussian"), 4000, 2000, trial_rng(8))
    kap = moments_to_cumulants(exact_moments(A.singular_values, 4000, 5), 2.0, 5).as_array()
    assert abs(kap[0] * 2.0 - 1) <= 0.02
    for k in range(2, 6):
        assert abs(kap[k - 1]) <= 0.05 * kap[0] ** k


def test_analytic_tables():
    np.testing.assert_array_equal(analytic_cumulants("IidGaussian", 20, 10, 4).as_array(), [0.5, 0, 0, 0])
    np.testing.assert_array_equal(analytic_cumulants("IidGaussian", 10, 20, 3).as_array(), [1, 0, 0])
    beta = analytic_cumulants("ScaledBeta", 13, 10, 6).as_array()
    ref = oracles.cumulants_straight_line(analytic_moments_beta(1.3, 6).m, 1.3, 6)
    np.testing.assert_allclose(beta, ref, rtol=1e-12)
    exp = analytic_cumulants("Explicit", 3, 3, 3, values=(1.0, 1.0, 1.0)).as_array()
    np.testing.assert_allclose(exp, oracles.cumulants_straight_line([1.0, 1.0, 1.0], 1.0, 3), atol=1e-14)


def test_scale_covariance():
    rng = np.random.default_rng(9)
    for delta, n_out, n in ((0.5, 10, 10), (1.0, 12, 12), (2.0, 16, 8)):
        lam = rng.uniform(0, 1.5, n)
        k1 = np.array(moments_to_cumulants(exact_moments(lam, n_out, 6), delta).kappa)
        k2 = np.array(moments_to_cumulants(exact_moments(2 * lam, n_out, 6), delta).kappa)
        np.testing.assert_allclose(k2, k1 * 4.0 ** np.arange(1, 7), rtol=1e-12, atol=1e-12)


def test_fraction_path_is_exact():
    m = [Fraction(1), Fraction(3, 2), Fraction(17, 7)]
    kap = moments_to_cumulants(m, Fraction(2), 3).kappa
    assert all(isinstance(k, Fraction) for k in kap)
    # the forward map applied to these cumulants returns the moments
    back = oracles.moments_from_cumulants([float(k) for k in kap], 2.0, 3)
    np.testing.assert_allclose(back, [float(v) for v in m], rtol=1e-13)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.0, 2.0), min_size=2, max_size=15),
    st.sampled_from([0.5, 1.0, 2.0]),
)
def test_round_trip_through_oracle(lam, delta):
    n_out = len(lam) if delta <= 1 else 2 * len(lam)
    m = exact_moments(lam, n_out, 6).m
    kap = moments_to_cumulants(m, delta, 6).as_array()
    assert kap[0] == m[0]
    back = oracles.moments_from_cumulants(kap, delta, 6)
    np.testing.assert_allclose(back, m, rtol=1e-10, atol=1e-12)
