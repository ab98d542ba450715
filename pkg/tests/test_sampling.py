import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cavity_uq.errors import DegenerateDimensionError, InputError
from cavity_uq.sampling import (
    BetaSpec, KdeModel, SeedSpec, beta_icdf, beta_pdf, beta_sample, joint_pdf, kde_fit, kde_pdf,
    marginal_pdf, uniform_sample,
)

SPEC = BetaSpec()


def test_beta_pdf_centre():
    assert beta_pdf(0.0) == pytest.approx(140 * 0.3 ** 6 / 0.6 ** 7, rel=1e-14)
    assert beta_pdf(0.0) == pytest.approx(3.64583, abs=1e-5)


def test_beta_pdf_support():
    assert beta_pdf(0.3) == 0.0 and beta_pdf(-0.3) == 0.0
    assert np.all(beta_pdf(np.array([-1.0, 0.31, 2.0])) == 0.0)


def test_beta_pdf_normalized():
    val, _ = integrate.quad(beta_pdf, -0.3, 0.3, epsabs=1e-13)
    assert val == pytest.approx(1.0, abs=1e-10)


def test_beta_pdf_matches_scipy():
    y = np.linspace(-0.29, 0.29, 31)
    ref = stats.beta(4, 4, loc=-0.3, scale=0.6).pdf(y)
    assert np.allclose(beta_pdf(y), ref, rtol=1e-12)


def test_icdf_round_trip():
    p = np.r_[0.001, np.arange(0.01, 1.0, 0.01), 0.999]
    assert np.allclose(SPEC.cdf(beta_icdf(p)), p, rtol=0, atol=1e-10)


@given(st.floats(1e-9, 1 - 1e-9))
@settings(max_examples=200, deadline=None)
def test_icdf_round_trip_property(p):
    assert abs(float(SPEC.cdf(beta_icdf(p))) - p) <= 1e-10


def test_sample_moments():
    x = beta_sample(10 ** 6, seed=SeedSpec(5))
    assert abs(x.mean()) <= 5e-4
    assert abs(x.std(ddof=1) - 0.1) <= 1e-3
    assert x.min() >= -0.3 and x.max() <= 0.3


def test_same_seed_same_sequence():
    a = beta_sample(1000, seed=SeedSpec(42, 3))
    b = beta_sample(1000, seed=SeedSpec(42, 3))
    c = beta_sample(1000, seed=SeedSpec(42, 4))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_thread_determinism():
    n = 300_001
    one = uniform_sample(n, SeedSpec(9), threads=1)
    many = uniform_sample(n, SeedSpec(9), threads=4)
    assert np.array_equal(one, many)
    assert np.array_equal(beta_sample(n, seed=SeedSpec(9), threads=1), beta_sample(n, seed=SeedSpec(9), threads=3))


def test_kde_degenerate_dimension():
    with pytest.raises(DegenerateDimensionError):
        kde_fit(np.zeros(50))


def test_kde_too_small():
    with pytest.raises(InputError):
        kde_fit(np.arange(5.0))


def test_kde_beta_centre():
    m = kde_fit(beta_sample(10 ** 4, seed=SeedSpec(1)))
    assert kde_pdf(m, np.array([0.0])) == pytest.approx(3.646, abs=0.15)


def test_kde_one_point_kernel_scaling():
    m = KdeModel(np.array([[0.0]]), np.array([0.2]))
    assert kde_pdf(m, np.array([0.0])) == pytest.approx(0.75 / 0.2)
    assert kde_pdf(m, np.array([0.1])) == pytest.approx(0.75 * 0.75 / 0.2)


def test_kde_zero_far_away():
    x = beta_sample(1000, seed=SeedSpec(2))
    m = kde_fit(x)
    assert kde_pdf(m, np.array([x.max() + 1.01 * m.bandwidths[0]])) == 0.0


def test_kde_standard_normal():
    x = np.random.default_rng(0).standard_normal(10 ** 5)
    assert kde_pdf(kde_fit(x), np.array([0.0])) == pytest.approx(0.3989, abs=0.01)


def test_kde_marginal_integrates_to_one():
    m = kde_fit(beta_sample(5000, seed=SeedSpec(3)))
    grid = np.linspace(-0.5, 0.5, 20001)
    assert np.trapezoid(marginal_pdf(m, 0, grid), grid) == pytest.approx(1.0, abs=1e-3)


def test_kde_independent_factorization():
    rng = np.random.default_rng(4)
    sample = np.column_stack([beta_icdf(rng.random(10 ** 4)), beta_icdf(rng.random(10 ** 4))])
    m = kde_fit(sample)
    g = np.linspace(-0.25, 0.25, 21)
    yy = np.linspace(-0.45, 0.45, 4501)
    for dim in (0, 1):
        one_d = kde_pdf(kde_fit(sample[:, dim]), g[:, None])
        assert np.abs(marginal_pdf(m, dim, g) - one_d).max() <= 1e-12
        # integrating the joint over the other coordinate recovers the 1d fit
        pts = np.zeros((yy.size, 2))
        integrated = []
        for x in g:
            pts[:, dim], pts[:, 1 - dim] = x, yy
            integrated.append(np.trapezoid(joint_pdf(m, (0, 1), pts), yy))
        assert np.abs(np.array(integrated) - one_d).max() <= 0.05
    pts = np.array([(a, b) for a in g for b in g])
    assert np.allclose(kde_pdf(m, pts), joint_pdf(m, (0, 1), pts), rtol=1e-10)


def test_kde_l1_error_decreases_with_n():
    grid = np.linspace(-0.35, 0.35, 1401)
    truth = beta_pdf(grid)
    errs = []
    for n in (100, 1000, 10 ** 4):
        e = [np.trapezoid(np.abs(marginal_pdf(kde_fit(beta_sample(n, seed=SeedSpec(s, 7))), 0, grid) - truth), grid)
             for s in range(20)]
        errs.append(np.mean(e))
    assert errs[0] > errs[1] > errs[2]
