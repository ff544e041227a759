import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cvinenma.stats_core import (BETA_CF_DISPERSION, DomainError, Margin, debye1, gauss_legendre,
                                 link_apply, link_inverse, margin_cdf, margin_pdf,
                                 margin_proportion, margin_quantile, sample_shifted_gamma)

unit = st.floats(1e-6, 1 - 1e-6)


@pytest.mark.parametrize("link", ["logit", "probit", "cloglog", "identity"])
@given(p=unit)
def test_link_round_trip(link, p):
    assert link_inverse(link, link_apply(link, p)) == pytest.approx(p, abs=1e-12)


def test_link_values():
    assert link_apply("logit", 0.5) == 0.0
    assert link_apply("probit", 0.975) == pytest.approx(1.959963984540054)
    assert link_inverse("cloglog", 0.0) == pytest.approx(1 - np.exp(-1))
    with pytest.raises(ValueError):
        link_apply("loglog", 0.3)


def test_link_rejects_boundary():
    with pytest.raises(DomainError):
        link_apply("logit", 1.0)


def test_beta_shapes_and_variance():
    m = Margin("beta", 0.8, 0.05, "identity")
    a, b = m.beta_shapes
    assert (a, b) == pytest.approx((0.8 * 19, 0.2 * 19))
    assert stats.beta(a, b).var() == pytest.approx(0.8 * 0.2 * 0.05)


def test_margin_validation():
    with pytest.raises(ValueError):
        Margin("beta", 0.5, 0.1, "logit")
    with pytest.raises(ValueError):
        Margin("normal", 0.5, 0.3, "identity")
    with pytest.raises(DomainError):
        Margin("beta", 0.5, 1.2, "identity")
    with pytest.raises(DomainError):
        Margin("normal", 0.0, 0.3)


@given(u=unit, pi=st.floats(0.05, 0.95), s=st.floats(0.05, 2.0))
def test_normal_quantile_cdf_inverse(u, pi, s):
    m = Margin("normal", pi, s, "logit")
    assert margin_cdf(m, margin_quantile(m, u)) == pytest.approx(u, abs=1e-10)


@pytest.mark.parametrize("pi", [0.1, 0.5, 0.8])
def test_beta_quantile_small_dispersion(pi):
    u = gauss_legendre(15).nodes
    # finite and ordered where betaincinv returns NaN
    p = margin_proportion(Margin("beta", pi, 1e-12, "identity"), u)
    assert np.all(np.isfinite(p)) and np.all(np.diff(p) > 0)
    # the expansion and betaincinv agree across the switch
    above = margin_proportion(Margin("beta", pi, BETA_CF_DISPERSION * (1 + 1e-9), "identity"), u)
    below = margin_proportion(Margin("beta", pi, BETA_CF_DISPERSION * (1 - 1e-9), "identity"), u)
    sd = np.sqrt(pi * (1 - pi) * BETA_CF_DISPERSION)
    assert np.max(np.abs(above - below)) < 1e-6 * sd


@settings(max_examples=50)
@given(x=st.floats(0.01, 0.99), pi=st.floats(0.05, 0.95), g=st.floats(0.01, 0.5))
def test_margin_pdf_matches_scipy(x, pi, g):
    m = Margin("beta", pi, g, "identity")
    assert margin_pdf(m, x) == pytest.approx(stats.beta.pdf(x, *m.beta_shapes), rel=1e-9)
    n = Margin("normal", pi, g, "logit")
    ref = stats.norm.pdf(x, n.mean_latent, g)
    assert margin_pdf(n, x) == pytest.approx(ref, rel=1e-9, abs=1e-300)


@settings(max_examples=50)
@given(u=st.floats(1e-4, 1 - 1e-4), pi=st.floats(0.05, 0.95), g=st.floats(0.01, 0.5))
def test_beta_quantile_cdf_inverse(u, pi, g):
    m = Margin("beta", pi, g, "identity")
    assert margin_cdf(m, margin_quantile(m, u)) == pytest.approx(u, abs=1e-8)


def test_margin_proportion_median_and_clamp():
    m = Margin("normal", 0.7, 0.4)
    assert margin_proportion(m, 0.5) == pytest.approx(0.7)
    m = Margin("beta", 0.5, 0.9, "identity")
    p = margin_proportion(m, np.array([1e-12, 1 - 1e-12]))
    assert np.all((p > 0) & (p < 1))


def test_gauss_legendre_exact_for_polynomials():
    rule = gauss_legendre(15)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all((rule.nodes > 0) & (rule.nodes < 1))
    for deg in range(0, 30):
        assert np.sum(rule.weights * rule.nodes**deg) == pytest.approx(1 / (deg + 1), rel=1e-12)
    with pytest.raises(ValueError):
        gauss_legendre(0)


def test_shifted_gamma_moments(rng):
    x = sample_shifted_gamma(1.2, 0.01, 30.0, rng, 200_000)
    assert x.min() >= 30.0
    assert x.mean() == pytest.approx(30 + 120, rel=0.01)


@given(t=st.floats(-60, 60))
def test_debye1_matches_quadrature(t):
    from scipy.integrate import quad
    if abs(t) < 1e-8:
        ref = 1.0
    else:
        ref = quad(lambda s: s / np.expm1(s) if s else 1.0, 0, t)[0] / t
    assert debye1(t) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_debye1_known_values():
    assert debye1(0.0) == 1.0
    assert debye1(1.0) == pytest.approx(0.777504634112248)
    # D1(-t) = D1(t) + t/2
    assert debye1(-3.0) == pytest.approx(debye1(3.0) + 1.5)


def test_two_point_rule():
    rule = gauss_legendre(2)
    assert np.sort(rule.nodes) == pytest.approx([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
    assert rule.weights == pytest.approx([0.5, 0.5])
    r5 = gauss_legendre(5)
    assert np.sum(r5.weights * r5.nodes**3) == pytest.approx(0.25, abs=1e-14)
    assert len(gauss_legendre(15).nodes) == 15


def test_link_closed_forms():
    assert link_apply("logit", 0.8) == pytest.approx(np.log(4), abs=1e-12)


def test_beta_median_by_bisection():
    from scipy.optimize import brentq
    from scipy.special import betainc
    ref = brentq(lambda x: betainc(7.6, 11.4, x) - 0.5, 1e-9, 1 - 1e-9, xtol=1e-14)
    m = Margin("beta", 0.4, 0.05, "identity")
    assert margin_quantile(m, 0.5) == pytest.approx(ref, abs=1e-10)
    assert margin_cdf(m, margin_quantile(m, 0.3)) == pytest.approx(0.3, abs=1e-10)


def test_uniform_and_standard_normal_special_cases():
    assert margin_cdf(Margin("beta", 0.5, 1 / 3, "identity"), 0.5) == pytest.approx(0.5)
    # logit link at pi = 0.5 puts the normal mean at 0
    m = Margin("normal", 0.5, 1.0)
    assert margin_quantile(m, 0.5) == pytest.approx(0.0, abs=1e-14)
    assert margin_cdf(m, 0.0) == pytest.approx(0.5)


def test_beta_round_trip_many(rng):
    m = Margin("beta", 0.3, 0.08, "identity")
    u = rng.uniform(1e-6, 1 - 1e-6, 1000)
    assert np.max(np.abs(margin_cdf(m, margin_quantile(m, u)) - u)) < 1e-9


def test_exponential_special_case(rng):
    x = sample_shifted_gamma(1.0, 0.02, 0.0, rng, 100_000)
    ks = stats.kstest(x, lambda t: 1 - np.exp(-0.02 * t)).statistic
    assert ks < 0.01
