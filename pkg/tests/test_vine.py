import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cvinenma.copula import CopulaFamily
from cvinenma.stats_core import gauss_legendre
from cvinenma.vine import (UnsupportedFamilyError, VineSpec, build_grid, implied_bvn_correlation,
                           sample_vine)


def bvn_spec(thetas):
    taus = 2 / np.pi * np.arcsin(np.asarray(thetas, float))
    return VineSpec.from_taus(CopulaFamily("bvn"), taus)


def test_independence_grid():
    rule = gauss_legendre(7)
    spec = VineSpec.from_taus(CopulaFamily("independence"), [0.0] * 4)
    grid = build_grid(spec, rule)
    for nodes in grid.nodes:
        assert np.allclose(nodes, rule.nodes[None, :])


def test_comonotonic_pair_collapses_to_root():
    rule = gauss_legendre(7)
    spec = VineSpec.from_taus(CopulaFamily.from_name("clayton180"), [0.3, 0.95, 0.3, 0.3],
                              boundary=[0, 1, 0, 0])
    grid = build_grid(spec, rule)
    assert np.allclose(grid.nodes[1], rule.nodes[:, None])


def test_bvn_grid_closed_form():
    rule = gauss_legendre(9)
    grid = build_grid(bvn_spec([0.5, 0.5, 0.5, 0.5]), rule)
    u = rule.nodes
    ref = stats.norm.cdf(0.5 * stats.norm.ppf(u)[:, None] + np.sqrt(0.75) * stats.norm.ppf(u)[None, :])
    assert np.allclose(grid.nodes[0], ref, atol=1e-12)


@pytest.mark.parametrize("family,tau", [("clayton180", 0.3), ("frank", -0.4), ("clayton270", -0.5)])
def test_sampled_pair_taus(family, tau, rng):
    spec = VineSpec.from_taus(CopulaFamily.from_name(family), [tau] * 4)
    x = sample_vine(spec, 100_000, rng)
    assert x.shape == (100_000, 5)
    for j in range(1, 5):
        assert stats.kendalltau(x[:, 0], x[:, j])[0] == pytest.approx(tau, abs=0.02)


def test_independence_vine_samples(rng):
    x = sample_vine(VineSpec.from_taus(CopulaFamily("independence"), [0.0] * 4), 100_000, rng)
    t = stats.kendalltau(x[:, 1], x[:, 3])[0]
    assert abs(t) < 0.01


def test_bvn_normal_scores_correlation(rng):
    x = sample_vine(bvn_spec([0.5] * 4), 1_000_000, rng)
    z = stats.norm.ppf(x)
    assert np.corrcoef(z[:, 1], z[:, 2])[0, 1] == pytest.approx(0.25, abs=0.01)


def test_implied_correlation_values():
    assert np.allclose(implied_bvn_correlation(bvn_spec([0.0] * 4)), np.eye(5))
    r = implied_bvn_correlation(bvn_spec([0.6, 0.4]))
    assert r[1, 2] == pytest.approx(0.24)
    assert r[0, 1] == pytest.approx(0.6)


@settings(max_examples=50)
@given(st.lists(st.floats(-0.99, 0.99), min_size=4, max_size=4))
def test_implied_correlation_psd(thetas):
    r = implied_bvn_correlation(bvn_spec(thetas))
    assert np.linalg.eigvalsh(r).min() > -1e-12


def test_implied_correlation_rejects_other_families():
    with pytest.raises(UnsupportedFamilyError):
        implied_bvn_correlation(VineSpec.from_taus(CopulaFamily("frank"), [0.3] * 4))
