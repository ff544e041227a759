import numpy as np
import pytest

from cvinenma.copula import CopulaFamily, CopulaPair, hinv, tau_to_theta
from cvinenma.model import ModelSpec, ParameterSet, StudyRecord, study_loglik
from cvinenma.oracle import (DESIGNS, mc_study_likelihood, naive_grid_likelihood,
                             oracle_conditional_inverse, oracle_theta, random_instance,
                             random_study, run_verification, separable_grid_likelihood)
from cvinenma.stats_core import gauss_legendre

FAMILIES = ["bvn", "frank", "clayton", "clayton90", "clayton180", "clayton270"]


@pytest.mark.parametrize("fam,tau", [("bvn", 0.4), ("frank", -0.3), ("clayton", 0.5),
                                     ("clayton270", -0.2)])
def test_oracle_theta_agrees(fam, tau):
    assert oracle_theta(fam, tau) == pytest.approx(tau_to_theta(fam, tau), rel=1e-8)


@pytest.mark.parametrize("fam", FAMILIES)
def test_oracle_inverse_agrees_with_production(fam, rng):
    tau = -0.4 if fam in ("clayton90", "clayton270") else 0.4
    th = tau_to_theta(fam, tau)
    p, u = rng.random(200), rng.random(200)
    ref = oracle_conditional_inverse(fam, 0, p, u, th)
    assert np.allclose(hinv(CopulaPair(CopulaFamily.from_name(fam), th), p, u), ref, atol=1e-9)


def test_naive_equals_separable_under_independence():
    spec = ModelSpec(2, "bvn", "normal")
    p = ParameterSet.uniform(2, 0.4, (0.8, 0.6), (0.9, 0.7), 0.4, 0.0)
    st_ = StudyRecord.gold_standard("g", 20, 30, {1: (16, 4, 3, 27), 2: (12, 8, 9, 21)})
    rule = gauss_legendre(9)
    assert naive_grid_likelihood(st_, p, spec, rule) == pytest.approx(
        separable_grid_likelihood(st_, p, spec, rule), rel=1e-12)


@pytest.mark.parametrize("design", DESIGNS)
def test_comonotonic_pair_matches_collapsed_path(design, rng):
    spec, p = random_instance(rng, 2, "clayton180", "beta")
    from dataclasses import replace
    p = replace(p, boundary=(1, 0, 0, -1))
    st_ = random_study(rng, design, spec, p, (10, 40))
    rule = gauss_legendre(11)
    assert study_loglik(st_, p, spec, rule=rule) == pytest.approx(
        naive_grid_likelihood(st_, p, spec, rule, log=True), abs=1e-12)


def test_independence_mc_matches_binomial_product(rng):
    spec = ModelSpec(2, "bvn", "beta")
    p = ParameterSet.uniform(2, 0.4, (0.8, 0.6), (0.9, 0.7), 1e-6, 0.0)
    st_ = StudyRecord.gold_standard("g", 3, 4, {1: (2, 1, 1, 3)})
    val, se = mc_study_likelihood(st_, p, spec, 10_000, rng)
    exact = 0.4**3 * 0.6**4 * 0.8**2 * 0.2 * 0.9**3 * 0.1
    assert abs(val - exact) <= 3 * se + 1e-6 * exact


def test_mc_se_shrinks_with_draws(rng):
    spec, p = random_instance(rng, 2, "frank", "normal")
    st_ = random_study(rng, "gold_multi_test", spec, p, (10, 20))
    _, se1 = mc_study_likelihood(st_, p, spec, 100_000, np.random.default_rng(1))
    v2, se2 = mc_study_likelihood(st_, p, spec, 200_000, np.random.default_rng(2))
    assert se2 / se1 == pytest.approx(1 / np.sqrt(2), rel=0.1)
    with pytest.raises(ValueError):
        mc_study_likelihood(st_, p, spec, 10, rng)


def test_naive_refuses_large_k():
    spec = ModelSpec(3, "bvn", "normal")
    p = ParameterSet.uniform(3, 0.4, (0.8,) * 3, (0.9,) * 3, 0.3, 0.3)
    st_ = StudyRecord.gold_standard("g", 2, 2, {1: (1, 1, 1, 1)})
    with pytest.raises(ValueError):
        naive_grid_likelihood(st_, p, spec)


def test_verify_passes_and_catches_fault(monkeypatch):
    reports = run_verification(n_draws=20_000, seed=3, n_instances=1)
    assert all(r.passed for r in reports), [r.line() for r in reports if not r.passed]
    monkeypatch.setenv("CVINENMA_FAULT", "clayton")
    reports = run_verification(n_draws=20_000, seed=3, n_instances=1)
    assert not all(r.passed for r in reports)
