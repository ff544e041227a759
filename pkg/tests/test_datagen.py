import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvinenma.datagen import (SimDesignPlan, cell_probabilities, generate_dataset, latent_points,
                              reference_truth)
from cvinenma.model import LatentPoint, ModelSpec, ParameterSet
from cvinenma.stats_core import link_inverse


def plan(**kw):
    args = dict(truth=reference_truth("normal"), spec=ModelSpec(2, "clayton180", "normal")) | kw
    return SimDesignPlan(**args)


def test_cell_probabilities_hand_value():
    p = cell_probabilities(LatentPoint(0.4, (0.8, 0.6), (0.9, 0.7)))
    assert p[0] == pytest.approx(0.4 * 0.8 * 0.6 + 0.6 * 0.1 * 0.3)
    assert p.sum() == 1.0


@given(st.tuples(*[st.floats(0.0, 1.0)] * 5))
def test_cells_sum_to_one(x):
    p = cell_probabilities(LatentPoint(x[0], x[1:3], x[3:]))
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
    assert p.min() > -1e-15


def test_block_layout():
    data = generate_dataset(plan(n1=2, n2=3, n3=4, n4=5, seed=1))
    designs = [(s.design, s.tests) for s in data]
    assert designs == ([("gold_one_test", (1,))] * 2 + [("gold_one_test", (2,))] * 3
                       + [("no_gold_pair", (1, 2))] * 4 + [("gold_multi_test", (1, 2))] * 5)
    assert len({s.id for s in data}) == 14
    assert all(s.size >= 30 for s in data)


def test_same_seed_same_data():
    assert generate_dataset(plan(seed=4)) == generate_dataset(plan(seed=4))
    assert generate_dataset(plan(seed=4)) != generate_dataset(plan(seed=5))


def test_plan_validation():
    three = ParameterSet.uniform(3, 0.4, (0.8,) * 3, (0.9,) * 3, 0.3, 0.3)
    with pytest.raises(ValueError):
        SimDesignPlan(three, ModelSpec(3, "bvn", "normal"), 1, 1, 1, 1)
    SimDesignPlan(three, ModelSpec(3, "bvn", "normal"), 1, 1, 0, 1)
    with pytest.raises(ValueError):
        plan(n1=0, n2=0, n3=0, n4=0)
    with pytest.raises(ValueError):
        plan(truth=ParameterSet.uniform(2, 0.4, (0.8, 0.6), (0.9, 0.7), 0.3, -0.3))
    with pytest.raises(ValueError):
        reference_truth("normal", K=3)


def test_pooled_sensitivity_matches_marginal_mean(rng):
    from scipy.integrate import quad
    from scipy import stats
    p = plan()
    pts = latent_points(p, 10_000, rng)
    se1 = np.mean([q.se[0] for q in pts])
    mu = np.log(0.8 / 0.2)
    ref = quad(lambda z: link_inverse("logit", mu + 0.3 * z) * stats.norm.pdf(z), -10, 10)[0]
    assert se1 == pytest.approx(ref, abs=0.01)


def test_beta_truth_means(rng):
    p = plan(truth=reference_truth("beta"), spec=ModelSpec(2, "clayton180", "beta"))
    pts = latent_points(p, 20_000, rng)
    assert np.mean([q.sp[1] for q in pts]) == pytest.approx(0.7, abs=0.01)
