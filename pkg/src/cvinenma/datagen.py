"""Simulated meta-analysis datasets under four study designs.

Block layout for K = 2: the first ``n1`` studies report test 1 against the
reference, the next ``n2`` test 2 against the reference, then ``n3`` studies
cross-classify tests 1 and 2 without a reference, and the last ``n4``
studies report both tests against the reference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LatentPoint, ModelSpec, ParameterSet, StudyRecord, pattern_probabilities
from .stats_core import margin_proportion, sample_shifted_gamma
from .vine import sample_vine


@dataclass(frozen=True)
class SimDesignPlan:
    truth: ParameterSet
    spec: ModelSpec
    n1: int = 10
    n2: int = 10
    n3: int = 10
    n4: int = 10
    size_shape: float = 1.2
    size_rate: float = 0.01
    size_shift: float = 30.0
    seed: int = 0

    def __post_init__(self):
        blocks = (self.n1, self.n2, self.n3, self.n4)
        if min(blocks) < 0:
            raise ValueError("block sizes must be non-negative")
        if sum(blocks) < 1:
            raise ValueError("the plan must contain at least one study")
        if self.truth.K != self.spec.K:
            raise ValueError(f"truth has K={self.truth.K}, model has K={self.spec.K}")
        if self.n3 and self.spec.K != 2:
            raise ValueError("studies without a reference standard need exactly K=2 tests")
        if self.n2 and self.spec.K < 2:
            raise ValueError("a test-2-only block needs K >= 2")
        if not (self.size_shape > 0 and self.size_rate > 0):
            raise ValueError("study-size shape and rate must be positive")
        # surface invalid truth (e.g. a tau outside the family range) now
        self.truth.margins(self.spec)
        self.truth.vine(self.spec)

    @property
    def n_studies(self) -> int:
        return self.n1 + self.n2 + self.n3 + self.n4

    def to_dict(self) -> dict:
        return {"n1": self.n1, "n2": self.n2, "n3": self.n3, "n4": self.n4,
                "size_shape": self.size_shape, "size_rate": self.size_rate,
                "size_shift": self.size_shift, "seed": self.seed,
                "model": self.spec.to_dict(), "truth": self.truth.to_dict()}


def reference_truth(margin: str = "normal", K: int = 2) -> ParameterSet:
    """Reference truth: prevalence 0.4, Se (0.8, 0.6), Sp (0.9, 0.7), every tau 0.3."""
    if K != 2:
        raise ValueError("the reference truth is defined for two tests")
    delta = 0.3 if margin == "normal" else 0.05
    return ParameterSet.uniform(2, 0.4, (0.8, 0.6), (0.9, 0.7), delta, 0.3)


def cell_probabilities(point: LatentPoint, tests=(1, 2)) -> np.ndarray:
    """(p11, p10, p01, p00) of two tests with disease status unobserved; p00 is the complement."""
    p = pattern_probabilities(point, tests)
    p[3] = 1.0 - p[0] - p[1] - p[2]
    return p


def latent_points(plan: SimDesignPlan, n: int, rng) -> list[LatentPoint]:
    K = plan.spec.K
    u = sample_vine(plan.truth.vine(plan.spec), n, rng)
    x = np.column_stack([margin_proportion(m, u[:, i])
                         for i, m in enumerate(plan.truth.margins(plan.spec))])
    return [LatentPoint(float(r[0]), tuple(r[1:1 + K]), tuple(r[1 + K:])) for r in x]


def _gold_study(sid, n, point, tests, rng) -> StudyRecord:
    nd = int(rng.binomial(n, point.prev))
    nn = n - nd
    counts = {}
    for k in tests:
        tp = int(rng.binomial(nd, point.se[k - 1]))
        tn = int(rng.binomial(nn, point.sp[k - 1]))
        counts[k] = (tp, nd - tp, nn - tn, tn)
    return StudyRecord.gold_standard(sid, nd, nn, counts)


def generate_dataset(plan: SimDesignPlan, rng=None) -> list[StudyRecord]:
    rng = np.random.default_rng(plan.seed) if rng is None else rng
    K = plan.spec.K
    layout = ([("gold", (1,))] * plan.n1 + [("gold", (2,))] * plan.n2
              + [("nogold", (1, 2))] * plan.n3 + [("gold", tuple(range(1, K + 1)))] * plan.n4)
    width = max(3, len(str(len(layout))))
    studies = []
    for i, (kind, tests) in enumerate(layout, 1):
        point = latent_points(plan, 1, rng)[0]
        size = sample_shifted_gamma(plan.size_shape, plan.size_rate, plan.size_shift, rng)
        n = max(1, int(np.rint(size)))
        sid = f"s{i:0{width}d}"
        if kind == "gold":
            studies.append(_gold_study(sid, n, point, tests, rng))
        else:
            m = rng.multinomial(n, cell_probabilities(point, tests))
            studies.append(StudyRecord.no_gold(sid, tests, *(int(v) for v in m)))
    return studies
