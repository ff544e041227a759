"""Study records, parameters and the mixed-model log-likelihood.

Latent dimension 0 is the prevalence; dimensions 1..K are the sensitivities
of tests 1..K and K+1..2K their specificities (the vine pair order).

Subject-level outcomes are aggregated per study into sufficient statistics,
so each study integrand is a product of powers of the latent proportions.
Studies with a gold standard factorize across latent dimensions given the
root node and cost O(m N_q^2); pairwise no-gold studies need the full
five-dimensional sum, O(N_q^5).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from . import _kernels
from .copula import CopulaFamily
from .stats_core import EPS, Margin, QuadratureRule, gauss_legendre, margin_proportion
from .vine import DependentGrid, VineSpec, build_grid

DEFAULT_N_QUAD = 15
DEFAULT_LINK = {"normal": "logit", "beta": "identity"}


class InvalidStateError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# specification and parameters


@dataclass(frozen=True)
class ModelSpec:
    K: int
    copula: str = "bvn"
    margin: str = "normal"
    link: str | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        fam = CopulaFamily.from_name(self.copula)
        if fam.kind not in ("bvn", "frank", "clayton"):
            raise ValueError(f"{self.copula!r} cannot be fitted; use bvn, frank or a Clayton rotation")
        object.__setattr__(self, "copula", fam.name)
        if self.margin not in DEFAULT_LINK:
            raise ValueError(f"unknown margin {self.margin!r}")
        link = self.link or DEFAULT_LINK[self.margin]
        if (link == "identity") != (self.margin == "beta"):
            raise ValueError(f"margin {self.margin!r} cannot be combined with link {link!r}: "
                             "beta margins use the identity link, normal margins a "
                             "logit/probit/cloglog link")
        object.__setattr__(self, "link", link)

    @property
    def family(self) -> CopulaFamily:
        return CopulaFamily.from_name(self.copula)

    @property
    def dispersion_symbol(self) -> str:
        return "sigma" if self.margin == "normal" else "gamma"

    @property
    def name(self) -> str:
        return f"{self.copula}-{self.margin}" + (f"-{self.link}" if self.link not in
                                                  ("logit", "identity") else "")

    def parameter_names(self) -> list[str]:
        K, s = self.K, self.dispersion_symbol
        sub = [f"1{k}" for k in range(1, K + 1)] + [f"0{k}" for k in range(1, K + 1)]
        return (["pi"] + [f"pi{x}" for x in sub] + [s] + [f"{s}{x}" for x in sub]
                + [f"tau{x}" for x in sub])

    def to_dict(self) -> dict:
        return {"K": self.K, "copula": self.copula, "margin": self.margin, "link": self.link}


@dataclass(frozen=True)
class ParameterSet:
    """Natural-scale parameters.

    ``pi1``/``pi0``: sensitivities/specificities; ``delta*``: sigma (normal
    margins) or gamma (beta margins); ``tau1``/``tau0``: Kendall's taus of the
    root pairs. ``boundary`` holds one flag per pair (+1 comonotonic, -1
    countermonotonic, 0 free).
    """

    pi: float
    pi1: tuple[float, ...]
    pi0: tuple[float, ...]
    delta: float
    delta1: tuple[float, ...]
    delta0: tuple[float, ...]
    tau1: tuple[float, ...]
    tau0: tuple[float, ...]
    boundary: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("pi1", "pi0", "delta1", "delta0", "tau1", "tau0", "boundary"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        K = len(self.pi1)
        if not self.boundary:
            object.__setattr__(self, "boundary", (0,) * (2 * K))
        lens = {len(self.pi0), len(self.delta1), len(self.delta0), len(self.tau1),
                len(self.tau0)}
        if lens != {K} or len(self.boundary) != 2 * K:
            raise ValueError("inconsistent number of tests across parameter blocks")
        for p in (self.pi,) + self.pi1 + self.pi0:
            if not 0.0 < p < 1.0:
                raise ValueError(f"proportions must lie in (0, 1), got {p}")

    @property
    def K(self) -> int:
        return len(self.pi1)

    @property
    def taus(self) -> tuple[float, ...]:
        return self.tau1 + self.tau0

    def margins(self, spec: ModelSpec) -> list[Margin]:
        pis = (self.pi,) + self.pi1 + self.pi0
        ds = (self.delta,) + self.delta1 + self.delta0
        return [Margin(spec.margin, p, d, spec.link) for p, d in zip(pis, ds)]

    def vine(self, spec: ModelSpec) -> VineSpec:
        return VineSpec.from_taus(spec.family, self.taus, self.boundary)

    def as_vector(self) -> np.ndarray:
        return np.array((self.pi,) + self.pi1 + self.pi0 + (self.delta,) + self.delta1
                        + self.delta0 + self.tau1 + self.tau0, dtype=float)

    @classmethod
    def from_vector(cls, x, K: int, boundary=()) -> "ParameterSet":
        x = [float(v) for v in x]
        if len(x) != 6 * K + 2:
            raise ValueError(f"expected {6 * K + 2} values for K={K}, got {len(x)}")
        return cls(x[0], x[1:1 + K], x[1 + K:1 + 2 * K], x[1 + 2 * K],
                   x[2 + 2 * K:2 + 3 * K], x[2 + 3 * K:2 + 4 * K], x[2 + 4 * K:2 + 5 * K],
                   x[2 + 5 * K:], boundary)

    @classmethod
    def uniform(cls, K, pi, pi1, pi0, delta, tau) -> "ParameterSet":
        """Convenience constructor with one shared dispersion and tau."""
        return cls(pi, tuple(pi1), tuple(pi0), delta, (delta,) * K, (delta,) * K,
                   (tau,) * K, (tau,) * K)

    def to_dict(self) -> dict:
        return {"pi": self.pi, "pi1": list(self.pi1), "pi0": list(self.pi0),
                "delta": self.delta, "delta1": list(self.delta1), "delta0": list(self.delta0),
                "tau1": list(self.tau1), "tau0": list(self.tau0),
                "boundary": list(self.boundary)}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterSet":
        return cls(d["pi"], d["pi1"], d["pi0"], d["delta"], d["delta1"], d["delta0"],
                   d["tau1"], d["tau0"], d.get("boundary", ()))


# ---------------------------------------------------------------------------
# studies


@dataclass(frozen=True)
class StudyRecord:
    """Aggregated counts of one study.

    Gold-standard designs store, for each present test k (``tests[i]``), the
    2x2 counts ``tp[i], fn[i], fp[i], tn[i]`` against the reference. A no-gold
    study holds the cross-table ``cross = (m11, m10, m01, m00)`` of the two
    candidate tests ``tests = (k1, k2)``, where m10 counts T_k1 positive and
    T_k2 negative.
    """

    id: str
    tests: tuple[int, ...]
    gold: bool = True
    n_diseased: int = 0
    n_nondiseased: int = 0
    tp: tuple[int, ...] = ()
    fn: tuple[int, ...] = ()
    fp: tuple[int, ...] = ()
    tn: tuple[int, ...] = ()
    cross: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        for name in ("tests", "tp", "fn", "fp", "tn"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.cross is not None:
            object.__setattr__(self, "cross", tuple(int(v) for v in self.cross))
        self.validate()

    @classmethod
    def gold_standard(cls, id, n_diseased, n_nondiseased, counts: dict) -> "StudyRecord":
        """``counts`` maps test index -> (tp, fn, fp, tn)."""
        tests = tuple(sorted(counts))
        tp, fn, fp, tn = zip(*(counts[k] for k in tests)) if tests else ((), (), (), ())
        return cls(str(id), tests, True, n_diseased, n_nondiseased, tp, fn, fp, tn)

    @classmethod
    def no_gold(cls, id, tests, m11, m10, m01, m00) -> "StudyRecord":
        return cls(str(id), tuple(tests), False, cross=(m11, m10, m01, m00))

    def validate(self):
        if len(set(self.tests)) != len(self.tests) or any(k < 1 for k in self.tests):
            raise ValueError(f"study {self.id}: test indices must be distinct and >= 1")
        if self.gold:
            if self.cross is not None:
                raise ValueError(f"study {self.id}: a gold-standard study has no cross-table")
            n = len(self.tests)
            if not all(len(c) == n for c in (self.tp, self.fn, self.fp, self.tn)):
                raise ValueError(f"study {self.id}: one 2x2 table per test is required")
            vals = (self.n_diseased, self.n_nondiseased) + self.tp + self.fn + self.fp + self.tn
            if min(vals, default=0) < 0:
                raise ValueError(f"study {self.id}: counts must be non-negative")
            for k, a, b, c, d in zip(self.tests, self.tp, self.fn, self.fp, self.tn):
                if a + b != self.n_diseased:
                    raise ValueError(f"study {self.id}, test {k}: tp + fn = {a + b} "
                                     f"but n_diseased = {self.n_diseased}")
                if c + d != self.n_nondiseased:
                    raise ValueError(f"study {self.id}, test {k}: fp + tn = {c + d} "
                                     f"but n_nondiseased = {self.n_nondiseased}")
        else:
            if len(self.tests) != 2:
                raise ValueError(f"study {self.id}: a study without gold standard must "
                                 "compare exactly two candidate tests")
            if self.cross is None or len(self.cross) != 4 or min(self.cross) < 0:
                raise ValueError(f"study {self.id}: need four non-negative cross-table counts")

    @property
    def design(self) -> str:
        if not self.gold:
            return "no_gold_pair"
        return "gold_one_test" if len(self.tests) == 1 else "gold_multi_test"

    @property
    def size(self) -> int:
        return sum(self.cross) if not self.gold else self.n_diseased + self.n_nondiseased

    def to_dict(self) -> dict:
        d = {"id": self.id, "design": self.design, "tests": list(self.tests)}
        if self.gold:
            d["n_diseased"] = self.n_diseased
            d["n_nondiseased"] = self.n_nondiseased
            d["counts"] = {str(k): {"tp": a, "fn": b, "fp": c, "tn": e}
                           for k, a, b, c, e in zip(self.tests, self.tp, self.fn, self.fp,
                                                    self.tn)}
        else:
            d.update(zip(("m11", "m10", "m01", "m00"), self.cross))
        return d


def dataset_digest(studies) -> str:
    blob = json.dumps([s.to_dict() for s in studies], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# within-study probabilities


@dataclass(frozen=True)
class LatentPoint:
    prev: float
    se: tuple[float, ...]
    sp: tuple[float, ...]


def _clamped(x):
    return np.clip(np.asarray(x, dtype=float), EPS, 1.0 - EPS)


def log_within_diseased(n_diseased, tp, fn, point: LatentPoint, tests=None) -> float:
    tests = tests or range(1, len(tp) + 1)
    se = _clamped([point.se[k - 1] for k in tests])
    prev = _clamped(point.prev)
    return float(xlogy(n_diseased, prev) + np.sum(xlogy(tp, se) + xlogy(fn, 1.0 - se)))


def log_within_nondiseased(n_nondiseased, tn, fp, point: LatentPoint, tests=None) -> float:
    tests = tests or range(1, len(tn) + 1)
    sp = _clamped([point.sp[k - 1] for k in tests])
    prev = _clamped(point.prev)
    return float(xlogy(n_nondiseased, 1.0 - prev) + np.sum(xlogy(tn, sp) + xlogy(fp, 1.0 - sp)))


def within_diseased(n_diseased, tp, fn, point, tests=None) -> float:
    """prev^n1 * prod_k se_k^tp_k (1 - se_k)^fn_k."""
    return float(np.exp(log_within_diseased(n_diseased, tp, fn, point, tests)))


def within_nondiseased(n_nondiseased, tn, fp, point, tests=None) -> float:
    """(1 - prev)^n0 * prod_k sp_k^tn_k (1 - sp_k)^fp_k."""
    return float(np.exp(log_within_nondiseased(n_nondiseased, tn, fp, point, tests)))


def pattern_probabilities(point: LatentPoint, tests=(1, 2)) -> np.ndarray:
    """Probabilities of the outcome patterns (11, 10, 01, 00) of two tests
    when disease status is unobserved."""
    k1, k2 = tests
    pr = float(_clamped(point.prev))
    s1, s2 = _clamped([point.se[k1 - 1], point.se[k2 - 1]])
    c1, c2 = _clamped([point.sp[k1 - 1], point.sp[k2 - 1]])
    return np.array([
        pr * s1 * s2 + (1 - pr) * (1 - c1) * (1 - c2),
        pr * s1 * (1 - s2) + (1 - pr) * (1 - c1) * c2,
        pr * (1 - s1) * s2 + (1 - pr) * c1 * (1 - c2),
        pr * (1 - s1) * (1 - s2) + (1 - pr) * c1 * c2,
    ])


def within_no_gold(m11, m10, m01, m00, point: LatentPoint, tests=(1, 2)) -> float:
    p = pattern_probabilities(point, tests)
    return float(np.exp(np.sum(xlogy([m11, m10, m01, m00], p))))


# ---------------------------------------------------------------------------
# latent tables over the dependent grid


@dataclass
class LatentTables:
    """Latent proportions at the grid nodes.

    ``P[D, q, :m_eff[D]]`` holds dimension D's proportions given root node q;
    ``lw[D]`` are the matching log-weights. Pairs frozen at a Frechet bound
    collapse to a single node of weight one.
    """

    lw0: np.ndarray
    p0: np.ndarray
    P: np.ndarray
    lw: np.ndarray
    m_eff: np.ndarray


def dimension_table(margin: Margin, pair, grid_nodes, root, n_quad) -> np.ndarray:
    """Proportions for one latent dimension; (n_quad, n_quad), or (n_quad, 1) if frozen."""
    if pair.family.kind == "comonotonic":
        return margin_proportion(margin, root)[:, None]
    if pair.family.kind == "countermonotonic":
        return margin_proportion(margin, 1.0 - root)[:, None]
    return margin_proportion(margin, grid_nodes)


def latent_tables(params: ParameterSet, spec: ModelSpec, grid: DependentGrid) -> LatentTables:
    K = spec.K
    nq = grid.n_quad
    margins = params.margins(spec)
    vine = params.vine(spec)
    lw_full = np.log(grid.weights)
    P = np.full((2 * K, nq, nq), 0.5)
    lw = np.zeros((2 * K, nq))
    m_eff = np.empty(2 * K, dtype=np.int64)
    for i, pair in enumerate(vine.pairs):
        t = dimension_table(margins[i + 1], pair, grid.nodes[i], grid.root, nq)
        P[i, :, :t.shape[1]] = t
        m_eff[i] = t.shape[1]
        if t.shape[1] == nq:
            lw[i] = lw_full
    p0 = margin_proportion(margins[0], grid.root)
    return LatentTables(lw_full, p0, P, lw, m_eff)


# ---------------------------------------------------------------------------
# compiled study data


class CompiledStudies:
    """Count arrays in the layout the compiled kernels consume."""

    def __init__(self, studies, K: int):
        studies = list(studies)
        for s in studies:
            if max(s.tests, default=0) > K:
                raise ValueError(f"study {s.id} references test {max(s.tests)} but K={K}")
        self.studies = studies
        self.K = K
        self.gold_idx = np.array([i for i, s in enumerate(studies) if s.gold], dtype=np.int64)
        self.nogold_idx = np.array([i for i, s in enumerate(studies) if not s.gold],
                                   dtype=np.int64)
        gold = [studies[i] for i in self.gold_idx]
        self.n1 = np.array([s.n_diseased for s in gold], dtype=float)
        self.n0 = np.array([s.n_nondiseased for s in gold], dtype=float)
        off, dim, fa, fb = [0], [], [], []
        for s in gold:
            for k, tp, fn, fp, tn in zip(s.tests, s.tp, s.fn, s.fp, s.tn):
                # sensitivity dim k-1: se^tp (1-se)^fn; specificity dim K+k-1: sp^tn (1-sp)^fp
                for d, a, b in ((k - 1, tp, fn), (K + k - 1, tn, fp)):
                    if a or b:
                        dim.append(d)
                        fa.append(a)
                        fb.append(b)
            off.append(len(dim))
        self.f_off = np.array(off, dtype=np.int64)
        self.f_dim = np.array(dim, dtype=np.int64)
        self.f_a = np.array(fa, dtype=float)
        self.f_b = np.array(fb, dtype=float)
        nog = [studies[i] for i in self.nogold_idx]
        self.dims = np.array([[k1 - 1, K + k1 - 1, k2 - 1, K + k2 - 1]
                              for k1, k2 in (s.tests for s in nog)], dtype=np.int64).reshape(-1, 4)
        self.counts = np.array([s.cross for s in nog], dtype=float).reshape(-1, 4)

    def __len__(self):
        return len(self.studies)

    def study_logliks(self, tables: LatentTables, want_grad=False):
        """Per-study log-likelihoods (input order), plus d/dp0 and d/dP if requested."""
        t = tables
        G0 = np.zeros_like(t.p0)
        G = np.zeros_like(t.P)
        out = np.empty(len(self.studies))
        if len(self.gold_idx):
            out[self.gold_idx] = _kernels.gold_loglik(
                t.lw0, t.p0, t.P, t.lw, t.m_eff, self.n1, self.n0, self.f_off, self.f_dim,
                self.f_a, self.f_b, want_grad, G0, G)
        if len(self.nogold_idx):
            out[self.nogold_idx] = _kernels.nogold_loglik(
                t.lw0, t.p0, t.P, t.lw, t.m_eff, self.dims, self.counts, want_grad, G0, G)
        return (out, G0, G) if want_grad else out


class LikelihoodEvaluator:
    """Joint log-likelihood of a fixed set of studies under one model spec."""

    def __init__(self, studies, spec: ModelSpec, n_quad: int = DEFAULT_N_QUAD):
        studies = list(studies)
        if not studies:
            raise ValueError("at least one study is required")
        self.spec = spec
        self.rule = gauss_legendre(n_quad)
        self.compiled = CompiledStudies(studies, spec.K)
        self.n_evaluations = 0

    @property
    def studies(self):
        return self.compiled.studies

    def tables(self, params: ParameterSet) -> LatentTables:
        grid = build_grid(params.vine(self.spec), self.rule)
        return latent_tables(params, self.spec, grid)

    def study_logliks(self, params: ParameterSet) -> np.ndarray:
        self.n_evaluations += 1
        return self.compiled.study_logliks(self.tables(params))

    def loglik(self, params: ParameterSet) -> float:
        # ordered reduction keeps the result bit-stable
        return float(np.sum(self.study_logliks(params)))


def _check_grid(grid: DependentGrid, params: ParameterSet, spec: ModelSpec):
    vine = params.vine(spec)
    if len(grid.nodes) != 2 * spec.K:
        raise InvalidStateError(f"grid has {len(grid.nodes)} pairs, model needs {2 * spec.K}")
    if grid.vine is not None and grid.vine != vine:
        raise InvalidStateError("grid was built for different dependence parameters")


def study_loglik(study: StudyRecord, params: ParameterSet, spec: ModelSpec,
                 grid: DependentGrid | None = None, rule: QuadratureRule | None = None) -> float:
    if grid is None:
        grid = build_grid(params.vine(spec), rule or gauss_legendre(DEFAULT_N_QUAD))
    _check_grid(grid, params, spec)
    tables = latent_tables(params, spec, grid)
    return float(CompiledStudies([study], spec.K).study_logliks(tables)[0])


def joint_loglik(studies, params: ParameterSet, spec: ModelSpec,
                 n_quad: int = DEFAULT_N_QUAD) -> float:
    studies = list(studies)
    if not studies:
        raise ValueError("joint_loglik needs at least one study")
    return LikelihoodEvaluator(studies, spec, n_quad).loglik(params)
