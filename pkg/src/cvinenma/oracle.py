"""Brute-force validators for the quadrature likelihood.

Nothing here calls the production copula, vine or likelihood code: the
conditional inverses, the tau -> theta maps and the study integrand are
re-derived below, and only the margin/link primitives of ``stats_core`` are
shared. ``run_verification`` compares them with the production evaluator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from .stats_core import Margin, QuadratureRule, gauss_legendre, margin_proportion

MAX_NAIVE_K = 2


@dataclass(frozen=True)
class OracleReport:
    name: str
    oracle: float
    main: float
    mc_se: float | None
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        se = f" mc_se={self.mc_se:.3g}" if self.mc_se is not None else ""
        return (f"[{status}] {self.name}: main={self.main:.10g} oracle={self.oracle:.10g}"
                f"{se} tol={self.tolerance:.3g} {self.detail}".rstrip())

    def to_dict(self):
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# independent copula pieces


def _frank_tau(theta):
    a = abs(theta)
    d1 = integrate.quad(lambda s: s / np.expm1(s) if s > 0 else 1.0, 0.0, a,
                        epsabs=1e-14, epsrel=1e-13)[0] / a
    return np.sign(theta) * (1.0 - 4.0 / a * (1.0 - d1))


def oracle_theta(family: str, tau: float) -> float:
    """theta from Kendall's tau for bvn, frank and the Clayton rotations."""
    if family == "bvn":
        return np.sin(0.5 * np.pi * tau)
    if family.startswith("clayton"):
        a = abs(tau)
        return 2.0 * a / (1.0 - a)
    if family == "frank":
        t = optimize.brentq(lambda th: _frank_tau(th) - abs(tau), 1e-8, 300.0, xtol=1e-14)
        return np.copysign(t, tau)
    raise ValueError(f"no oracle for family {family!r}")


def _base_inverse(kind, p, u, th):
    if kind == "bvn":
        # Gaussian construction: Z = th Z0 + sqrt(1 - th^2) E
        z = th * special.ndtri(u) + np.sqrt(1.0 - th * th) * special.ndtri(p)
        return special.ndtr(z)
    if kind == "clayton":
        return ((p ** (-th / (1.0 + th)) - 1.0) * u ** (-th) + 1.0) ** (-1.0 / th)
    if kind == "frank":
        y = p * np.expm1(-th) / (p + (1.0 - p) * np.exp(-th * u))
        return -np.log1p(y) / th
    raise ValueError(kind)


def oracle_conditional_inverse(family: str, boundary: int, p, u, th):
    """v with C(v | u) = p; boundary +1/-1 gives the Frechet bounds."""
    p = np.clip(p, 1e-12, 1 - 1e-12)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    if boundary > 0:
        return u + 0.0 * p
    if boundary < 0:
        return 1.0 - u + 0.0 * p
    if family.startswith("clayton"):
        rot = int(family[7:] or 0)
        if rot == 0:
            return _base_inverse("clayton", p, u, th)
        if rot == 180:
            return 1.0 - _base_inverse("clayton", 1.0 - p, 1.0 - u, th)
        if rot == 90:
            return _base_inverse("clayton", p, 1.0 - u, th)
        return 1.0 - _base_inverse("clayton", 1.0 - p, u, th)
    return _base_inverse(family, p, u, th)


# ---------------------------------------------------------------------------
# integrand


def _margins(params, spec):
    pis = (params.pi,) + tuple(params.pi1) + tuple(params.pi0)
    ds = (params.delta,) + tuple(params.delta1) + tuple(params.delta0)
    return [Margin(spec.margin, p, d, spec.link) for p, d in zip(pis, ds)]


def _thetas(params, spec):
    return [0.0 if b else oracle_theta(spec.copula, t)
            for t, b in zip(tuple(params.tau1) + tuple(params.tau0), params.boundary)]


def log_integrand(study, K, x):
    """Log study integrand at latent proportions ``x`` (..., 2K+1)."""
    x = np.clip(x, 1e-12, 1 - 1e-12)
    pr = x[..., 0]
    if study.gold:
        out = study.n_diseased * np.log(pr) + study.n_nondiseased * np.log1p(-pr)
        for k, tp, fn, fp, tn in zip(study.tests, study.tp, study.fn, study.fp, study.tn):
            se, sp = x[..., k], x[..., K + k]
            out = out + tp * np.log(se) + fn * np.log1p(-se) + tn * np.log(sp) + fp * np.log1p(-sp)
        return out
    k1, k2 = study.tests
    se1, se2, sp1, sp2 = x[..., k1], x[..., k2], x[..., K + k1], x[..., K + k2]
    out = 0.0
    for (a, b), m in zip(((1, 1), (1, 0), (0, 1), (0, 0)), study.cross):
        if m == 0:
            continue
        d = pr * (se1 if a else 1 - se1) * (se2 if b else 1 - se2)
        n = (1 - pr) * ((1 - sp1) if a else sp1) * ((1 - sp2) if b else sp2)
        out = out + m * np.log(d + n)
    return out + np.zeros_like(pr)


# ---------------------------------------------------------------------------
# Monte Carlo oracle


def _sample_latent(params, spec, n, rng):
    K = spec.K
    thetas = _thetas(params, spec)
    margins = _margins(params, spec)
    u = rng.random(n)
    x = np.empty((n, 2 * K + 1))
    x[:, 0] = margin_proportion(margins[0], u)
    for i in range(2 * K):
        v = oracle_conditional_inverse(spec.copula, params.boundary[i], rng.random(n), u,
                                       thetas[i])
        x[:, i + 1] = margin_proportion(margins[i + 1], v)
    return x


def mc_study_loglik(study, params, spec, n_draws, rng, chunk=200_000):
    """Log of the MC likelihood estimate and its relative standard error."""
    if n_draws < 1000:
        raise ValueError("n_draws must be at least 1000")
    logs = []
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        logs.append(log_integrand(study, spec.K, _sample_latent(params, spec, m, rng)))
        done += m
    lv = np.concatenate(logs)
    shift = lv.max()
    w = np.exp(lv - shift)
    mean = w.mean()
    rel_se = w.std(ddof=1) / np.sqrt(n_draws) / mean
    return float(shift + np.log(mean)), float(rel_se)


def mc_study_likelihood(study, params, spec, n_draws, rng):
    """(value, mc_se): mean of the integrand over ``n_draws`` vine draws."""
    lv, rel = mc_study_loglik(study, params, spec, n_draws, rng)
    v = float(np.exp(lv))
    return v, v * rel


# ---------------------------------------------------------------------------
# naive full-grid oracle


def naive_grid_likelihood(study, params, spec, rule: QuadratureRule | None = None,
                          log: bool = False):
    """Sum over every one of the 2K+1 grid dimensions, whatever the study reports."""
    K = spec.K
    if K > MAX_NAIVE_K:
        raise ValueError(f"naive grid sum refused for K={K} > {MAX_NAIVE_K} (cost guard)")
    rule = rule or gauss_legendre(15)
    u = np.asarray(rule.nodes)
    lw = np.log(np.asarray(rule.weights))
    nq = len(u)
    thetas = _thetas(params, spec)
    margins = _margins(params, spec)
    ndim = 2 * K + 1
    shape = (nq,) * ndim
    x = np.empty(shape + (ndim,))
    x[..., 0] = margin_proportion(margins[0], u).reshape((nq,) + (1,) * (ndim - 1))
    for i in range(2 * K):
        v = oracle_conditional_inverse(spec.copula, params.boundary[i], u[None, :], u[:, None],
                                       thetas[i])
        table = margin_proportion(margins[i + 1], np.broadcast_to(v, (nq, nq)))
        # table[q, q'] sits on axes (root, own dimension)
        x[..., i + 1] = table.reshape([nq if d in (0, i + 1) else 1 for d in range(ndim)])
    lv = log_integrand(study, K, x)
    lwt = sum(lw.reshape([nq if d == j else 1 for d in range(ndim)]) for j in range(ndim))
    total = special.logsumexp(lv + lwt)
    return float(total) if log else float(np.exp(total))


def separable_grid_likelihood(study, params, spec, rule=None) -> float:
    """Product of one-dimensional sums; valid for gold-standard studies under
    independence pairs, where the integrand factorizes completely."""
    if not study.gold:
        raise ValueError("the integrand of a study without reference does not factorize")
    rule = rule or gauss_legendre(15)
    u, w = np.asarray(rule.nodes), np.asarray(rule.weights)
    total = 1.0
    for d, m in enumerate(_margins(params, spec)):
        lv = _dimension_log_term(study, spec.K, d, margin_proportion(m, u))
        total *= float(np.sum(w * np.exp(lv)))
    return total


def _dimension_log_term(study, K, d, x):
    pr = np.clip(x, 1e-12, 1 - 1e-12)
    if d == 0:
        return study.n_diseased * np.log(pr) + study.n_nondiseased * np.log1p(-pr)
    out = np.zeros(len(pr))
    for k, tp, fn, fp, tn in zip(study.tests, study.tp, study.fn, study.fp, study.tn):
        if d == k:
            out += tp * np.log(pr) + fn * np.log1p(-pr)
        if d == K + k:
            out += tn * np.log(pr) + fp * np.log1p(-pr)
    return out


# ---------------------------------------------------------------------------
# verification suite


def random_instance(rng, K=2, family=None, margin=None):
    """Random (spec, params) in ranges bracketing the simulation truth."""
    from .model import ModelSpec, ParameterSet

    family = str(family or rng.choice(["bvn", "frank", "clayton", "clayton90", "clayton180",
                                       "clayton270"]))
    margin = str(margin or rng.choice(["normal", "beta"]))
    spec = ModelSpec(K, family, margin)
    m = 2 * K
    props = rng.uniform(0.6, 0.9, m)
    disp = rng.uniform(0.2, 0.5, m + 1) if margin == "normal" else rng.uniform(0.02, 0.1, m + 1)
    mag = rng.uniform(0.1, 0.6, m)
    if family in ("clayton90", "clayton270"):
        taus = -mag
    elif family in ("bvn", "frank"):
        taus = mag * rng.choice([-1.0, 1.0], m)
    else:
        taus = mag
    params = ParameterSet(float(rng.uniform(0.3, 0.5)), props[:K], props[K:], float(disp[0]),
                          disp[1:K + 1], disp[K + 1:], taus[:K], taus[K:])
    return spec, params


def random_study(rng, design, spec, params, size=(30, 100)):
    """One study of ``design`` simulated from the model at ``params``."""
    from .model import StudyRecord

    K = spec.K
    n = int(rng.integers(*size))
    x = _sample_latent(params, spec, 1, rng)[0]
    if design == "no_gold_pair":
        pr, s1, s2, c1, c2 = x[0], x[1], x[2], x[K + 1], x[K + 2]
        cells = [pr * s1 * s2 + (1 - pr) * (1 - c1) * (1 - c2),
                 pr * s1 * (1 - s2) + (1 - pr) * (1 - c1) * c2,
                 pr * (1 - s1) * s2 + (1 - pr) * c1 * (1 - c2)]
        m = rng.multinomial(n, cells + [1.0 - sum(cells)])
        return StudyRecord.no_gold(f"r{design}", (1, 2), *m)
    tests = (int(rng.integers(1, K + 1)),) if design == "gold_one_test" else tuple(range(1, K + 1))
    nd = int(rng.binomial(n, x[0]))
    nn = n - nd
    counts = {}
    for k in tests:
        tp = int(rng.binomial(nd, x[k]))
        tn = int(rng.binomial(nn, x[K + k]))
        counts[k] = (tp, nd - tp, nn - tn, tn)
    return StudyRecord.gold_standard(f"r{design}", nd, nn, counts)


DESIGNS = ("gold_one_test", "gold_multi_test", "no_gold_pair")
# synthetic studies for the verify gate; small enough that 15 nodes resolve them
VERIFY_SIZES = (10, 40)


def check_quadrature_vs_mc(study, params, spec, n_draws, rng, n_quad=15, rel_tol=0.01,
                           name="quadrature-vs-mc") -> OracleReport:
    from .model import study_loglik

    main = study_loglik(study, params, spec, rule=gauss_legendre(n_quad))
    lo, rel_se = mc_study_loglik(study, params, spec, n_draws, rng)
    ratio = float(np.exp(main - lo))
    tol = max(3.0 * rel_se, rel_tol)
    return OracleReport(name, 1.0, ratio, rel_se, tol, abs(ratio - 1.0) <= tol,
                        f"(likelihood ratio to MC; {spec.name}, {study.design})")


def check_factorized_vs_naive(study, params, spec, n_quad=15, tol=1e-10,
                              name="factorized-vs-naive") -> OracleReport:
    from .model import study_loglik

    rule = gauss_legendre(n_quad)
    main = study_loglik(study, params, spec, rule=rule)
    ref = naive_grid_likelihood(study, params, spec, rule, log=True)
    return OracleReport(name, ref, main, None, tol, abs(main - ref) <= tol,
                        f"(log-likelihood; {spec.name}, {study.design})")


def check_glmm_correlation(n_draws, rng, K=2, tol=0.01) -> list[OracleReport]:
    """Normal scores of BVN-vine samples against the structured correlation matrix."""
    from .copula import CopulaFamily
    from .vine import VineSpec, implied_bvn_correlation, sample_vine

    taus = rng.uniform(-0.6, 0.6, 2 * K)
    spec = VineSpec.from_taus(CopulaFamily("bvn"), taus)
    target = implied_bvn_correlation(spec)
    z = special.ndtri(sample_vine(spec, n_draws, rng))
    emp = np.corrcoef(z, rowvar=False)
    err = np.abs(emp - target)
    i, j = np.unravel_index(np.argmax(err), err.shape)
    return [OracleReport("glmm-correlation", float(target[i, j]), float(emp[i, j]), None, tol,
                         bool(err.max() <= tol), f"(worst entry {i},{j} of {err.size})")]


def run_verification(studies=None, K=None, n_draws=200_000, seed=0, n_instances=4
                     ) -> list[OracleReport]:
    """Quadrature-vs-MC, factorized-vs-naive and GLMM-correlation checks.

    With ``studies`` the checks run on those records under random parameters;
    otherwise synthetic studies of every design are drawn.
    """
    rng = np.random.default_rng(seed)
    reports = []
    families = ["bvn", "frank", "clayton", "clayton90", "clayton180", "clayton270"]
    K = K or (max(max(s.tests) for s in studies) if studies else 2)
    for inst in range(n_instances):
        for fam in families:
            spec, params = random_instance(rng, K, fam, ("normal", "beta")[inst % 2])
            if studies:
                pool = list(studies)
                picks = [pool[int(rng.integers(len(pool)))]]
            else:
                picks = [random_study(rng, d, spec, params, VERIFY_SIZES) for d in DESIGNS]
            for st in picks:
                reports.append(check_quadrature_vs_mc(st, params, spec, n_draws, rng))
                if K <= MAX_NAIVE_K:
                    reports.append(check_factorized_vs_naive(st, params, spec))
    reports += check_glmm_correlation(max(n_draws, 10**6), rng)
    return reports


__all__ = [
    "OracleReport", "mc_study_likelihood", "mc_study_loglik", "naive_grid_likelihood",
    "separable_grid_likelihood", "oracle_theta", "oracle_conditional_inverse",
    "run_verification", "check_quadrature_vs_mc", "check_factorized_vs_naive",
    "check_glmm_correlation", "random_instance", "random_study", "DESIGNS",
]
