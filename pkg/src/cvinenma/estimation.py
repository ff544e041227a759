"""Maximum-likelihood fitting on an unconstrained scale.

Parameters are mapped to the real line (logit for proportions, log sigma or
logit gamma for dispersions, a scaled logit onto the family's tau range) and
the negative log-likelihood is minimized by BFGS with a backtracking line
search. Standard errors come from a finite-difference Hessian on the
transformed scale, mapped back by the delta method.

Two numeric gradients are available. ``central`` differences the whole
log-likelihood. ``chain`` (default) differentiates the quadrature sums
exactly with respect to the latent proportion tables and differences only
the cheap parameter -> table maps; it needs one likelihood pass per gradient
instead of 2p.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .copula import TAU_MAX, CopulaPair
from .model import (DEFAULT_N_QUAD, LikelihoodEvaluator, ModelSpec, ParameterSet,
                    dataset_digest, dimension_table)
from .stats_core import BETA_CF_DISPERSION, EPS, Margin, margin_pdf, margin_proportion
from .vine import pair_nodes

log = logging.getLogger(__name__)

BOUNDARY_TOL = 0.005
CLAYTON_TAU_MIN = 0.001
Z_MAX = 30.0
# |z| beyond this means the parameter sits on the edge of its range, where
# the transform is flat and carries no curvature information
Z_SATURATED = 12.0


class InitFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# parameter transforms


def tau_bounds(spec: ModelSpec) -> tuple[float, float]:
    fam = spec.family
    if fam.kind in ("bvn", "frank"):
        return -TAU_MAX, TAU_MAX
    if fam.rotation in (0, 180):
        return CLAYTON_TAU_MIN, TAU_MAX
    return -TAU_MAX, -CLAYTON_TAU_MIN


@dataclass(frozen=True)
class TransformMap:
    """Bijection between the free natural parameters and R^p.

    ``tags[i]`` is one of ``logit``, ``log``, ``scaled_logit``; ``free`` marks
    natural-vector entries that are estimated (frozen taus are not).
    """

    spec: ModelSpec
    boundary: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "boundary", tuple(self.boundary) or (0,) * (2 * self.spec.K))

    @property
    def n_natural(self) -> int:
        return 6 * self.spec.K + 2

    @property
    def tags(self) -> list[str]:
        K = self.spec.K
        disp = "log" if self.spec.margin == "normal" else "logit"
        return ["logit"] * (2 * K + 1) + [disp] * (2 * K + 1) + ["scaled_logit"] * (2 * K)

    @property
    def free(self) -> np.ndarray:
        K = self.spec.K
        mask = np.ones(self.n_natural, dtype=bool)
        mask[4 * K + 2:] = np.array(self.boundary) == 0
        return mask

    @property
    def n_free(self) -> int:
        return int(self.free.sum())

    def _bounds(self):
        return tau_bounds(self.spec)

    def forward(self, x) -> np.ndarray:
        """Natural vector (full length) -> free transformed vector."""
        x = np.asarray(x, dtype=float)
        lo, hi = self._bounds()
        z = np.empty_like(x)
        for i, tag in enumerate(self.tags):
            if tag == "logit":
                z[i] = special.logit(x[i])
            elif tag == "log":
                z[i] = np.log(x[i])
            else:
                z[i] = special.logit((np.clip(x[i], lo, hi) - lo) / (hi - lo))
        return z[self.free]

    def inverse(self, z) -> np.ndarray:
        """Free transformed vector -> natural vector; frozen taus become +-0.95."""
        z = np.clip(np.asarray(z, dtype=float), -Z_MAX, Z_MAX)
        full = np.empty(self.n_natural)
        full[self.free] = z
        K = self.spec.K
        full[4 * K + 2:][~self.free[4 * K + 2:]] = 0.0
        lo, hi = self._bounds()
        x = np.empty_like(full)
        for i, tag in enumerate(self.tags):
            if tag == "logit":
                x[i] = special.expit(full[i])
            elif tag == "log":
                x[i] = np.exp(full[i])
            else:
                x[i] = lo + (hi - lo) * special.expit(full[i])
        for j, b in enumerate(self.boundary):
            if b:
                x[4 * K + 2 + j] = TAU_MAX * b
        return x

    def jacobian(self, z) -> np.ndarray:
        """d natural / d z for the free parameters (diagonal)."""
        x = self.inverse(z)[self.free]
        tags = np.array(self.tags)[self.free]
        lo, hi = self._bounds()
        out = np.empty_like(x)
        for i, tag in enumerate(tags):
            if tag == "logit":
                out[i] = x[i] * (1.0 - x[i])
            elif tag == "log":
                out[i] = x[i]
            else:
                s = (x[i] - lo) / (hi - lo)
                out[i] = (hi - lo) * s * (1.0 - s)
        return out

    def params(self, z) -> ParameterSet:
        return ParameterSet.from_vector(self.inverse(z), self.spec.K, self.boundary)

    def saturated(self, z) -> np.ndarray:
        return np.abs(np.asarray(z, dtype=float)) > Z_SATURATED

    def free_names(self) -> list[str]:
        return [n for n, f in zip(self.spec.parameter_names(), self.free) if f]


# ---------------------------------------------------------------------------
# objective


class Objective:
    """Negative log-likelihood on the transformed scale, with gradients."""

    def __init__(self, evaluator: LikelihoodEvaluator, tmap: TransformMap,
                 gradient: str = "chain", table_step: float = 1e-5, fd_step: float = 1e-6):
        if gradient not in ("chain", "central"):
            raise ValueError(f"unknown gradient mode {gradient!r}")
        self.ev = evaluator
        self.tmap = tmap
        self.gradient = gradient
        self.table_step = table_step
        self.fd_step = fd_step
        spec = evaluator.spec
        K = spec.K
        # natural index -> latent dimension it moves (-1 = root)
        owner = [-1] + list(range(2 * K)) + [-1] + list(range(2 * K)) + list(range(2 * K))
        self.owner = np.array(owner)[tmap.free]
        self.free_idx = np.flatnonzero(tmap.free)

    @property
    def n_evaluations(self) -> int:
        return self.ev.n_evaluations

    def value(self, z) -> float:
        try:
            ll = self.ev.loglik(self.tmap.params(z))
        except (ValueError, FloatingPointError):
            return np.inf
        return -ll if np.isfinite(ll) else np.inf

    def _dim_table(self, x, D):
        spec = self.ev.spec
        K, u, nq = spec.K, self.ev.rule.nodes, len(self.ev.rule)
        if D < 0:
            return margin_proportion(Margin(spec.margin, x[0], x[2 * K + 1], spec.link), u)
        margin = Margin(spec.margin, x[1 + D], x[2 * K + 2 + D], spec.link)
        b = self.tmap.boundary[D]
        if b:
            pair = ParameterSet.from_vector(x, K, self.tmap.boundary).vine(spec).pairs[D]
            return dimension_table(margin, pair, None, u, nq)
        pair = CopulaPair.from_tau(spec.family, x[4 * K + 2 + D])
        return dimension_table(margin, pair, pair_nodes(pair, u), u, nq)

    def _margin(self, x, D):
        spec = self.ev.spec
        K = spec.K
        if D < 0:
            return Margin(spec.margin, x[0], x[2 * K + 1], spec.link)
        return Margin(spec.margin, x[1 + D], x[2 * K + 2 + D], spec.link)

    def _dim_nodes(self, x, D):
        """Uniform nodes fed to dimension D's quantile function (clamped like the tables)."""
        spec = self.ev.spec
        u = self.ev.rule.nodes
        if D < 0:
            out = u
        elif self.tmap.boundary[D]:
            pair = ParameterSet.from_vector(x, spec.K, self.tmap.boundary).vine(spec).pairs[D]
            out = (u if pair.family.kind == "comonotonic" else 1.0 - u)[:, None]
        else:
            out = pair_nodes(CopulaPair.from_tau(spec.family, x[4 * spec.K + 2 + D]), u)
        return np.clip(out, EPS, 1.0 - EPS)

    def _beta_table_diff(self, x0, xp, xm, D, p, h):
        """Derivative of a beta table without re-inverting the incomplete beta.

        p = F^{-1}(u; theta) gives dp = (du - dF(p; theta)) / f(p; theta); only
        the cheap forward cdf is differenced. Clamped entries are constant.
        """
        num = np.zeros_like(p)
        mp, mm = self._margin(xp, D), self._margin(xm, D)
        if mp != mm:
            (ap, bp), (am, bm) = mp.beta_shapes, mm.beta_shapes
            num -= (special.betainc(ap, bp, p) - special.betainc(am, bm, p)) / (2 * h)
        elif D >= 0 and not self.tmap.boundary[D]:
            num += (self._dim_nodes(xp, D) - self._dim_nodes(xm, D)) / (2 * h)
        dens = margin_pdf(self._margin(x0, D), p)
        interior = (p > EPS) & (p < 1.0 - EPS) & (dens > 0)
        return np.where(interior, num / np.where(interior, dens, 1.0), 0.0)

    def value_grad(self, z):
        z = np.asarray(z, dtype=float)
        if self.gradient == "central":
            f = self.value(z)
            g = np.empty_like(z)
            for j in range(len(z)):
                h = self.fd_step * max(1.0, abs(z[j]))
                e = np.zeros_like(z)
                e[j] = h
                g[j] = (self.value(z + e) - self.value(z - e)) / (2 * h)
            return f, g
        try:
            params = self.tmap.params(z)
            tables = self.ev.tables(params)
            self.ev.n_evaluations += 1
            ll, G0, G = self.ev.compiled.study_logliks(tables, want_grad=True)
        except (ValueError, FloatingPointError):
            return np.inf, np.full_like(z, np.nan)
        ll = float(np.sum(ll))
        if not np.isfinite(ll):
            return np.inf, np.full_like(z, np.nan)
        beta = self.ev.spec.margin == "beta"
        x0 = self.tmap.inverse(z) if beta else None
        g = np.empty_like(z)
        for j in range(len(z)):
            h = self.table_step
            e = np.zeros_like(z)
            e[j] = h
            xp, xm = self.tmap.inverse(z + e), self.tmap.inverse(z - e)
            D = self.owner[j]
            if beta and self._margin(x0, D).dispersion >= BETA_CF_DISPERSION:
                p = tables.p0 if D < 0 else tables.P[D, :, :tables.m_eff[D]]
                dt = self._beta_table_diff(x0, xp, xm, D, p, h)
            else:
                dt = (self._dim_table(xp, D) - self._dim_table(xm, D)) / (2 * h)
            if D < 0:
                g[j] = np.sum(G0 * dt)
            else:
                g[j] = np.sum(G[D, :, :dt.shape[1]] * dt)
        return -ll, -g


# ---------------------------------------------------------------------------
# BFGS


@dataclass
class OptimResult:
    z: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str


def bfgs(value_grad, z0, gtol=1e-5, max_iter=500, c1=1e-4, max_backtrack=40) -> OptimResult:
    """Minimize with BFGS inverse-Hessian updates and Armijo backtracking."""
    z = np.asarray(z0, dtype=float).copy()
    f, g = value_grad(z)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return OptimResult(z, f, g, 0, False, "non-finite objective at start")
    n = len(z)
    H = np.eye(n)
    resets = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < gtol:
            return OptimResult(z, f, g, it - 1, True, "gradient tolerance reached")
        d = -H @ g
        slope = float(g @ d)
        if slope >= 0:
            H = np.eye(n)
            d = -g
            slope = float(g @ d)
        # cap the step so transformed parameters move at most 5 units
        t = min(1.0, 5.0 / max(np.max(np.abs(d)), 1e-300))
        accepted = False
        for _ in range(max_backtrack):
            z_new = z + t * d
            f_new, g_new = value_grad(z_new)
            if np.isfinite(f_new) and f_new <= f + c1 * t * slope and np.all(np.isfinite(g_new)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if resets < 2 and not np.allclose(H, np.eye(n)):
                H = np.eye(n)
                resets += 1
                continue
            return OptimResult(z, f, g, it, bool(np.max(np.abs(g)) < gtol),
                               "line search failed")
        s = z_new - z
        y = g_new - g
        z, f, g = z_new, f_new, g_new
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if it == 1 and resets == 0:
                H = np.eye(n) * sy / float(y @ y)
            rho = 1.0 / sy
            I = np.eye(n)
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
    return OptimResult(z, f, g, max_iter, bool(np.max(np.abs(g)) < gtol),
                       "iteration limit reached")


# ---------------------------------------------------------------------------
# Hessian and standard errors


def numeric_hessian(grad_fn, z, rel_step=1e-4) -> np.ndarray:
    """Central differences of the gradient, symmetrized."""
    z = np.asarray(z, dtype=float)
    n = len(z)
    H = np.empty((n, n))
    for j in range(n):
        h = rel_step * max(1.0, abs(z[j]))
        e = np.zeros(n)
        e[j] = h
        H[:, j] = (grad_fn(z + e) - grad_fn(z - e)) / (2 * h)
    return 0.5 * (H + H.T)


def se_from_hessian(H, jac=None):
    """Delta-method SEs from the Hessian of the negative log-likelihood.

    Returns ``(se, positive_definite)``; SEs are ``None`` if H is not PD.
    """
    H = np.asarray(H, dtype=float)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None, False
    cov = np.linalg.inv(H)
    se = np.sqrt(np.diag(cov))
    if jac is not None:
        se = se * np.abs(jac)
    return se, True


# ---------------------------------------------------------------------------
# results


@dataclass
class FitOptions:
    n_quad: int = DEFAULT_N_QUAD
    gtol: float = 1e-5
    max_iter: int = 500
    gradient: str = "chain"
    hessian_step: float = 1e-4
    boundary_rule: bool = True
    compute_se: bool = True

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class FitResult:
    spec: ModelSpec
    estimates: ParameterSet
    standard_errors: dict[str, float | None]
    max_loglik: float
    n_evaluations: int
    converged: bool
    gradient_norm: float
    boundary_pairs: list[str] = field(default_factory=list)
    iterations: int = 0
    hessian_pd: bool = True
    message: str = ""
    data_digest: str = ""
    n_studies: int = 0

    @property
    def n_params(self) -> int:
        return 6 * self.spec.K + 2 - len(self.boundary_pairs)

    @property
    def aic(self) -> float:
        return 2 * self.n_params - 2 * self.max_loglik

    def estimate_dict(self) -> dict[str, float]:
        return dict(zip(self.spec.parameter_names(), self.estimates.as_vector().tolist()))

    def to_dict(self) -> dict:
        return {
            "model": self.spec.to_dict(),
            "estimates": self.estimate_dict(),
            "parameters": self.estimates.to_dict(),
            "standard_errors": self.standard_errors,
            "max_loglik": self.max_loglik,
            "neg_loglik": -self.max_loglik,
            "aic": self.aic,
            "n_params": self.n_params,
            "n_evaluations": self.n_evaluations,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "boundary_pairs": self.boundary_pairs,
            "boundary": list(self.estimates.boundary),
            "hessian_pd": self.hessian_pd,
            "message": self.message,
            "data_digest": self.data_digest,
            "n_studies": self.n_studies,
        }


def default_init(studies, spec: ModelSpec) -> ParameterSet:
    """Pooled continuity-corrected proportions, sigma 0.3 / gamma 0.05, tau +-0.2."""
    K = spec.K
    n1 = n = 0.0
    pos = np.zeros(2 * K)
    tot = np.zeros(2 * K)
    for s in studies:
        if not s.gold:
            continue
        n1 += s.n_diseased
        n += s.n_diseased + s.n_nondiseased
        for k, tp, fn, fp, tn in zip(s.tests, s.tp, s.fn, s.fp, s.tn):
            pos[k - 1] += tp
            tot[k - 1] += tp + fn
            pos[K + k - 1] += tn
            tot[K + k - 1] += tn + fp
    pi = (n1 + 0.5) / (n + 1.0)
    props = (pos + 0.5) / (tot + 1.0)
    delta = 0.3 if spec.margin == "normal" else 0.05
    lo, hi = tau_bounds(spec)
    tau = 0.2 if hi > 0.5 else -0.2
    return ParameterSet.uniform(K, pi, props[:K], props[K:], delta, tau)


def _pair_names(spec):
    return [n for n in spec.parameter_names() if n.startswith("tau")]


def _fit_once(ev, spec, init: ParameterSet, boundary, options: FitOptions):
    tmap = TransformMap(spec, boundary)
    obj = Objective(ev, tmap, options.gradient)
    z0 = tmap.forward(init.as_vector())
    f0 = obj.value(z0)
    if not np.isfinite(f0):
        raise InitFailure(f"log-likelihood is not finite at the starting values "
                          f"{init.to_dict()} for model {spec.name}")
    res = bfgs(obj.value_grad, z0, options.gtol, options.max_iter)
    return tmap, obj, res


def _standard_errors(obj: Objective, tmap: TransformMap, z, options: FitOptions):
    names = tmap.spec.parameter_names()
    out: dict[str, float | None] = {n: None for n in names}
    z = np.asarray(z, dtype=float)
    keep = ~tmap.saturated(z)
    idx = np.flatnonzero(keep)

    def grad_sub(v):
        full = z.copy()
        full[idx] = v
        return obj.value_grad(full)[1][idx]

    H = numeric_hessian(grad_sub, z[idx], options.hessian_step)
    se, pd = se_from_hessian(H, tmap.jacobian(z)[idx])
    if pd:
        for n, v in zip(np.array(tmap.free_names())[idx], se):
            out[str(n)] = float(v)
    else:
        warnings.warn("Hessian is not positive definite; standard errors are unavailable",
                      RuntimeWarning, stacklevel=3)
    return out, pd


def standard_errors(at: ParameterSet, studies, spec: ModelSpec,
                    options: FitOptions | None = None) -> dict[str, float | None]:
    """Delta-method SEs at a (local) maximum; frozen taus and non-PD Hessians give None."""
    options = options or FitOptions()
    ev = LikelihoodEvaluator(studies, spec, options.n_quad)
    tmap = TransformMap(spec, at.boundary)
    obj = Objective(ev, tmap, options.gradient)
    return _standard_errors(obj, tmap, tmap.forward(at.as_vector()), options)[0]


def _result(spec, ev, tmap, obj, res, options, digest, iterations):
    est = tmap.params(res.z)
    se, pd = ({n: None for n in spec.parameter_names()}, True)
    if options.compute_se:
        se, pd = _standard_errors(obj, tmap, res.z, options)
    names = _pair_names(spec)
    return FitResult(
        spec=spec, estimates=est, standard_errors=se, max_loglik=-float(res.fun),
        n_evaluations=ev.n_evaluations, converged=res.converged,
        gradient_norm=float(np.max(np.abs(res.grad))) if len(res.grad) else 0.0,
        boundary_pairs=[n for n, b in zip(names, tmap.boundary) if b],
        iterations=iterations, hessian_pd=pd, message=res.message, data_digest=digest,
        n_studies=len(ev.studies))


def near_boundary(params: ParameterSet, tol: float = BOUNDARY_TOL) -> tuple[int, ...]:
    """Boundary flags implied by taus within ``tol`` of +-0.95."""
    flags = []
    for tau, b in zip(params.taus, params.boundary):
        if b:
            flags.append(b)
        elif tau >= TAU_MAX - tol:
            flags.append(1)
        elif tau <= -TAU_MAX + tol:
            flags.append(-1)
        else:
            flags.append(0)
    return tuple(flags)


def apply_boundary_rule(result: FitResult, studies, options: FitOptions | None = None
                        ) -> FitResult:
    """Freeze pairs whose tau sits at +-0.95 and refit once; unchanged otherwise."""
    options = options or FitOptions()
    flags = near_boundary(result.estimates)
    if flags == tuple(result.estimates.boundary):
        return result
    spec = result.spec
    log.info("freezing pairs %s at the Frechet bounds and refitting", flags)
    ev = LikelihoodEvaluator(studies, spec, options.n_quad)
    ev.n_evaluations = result.n_evaluations
    init = replace(result.estimates, boundary=flags)
    tmap, obj, res = _fit_once(ev, spec, init, flags, options)
    return _result(spec, ev, tmap, obj, res, options, result.data_digest,
                   result.iterations + res.iterations)


def fit(studies, spec: ModelSpec, init: ParameterSet | None = None,
        options: FitOptions | None = None) -> FitResult:
    studies = list(studies)
    if not studies:
        raise ValueError("fit needs at least one study")
    options = options or FitOptions()
    init = init or default_init(studies, spec)
    if init.K != spec.K:
        raise ValueError(f"initial values have K={init.K}, model has K={spec.K}")
    ev = LikelihoodEvaluator(studies, spec, options.n_quad)
    digest = dataset_digest(studies)
    tmap, obj, res = _fit_once(ev, spec, init, init.boundary, options)
    boundary_hit = options.boundary_rule and near_boundary(tmap.params(res.z)) != tmap.boundary
    opts = replace(options, compute_se=options.compute_se and not boundary_hit)
    result = _result(spec, ev, tmap, obj, res, opts, digest, res.iterations)
    if boundary_hit:
        result = apply_boundary_rule(result, studies, options)
    log.info("fitted %s: loglik %.4f, converged %s after %d iterations", spec.name,
             result.max_loglik, result.converged, result.iterations)
    return result


# ---------------------------------------------------------------------------
# model comparison


@dataclass(frozen=True)
class RankedModel:
    rank: int
    model: str
    max_loglik: float
    neg_loglik: float
    aic: float
    n_params: int
    loglik_gap: float
    converged: bool

    def to_dict(self):
        return dict(self.__dict__)


def compare_models(results) -> list[RankedModel]:
    """Rank (spec, FitResult) pairs by maximized log-likelihood, then fewer parameters.

    ``loglik_gap`` is each model's distance below the best log-likelihood.
    """
    results = list(results)
    digests = {r.data_digest for _, r in results}
    if len(digests) > 1:
        raise ValueError("models were fitted to different datasets")
    order = sorted(range(len(results)),
                   key=lambda i: (-results[i][1].max_loglik, results[i][1].n_params, i))
    best = results[order[0]][1].max_loglik if results else 0.0
    out = []
    for rank, i in enumerate(order, 1):
        spec, r = results[i]
        out.append(RankedModel(rank, spec.name, r.max_loglik, -r.max_loglik, r.aic, r.n_params,
                               best - r.max_loglik, r.converged))
    return out


def headline_gap(ranking: list[RankedModel]) -> float | None:
    """Log-likelihood difference between the two best models."""
    if len(ranking) < 2:
        return None
    return ranking[1].loglik_gap
