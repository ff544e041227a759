"""Special functions, margins, links and quadrature rules shared by the model.

Normal cdf/quantile and the regularized incomplete beta function (and its
inverse) are delegated to :mod:`scipy.special`; everything here is vectorized
over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

LINKS = ("logit", "probit", "cloglog", "identity")
MARGINS = ("normal", "beta")

# Guard used wherever a probability must stay strictly inside (0, 1).
EPS = 1e-12
# Below this beta dispersion scipy's betaincinv loses accuracy (and returns NaN
# near 1e-12); the Cornish-Fisher expansion through the skewness term is then
# accurate to O(gamma) relative to the standard deviation.
BETA_CF_DISPERSION = 1e-8


class DomainError(ValueError):
    """Argument outside the domain of a link, margin or probability map."""


def _check_open_unit(p, what="p"):
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0.0)) or np.any(~(p < 1.0)):
        raise DomainError(f"{what} must lie in the open interval (0, 1)")
    return p


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


# ---------------------------------------------------------------------------
# links


def link_apply(link: str, p):
    """Map a probability onto the link scale."""
    p = _check_open_unit(p)
    if link == "logit":
        out = special.logit(p)
    elif link == "probit":
        out = special.ndtri(p)
    elif link == "cloglog":
        out = np.log(-np.log1p(-p))
    elif link == "identity":
        out = p
    else:
        raise ValueError(f"unknown link {link!r}; expected one of {LINKS}")
    return _scalar_or_array(out)


def link_inverse(link: str, x):
    """Inverse link; maps the real line into (0, 1) except for ``identity``."""
    x = np.asarray(x, dtype=float)
    if link == "logit":
        out = special.expit(x)
    elif link == "probit":
        out = special.ndtr(x)
    elif link == "cloglog":
        out = -np.expm1(-np.exp(x))
    elif link == "identity":
        out = x
    else:
        raise ValueError(f"unknown link {link!r}; expected one of {LINKS}")
    return _scalar_or_array(out)


# ---------------------------------------------------------------------------
# margins


@dataclass(frozen=True)
class Margin:
    """Univariate random-effect distribution of one latent proportion.

    ``normal``: N(link(pi), dispersion) on the link scale.
    ``beta``: Beta with mean ``pi`` and dispersion ``gamma`` in (0, 1), i.e.
    shape parameters a = pi (1 - gamma) / gamma, b = (1 - pi)(1 - gamma) / gamma,
    so the variance is pi (1 - pi) gamma.
    """

    kind: str
    pi: float
    dispersion: float
    link: str = "logit"

    def __post_init__(self):
        if self.kind not in MARGINS:
            raise ValueError(f"unknown margin {self.kind!r}; expected one of {MARGINS}")
        if not 0.0 < self.pi < 1.0:
            raise DomainError(f"pi must be in (0, 1), got {self.pi}")
        if self.kind == "normal":
            if not self.dispersion > 0.0:
                raise DomainError(f"sigma must be positive, got {self.dispersion}")
            if self.link == "identity":
                raise ValueError("normal margins need a logit, probit or cloglog link")
        else:
            if not 0.0 < self.dispersion < 1.0:
                raise DomainError(f"gamma must be in (0, 1), got {self.dispersion}")
            if self.link != "identity":
                raise ValueError("beta margins work on the proportion scale (identity link)")

    @property
    def beta_shapes(self) -> tuple[float, float]:
        g = self.dispersion
        return self.pi * (1.0 - g) / g, (1.0 - self.pi) * (1.0 - g) / g

    @property
    def mean_latent(self) -> float:
        return float(link_apply(self.link, self.pi)) if self.kind == "normal" else self.pi


def _beta_ppf(margin: Margin, u):
    a, b = margin.beta_shapes
    if margin.dispersion >= BETA_CF_DISPERSION:
        return special.betaincinv(a, b, u)
    pi = margin.pi
    sd = np.sqrt(pi * (1.0 - pi) * margin.dispersion)
    skew = 2.0 * (b - a) * np.sqrt(a + b + 1.0) / ((a + b + 2.0) * np.sqrt(a * b))
    z = special.ndtri(u)
    return np.clip(pi + sd * (z + skew / 6.0 * (z * z - 1.0)), 0.0, 1.0)


def margin_quantile(margin: Margin, u):
    """Latent value x = F^{-1}(u); apply :func:`link_inverse` for a proportion."""
    u = _check_open_unit(u, "u")
    if margin.kind == "normal":
        out = margin.mean_latent + margin.dispersion * special.ndtri(u)
    else:
        out = _beta_ppf(margin, u)
    return _scalar_or_array(out)


def margin_cdf(margin: Margin, x):
    x = np.asarray(x, dtype=float)
    if margin.kind == "normal":
        out = special.ndtr((x - margin.mean_latent) / margin.dispersion)
    else:
        a, b = margin.beta_shapes
        out = special.betainc(a, b, np.clip(x, 0.0, 1.0))
    return _scalar_or_array(out)


def margin_pdf(margin: Margin, x):
    """Density of the latent value x (link scale for normal, proportion scale for beta)."""
    x = np.asarray(x, dtype=float)
    if margin.kind == "normal":
        s = margin.dispersion
        out = np.exp(-0.5 * ((x - margin.mean_latent) / s) ** 2) / (s * np.sqrt(2 * np.pi))
    else:
        a, b = margin.beta_shapes
        with np.errstate(divide="ignore"):
            logf = special.xlogy(a - 1, x) + special.xlog1py(b - 1, -x) - special.betaln(a, b)
        out = np.where((x >= 0.0) & (x <= 1.0), np.exp(logf), 0.0)
    return _scalar_or_array(out)


def margin_proportion(margin: Margin, u):
    """Latent proportion l^{-1}(F^{-1}(u)), clamped to [EPS, 1 - EPS].

    Unlike :func:`margin_quantile` this accepts u at the (already clamped)
    quadrature/sampling edges without raising.
    """
    u = np.clip(np.asarray(u, dtype=float), EPS, 1.0 - EPS)
    if margin.kind == "normal":
        x = margin.mean_latent + margin.dispersion * special.ndtri(u)
        p = link_inverse(margin.link, x)
    else:
        p = _beta_ppf(margin, u)
    return np.clip(p, EPS, 1.0 - EPS)


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.nodes)


def gauss_legendre(n_points: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [0, 1]; exact for degree <= 2n - 1."""
    if int(n_points) != n_points or n_points < 2:
        raise ValueError(f"n_points must be an integer >= 2, got {n_points}")
    x, w = np.polynomial.legendre.leggauss(int(n_points))
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights)


# ---------------------------------------------------------------------------
# sampling


def sample_shifted_gamma(shape: float, rate: float, shift: float, rng, size=None):
    """shift + Gamma(shape, rate) draws (numpy's Marsaglia-Tsang sampler)."""
    if not (shape > 0 and rate > 0):
        raise ValueError(f"shape and rate must be positive, got {shape}, {rate}")
    return shift + rng.gamma(shape, 1.0 / rate, size=size)


# ---------------------------------------------------------------------------
# Debye function of order 1

# Bernoulli-number series coefficients of D1(t) = sum c_k t^k, |t| < 2 pi
_DEBYE_SERIES = (1.0, -1.0 / 4, 1.0 / 36, 0.0, -1.0 / 3600, 0.0, 1.0 / 211680, 0.0,
                 -1.0 / 10886400)
_ZETA2 = np.pi**2 / 6.0


def _debye1_pos(t):
    small = t < 0.1
    out = np.empty_like(t)
    ts = t[small]
    out[small] = np.polynomial.polynomial.polyval(ts, _DEBYE_SERIES)
    tl = t[~small]
    e = np.exp(-tl)
    # int_0^t s/(e^s - 1) ds = zeta(2) - Li2(e^-t) + t log(1 - e^-t)
    integral = _ZETA2 - special.spence(1.0 - e) + tl * np.log1p(-e)
    out[~small] = integral / tl
    return out


def debye1(t):
    """D1(t) = (1/t) int_0^t s / (e^s - 1) ds, with D1(0) = 1."""
    t = np.asarray(t, dtype=float)
    a = np.abs(np.atleast_1d(t))
    out = _debye1_pos(a)
    neg = np.atleast_1d(t) < 0
    out[neg] += a[neg] / 2.0
    return float(out[0]) if t.ndim == 0 else out
