"""Bivariate pair-copulas: h-functions, their inverses and Kendall's tau maps.

``hfunc(pair, v, u)`` is C_{2|1}(v | u) = dC(u, v)/du, the conditional cdf of
the second coordinate given the first. Rotations follow

    180:  h(v|u) = 1 - h0(1 - v | 1 - u)
     90:  h(v|u) = h0(v | 1 - u)
    270:  h(v|u) = 1 - h0(1 - v | u)

so that 180 keeps the sign of Kendall's tau and 90/270 flip it.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .stats_core import debye1

KINDS = ("bvn", "frank", "clayton", "independence", "comonotonic", "countermonotonic")
ROTATIONS = (0, 90, 180, 270)
FAMILY_NAMES = ("bvn", "frank", "clayton", "clayton90", "clayton180", "clayton270",
                "independence", "comonotonic", "countermonotonic")

TAU_MAX = 0.95
CLAMP = 1e-12
_FRANK_SERIES_CUTOFF = 1e-5
# Frank tau(theta) reaches 0.95 near theta ~ 78; bracket comfortably above.
_FRANK_THETA_MAX = 200.0

# Test hook: set to "bvn" (etc.) to perturb that family's conditional inverse.
FAULT_ENV = "CVINENMA_FAULT"


@dataclass(frozen=True)
class CopulaFamily:
    kind: str
    rotation: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown copula kind {self.kind!r}")
        if self.rotation not in ROTATIONS:
            raise ValueError(f"rotation must be one of {ROTATIONS}")
        if self.rotation and self.kind != "clayton":
            raise ValueError("rotations are only defined for the Clayton family")

    @classmethod
    def from_name(cls, name: str) -> "CopulaFamily":
        name = name.lower().replace("°", "")
        if name.startswith("clayton") and name != "clayton":
            return cls("clayton", int(name[len("clayton"):]))
        if name in ("cln180",):
            return cls("clayton", 180)
        return cls(name)

    @property
    def name(self) -> str:
        return f"clayton{self.rotation}" if self.rotation else self.kind

    @property
    def tau_range(self) -> tuple[float, float]:
        """Admissible Kendall's tau range (endpoints may or may not be included)."""
        if self.kind in ("bvn", "frank"):
            return (-TAU_MAX, TAU_MAX)
        if self.kind == "clayton":
            return (0.0, TAU_MAX) if self.rotation in (0, 180) else (-TAU_MAX, 0.0)
        if self.kind == "independence":
            return (0.0, 0.0)
        if self.kind == "comonotonic":
            return (1.0, 1.0)
        return (-1.0, -1.0)

    @property
    def is_degenerate(self) -> bool:
        return self.kind in ("comonotonic", "countermonotonic")

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class CopulaPair:
    family: CopulaFamily
    theta: float = 0.0
    fixed_boundary: bool = False

    def __post_init__(self):
        if isinstance(self.family, str):
            object.__setattr__(self, "family", CopulaFamily.from_name(self.family))
        if self.fixed_boundary:
            return
        k, t = self.family.kind, self.theta
        if k == "bvn" and not -1.0 < t < 1.0:
            raise ValueError(f"BVN theta must lie in (-1, 1), got {t}")
        if k == "clayton" and not t > 0.0:
            raise ValueError(f"Clayton theta must be positive, got {t}")
        if k == "frank" and not np.isfinite(t):
            raise ValueError(f"Frank theta must be finite, got {t}")

    @classmethod
    def from_tau(cls, family, tau: float) -> "CopulaPair":
        if isinstance(family, str):
            family = CopulaFamily.from_name(family)
        return cls(family, tau_to_theta(family, tau))

    @property
    def tau(self) -> float:
        return theta_to_tau(self.family, self.theta)


def _clamp(x):
    return np.clip(np.asarray(x, dtype=float), CLAMP, 1.0 - CLAMP)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


# ---------------------------------------------------------------------------
# base (unrotated) families


def _h_bvn(v, u, th):
    return special.ndtr((special.ndtri(v) - th * special.ndtri(u)) / np.sqrt(1.0 - th * th))


def _hinv_bvn(p, u, th):
    return special.ndtr(th * special.ndtri(u) + np.sqrt(1.0 - th * th) * special.ndtri(p))


def _h_clayton(v, u, th):
    # u^{-th-1} (u^{-th} + v^{-th} - 1)^{-1/th-1}, evaluated in logs
    a, b = -th * np.log(u), -th * np.log(v)
    m = np.maximum(a, b)
    log_s = m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))
    return np.exp((1.0 + 1.0 / th) * a - (1.0 / th + 1.0) * log_s)


def _hinv_clayton(p, u, th):
    a = np.expm1(-th / (1.0 + th) * np.log(p))
    with np.errstate(divide="ignore"):
        log_t = np.logaddexp(0.0, np.log(a) - th * np.log(u))
    return np.exp(-log_t / th)


def _h_frank(v, u, th):
    if abs(th) < _FRANK_SERIES_CUTOFF:
        return (v + th * v * (v - 1.0) * (2.0 * u - 1.0) / 2.0
                + th * th * v * (v - 1.0) * (2.0 * v - 1.0) * (6.0 * u * u - 6.0 * u + 1.0) / 12.0)
    if th < 0:
        # C_{-t}(u, v) = u - C_t(u, 1 - v)
        return 1.0 - _h_frank(1.0 - v, u, -th)
    # h = 1 / (1 + e^{th u} R),  R = (e^{-th v} - e^{-th}) / (1 - e^{-th v})
    log_r = -th * v + np.log(-np.expm1(-th * (1.0 - v))) - np.log(-np.expm1(-th * v))
    return special.expit(-(th * u + log_r))


def _hinv_frank(p, u, th):
    if abs(th) < _FRANK_SERIES_CUTOFF:
        return (p - th * p * (p - 1.0) * (2.0 * u - 1.0) / 2.0
                + th * th * p * (p - 1.0) * (2.0 * p - 1.0) * (3.0 * u * u - 3.0 * u + 1.0) / 6.0)
    if th < 0:
        return 1.0 - _hinv_frank(1.0 - p, u, -th)
    lp, lq = np.log(p), np.log1p(-p)
    log_y = np.logaddexp(lp - th, lq - th * u) - np.logaddexp(lp, lq - th * u)
    return -log_y / th


_BASE = {
    "bvn": (_h_bvn, _hinv_bvn),
    "clayton": (_h_clayton, _hinv_clayton),
    "frank": (_h_frank, _hinv_frank),
}


def _fault_theta(kind, th):
    fault = os.environ.get(FAULT_ENV)
    if fault and fault == kind:
        return th * 0.5 if kind == "bvn" else th * 1.5
    return th


# ---------------------------------------------------------------------------
# public kernel


def hfunc(pair: CopulaPair, v, u):
    """Conditional cdf C_{2|1}(v | u); arguments clamped to [1e-12, 1 - 1e-12]."""
    v, u = _clamp(v), _clamp(u)
    fam = pair.family
    if fam.kind == "independence":
        return _out(v + 0.0 * u)
    if fam.kind == "comonotonic":
        return _out((v >= u).astype(float))
    if fam.kind == "countermonotonic":
        return _out((v >= 1.0 - u).astype(float))
    h, _ = _BASE[fam.kind]
    th = pair.theta
    rot = fam.rotation
    if rot == 0:
        out = h(v, u, th)
    elif rot == 180:
        out = 1.0 - h(1.0 - v, 1.0 - u, th)
    elif rot == 90:
        out = h(v, 1.0 - u, th)
    else:
        out = 1.0 - h(1.0 - v, u, th)
    return _out(out)


def hinv(pair: CopulaPair, p, u):
    """Inverse of :func:`hfunc` in its first argument: v with hfunc(v, u) = p."""
    p, u = _clamp(p), _clamp(u)
    fam = pair.family
    if fam.kind == "independence":
        return _out(p + 0.0 * u)
    if fam.kind == "comonotonic":
        return _out(u + 0.0 * p)
    if fam.kind == "countermonotonic":
        return _out(1.0 - u + 0.0 * p)
    _, hi = _BASE[fam.kind]
    th = _fault_theta(fam.kind, pair.theta)
    rot = fam.rotation
    if rot == 0:
        out = hi(p, u, th)
    elif rot == 180:
        out = 1.0 - hi(1.0 - p, 1.0 - u, th)
    elif rot == 90:
        out = hi(p, 1.0 - u, th)
    else:
        out = 1.0 - hi(1.0 - p, u, th)
    return _out(out)


# ---------------------------------------------------------------------------
# Kendall's tau <-> theta


def _check_tau(family: CopulaFamily, tau: float):
    lo, hi = family.tau_range
    if family.kind in ("bvn", "frank"):
        ok = lo < tau < hi and not (family.kind == "frank" and tau == 0.0)
        rng = f"({lo}, {hi})" + (" excluding 0" if family.kind == "frank" else "")
    elif family.kind == "clayton":
        ok = (0.0 < tau <= hi) if hi > 0 else (lo <= tau < 0.0)
        rng = f"(0, {hi}]" if hi > 0 else f"[{lo}, 0)"
    else:
        ok = tau == lo
        rng = f"{{{lo}}}"
    if not ok:
        raise ValueError(f"Kendall's tau {tau} outside the admissible range {rng} "
                         f"for the {family.name} copula")


def _frank_tau(theta: float) -> float:
    if theta == 0.0:
        return 0.0
    return 1.0 - 4.0 / theta * (1.0 - debye1(theta))


def tau_to_theta(family, tau: float) -> float:
    if isinstance(family, str):
        family = CopulaFamily.from_name(family)
    tau = float(tau)
    _check_tau(family, tau)
    kind = family.kind
    if kind == "bvn":
        return float(np.sin(np.pi * tau / 2.0))
    if kind == "clayton":
        a = abs(tau)
        return 2.0 * a / (1.0 - a)
    if kind == "frank":
        a = abs(tau)
        th = optimize.brentq(lambda t: _frank_tau(t) - a, 1e-12, _FRANK_THETA_MAX,
                             xtol=1e-13, rtol=4 * np.finfo(float).eps)
        return float(np.copysign(th, tau))
    return 0.0


def theta_to_tau(family, theta: float) -> float:
    if isinstance(family, str):
        family = CopulaFamily.from_name(family)
    kind = family.kind
    if kind == "bvn":
        return float(2.0 / np.pi * np.arcsin(theta))
    if kind == "clayton":
        t = theta / (theta + 2.0)
        return float(t if family.rotation in (0, 180) else -t)
    if kind == "frank":
        return float(_frank_tau(float(theta)))
    return family.tau_range[0]


def sample_pair(pair: CopulaPair, n: int, rng) -> np.ndarray:
    """n draws of (u, v) by conditional inversion; returns an (n, 2) array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    u = rng.random(n)
    p = rng.random(n)
    return np.column_stack([u, hinv(pair, p, u)])
