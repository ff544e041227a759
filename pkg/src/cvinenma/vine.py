"""1-truncated C-vine over (U, U_11..U_1K, U_01..U_0K).

The root U is linked to every U_dk by one pair-copula; all conditional
(higher-tree) copulas are independence, so given the root the U_dk are
independent. Pair order is sensitivities (d=1) for k=1..K followed by
specificities (d=0) for k=1..K, which is also the column order of samples
after the root.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .copula import CopulaFamily, CopulaPair, hinv
from .stats_core import QuadratureRule


class UnsupportedFamilyError(ValueError):
    pass


@dataclass(frozen=True)
class VineSpec:
    K: int
    pairs: tuple[CopulaPair, ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if len(self.pairs) != 2 * self.K:
            raise ValueError(f"a vine over K={self.K} tests needs {2 * self.K} pairs, "
                             f"got {len(self.pairs)}")
        kinds = {p.family for p in self.pairs if not p.family.is_degenerate}
        if len(kinds) > 1:
            raise ValueError("all non-frozen pairs must share one copula family")

    @classmethod
    def from_taus(cls, family, taus, boundary=None) -> "VineSpec":
        """Build from 2K Kendall's taus; ``boundary[i]`` = +1/-1 freezes pair i."""
        if isinstance(family, str):
            family = CopulaFamily.from_name(family)
        taus = list(taus)
        boundary = list(boundary) if boundary is not None else [0] * len(taus)
        pairs = []
        for tau, b in zip(taus, boundary):
            if b > 0:
                pairs.append(CopulaPair(CopulaFamily("comonotonic"), 0.0, True))
            elif b < 0:
                pairs.append(CopulaPair(CopulaFamily("countermonotonic"), 0.0, True))
            else:
                pairs.append(CopulaPair.from_tau(family, tau))
        return cls(len(taus) // 2, tuple(pairs))

    def pair(self, d: int, k: int) -> CopulaPair:
        return self.pairs[self.index(d, k)]

    def index(self, d: int, k: int) -> int:
        if d not in (0, 1) or not 1 <= k <= self.K:
            raise IndexError(f"no pair ({d}, {k}) for K={self.K}")
        return (k - 1) if d == 1 else self.K + k - 1


@dataclass(frozen=True)
class DependentGrid:
    """Quadrature grid carrying the vine dependence.

    ``nodes[i][q, q']`` = hinv(u_{q'} | v_q) for pair i; ``root`` = v_q.
    """

    root: np.ndarray
    weights: np.ndarray
    nodes: tuple[np.ndarray, ...]
    vine: VineSpec | None = None

    @property
    def n_quad(self) -> int:
        return len(self.root)


def pair_nodes(pair: CopulaPair, u) -> np.ndarray:
    """hinv(u_{q'} | u_q) as an (N_q, N_q) matrix; rows index the root node."""
    u = np.asarray(u)
    m = hinv(pair, u[None, :], u[:, None])
    return np.broadcast_to(m, (len(u), len(u))).copy()


def build_grid(spec: VineSpec, rule: QuadratureRule) -> DependentGrid:
    u = np.asarray(rule.nodes)
    nodes = []
    for pair in spec.pairs:
        m = pair_nodes(pair, u)
        m.setflags(write=False)
        nodes.append(m)
    return DependentGrid(u, np.asarray(rule.weights), tuple(nodes), spec)


def sample_vine(spec: VineSpec, n: int, rng) -> np.ndarray:
    """n draws of (u, u_11..u_1K, u_01..u_0K) as an (n, 2K+1) array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = np.empty((n, 2 * spec.K + 1))
    out[:, 0] = rng.random(n)
    for i, pair in enumerate(spec.pairs):
        p = rng.random(n)
        out[:, i + 1] = hinv(pair, p, out[:, 0])
    return out


def implied_bvn_correlation(spec: VineSpec) -> np.ndarray:
    """Correlation matrix of the normal scores when every pair is BVN."""
    theta = []
    for pair in spec.pairs:
        if pair.family.kind != "bvn":
            raise UnsupportedFamilyError(
                f"implied correlation needs BVN pairs, got {pair.family.name}")
        theta.append(pair.theta)
    th = np.asarray(theta)
    m = len(th) + 1
    r = np.empty((m, m))
    r[0, 0] = 1.0
    r[0, 1:] = r[1:, 0] = th
    r[1:, 1:] = np.outer(th, th)
    np.fill_diagonal(r, 1.0)
    return r
