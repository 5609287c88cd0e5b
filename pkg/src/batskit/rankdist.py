"""Closed-form probability machinery over transfer-matrix ranks.

Covers the zeta products governing ranks of random matrix products, the
effective rank distribution (the law of the residual degree at which a
batch first becomes decodable), the erasure-link binomial law, the line
network recursion, and empirical histograms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import binom


@dataclass(frozen=True)
class RankDistribution:
    """Probability vector h_0..h_M over ranks of an M-column transfer matrix."""

    M: int
    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        object.__setattr__(self, "h", h)
        if h.shape != (self.M + 1,):
            raise ValueError(f"h must have length M+1={self.M + 1}")
        if np.any(h < -1e-12):
            raise ValueError("negative rank probability")
        if abs(h.sum() - 1.0) > 1e-9:
            raise ValueError(f"rank probabilities sum to {h.sum()}, not 1")

    def to_json_dict(self) -> dict:
        return {"M": self.M, "h": [float(v) for v in self.h]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "RankDistribution":
        return cls(int(d["M"]), np.asarray(d["h"], dtype=float))


@dataclass(frozen=True)
class EffectiveRankDistribution:
    """hbar[r-1] = hbar_r and hbar_prime[r-1] = hbar'_r for r = 1..M."""

    hbar: np.ndarray
    hbar_prime: np.ndarray

    @property
    def M(self) -> int:
        return len(self.hbar)

    def weighted_sum(self) -> float:
        """sum_r r * hbar_r, the upper-bound numerator for the design rate."""
        r = np.arange(1, self.M + 1)
        return float(np.dot(r, self.hbar))


def _q_pow_neg(q: int, e: float) -> float:
    """q^{-e} without overflow; underflow to exact 0 is accepted."""
    x = -e * math.log2(q)
    if x < -1070:
        return 0.0
    return 2.0 ** x


def zeta(m: int, r: int, q: int) -> float:
    """Probability that a totally random r x m matrix has full rank r.

    zeta_r^m = prod_{j=0}^{r-1} (1 - q^{j-m}); 1 at r = 0; 0 for r > m.
    """
    if r < 0:
        raise ValueError("r must be nonnegative")
    if r == 0:
        return 1.0
    if r > m:
        return 0.0
    out = 1.0
    for j in range(r):
        out *= 1.0 - _q_pow_neg(q, m - j)
    return out


def zeta_dkr(d: int, k: int, r: int, q: int) -> float:
    """Pr{rank(G H) = r} for G totally random d x M and rank(H) = k.

    zeta_r^{d,k} = zeta_r^d zeta_r^k / (zeta_r^r q^{(d-r)(k-r)}).
    """
    if r > min(d, k) or r < 0:
        return 0.0
    num = zeta(d, r, q) * zeta(k, r, q)
    den = zeta(r, r, q)
    return num / den * _q_pow_neg(q, (d - r) * (k - r))


@lru_cache(maxsize=32)
def _zeta_dkr_table(M: int, q: int) -> np.ndarray:
    """Z[i, j, r] = zeta_r^{i,j} for 0 <= i, j, r <= M."""
    Z = np.zeros((M + 1, M + 1, M + 1))
    for i in range(M + 1):
        for j in range(M + 1):
            for r in range(min(i, j) + 1):
                Z[i, j, r] = zeta_dkr(i, j, r, q)
    return Z


def effective_dist(h: RankDistribution, q: int) -> EffectiveRankDistribution:
    """Effective rank distribution (hbar_r, hbar'_r) of h.

    hbar_r  = sum_{i>=r} (zeta_r^i / q^{i-r}) h_i  : the batch first becomes
              decodable when its residual degree reaches r.
    hbar'_r = sum_{k>=r} zeta_r^k h_k              : the batch is decodable at
              residual degree r. The two are linked by hbar'_r = sum_{k>=r} hbar_k.
    """
    M = h.M
    hbar = np.zeros(M)
    hbar_p = np.zeros(M)
    for r in range(1, M + 1):
        acc = 0.0
        accp = 0.0
        for i in range(r, M + 1):
            z = zeta(i, r, q)
            acc += z * _q_pow_neg(q, i - r) * h.h[i]
            accp += z * h.h[i]
        hbar[r - 1] = acc
        hbar_p[r - 1] = accp
    return EffectiveRankDistribution(hbar, hbar_p)


def expected_rank(h: RankDistribution) -> float:
    return float(np.dot(np.arange(h.M + 1), h.h))


def erasure_rank_dist(M: int, eps: float) -> RankDistribution:
    """Rank law of the diagonal erasure matrix of one memoryless link."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must be in [0, 1]")
    h = binom.pmf(np.arange(M + 1), M, 1.0 - eps)
    h = h / h.sum()
    return RankDistribution(M, h)


def line_rank_dist(M: int, eps_list, q: int) -> RankDistribution:
    """End-to-end rank distribution of a line network with per-hop erasures.

    One hop is the binomial law; each further hop with erasure eps composes
    h_r <- sum_{i,j} h_i Binom(M, j; 1-eps) zeta_r^{i,j}.
    """
    eps_list = list(eps_list)
    if not eps_list:
        raise ValueError("need at least one hop")
    h = erasure_rank_dist(M, eps_list[0]).h
    Z = _zeta_dkr_table(M, q)
    for eps in eps_list[1:]:
        b = binom.pmf(np.arange(M + 1), M, 1.0 - eps)
        h = np.einsum("i,j,ijr->r", h, b, Z)
        h = np.clip(h, 0.0, None)
        h = h / h.sum()
    return RankDistribution(M, h)


def empirical_rank_dist(ranks, M: int) -> RankDistribution:
    """Normalized histogram of observed transfer-matrix ranks."""
    ranks = np.asarray(list(ranks), dtype=int)
    if ranks.size == 0:
        raise ValueError("no observed ranks")
    if ranks.min() < 0 or ranks.max() > M:
        raise ValueError("rank outside 0..M")
    counts = np.bincount(ranks, minlength=M + 1).astype(float)
    return RankDistribution(M, counts / counts.sum())
