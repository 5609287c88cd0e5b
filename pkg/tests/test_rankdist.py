"""Rank-distribution analytics tests."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batskit.gf import GF, RandomStream, random_matrix
from batskit.rankdist import (
    EffectiveRankDistribution,
    RankDistribution,
    effective_dist,
    empirical_rank_dist,
    erasure_rank_dist,
    expected_rank,
    line_rank_dist,
    zeta,
    zeta_dkr,
)


def random_h(M, rng):
    h = rng.random(M + 1)
    return RankDistribution(M, h / h.sum())


# -- zeta ------------------------------------------------------------------

def test_zeta_base_cases():
    assert zeta(5, 0, 2) == 1.0
    assert zeta(1, 1, 2) == 0.5
    assert zeta(2, 3, 2) == 0.0


def test_zeta_22_matches_invertible_count():
    # 6 of 16 binary 2x2 matrices are invertible
    assert zeta(2, 2, 2) == pytest.approx(6 / 16, abs=1e-15)


def test_zeta_exhaustive_full_rank_probability():
    """zeta_r^m = Pr{random r x m over GF(2) has rank r}, checked by enumeration."""
    f = GF(1)
    for r, m in [(1, 2), (2, 2), (2, 3), (3, 3)]:
        total = 0
        full = 0
        for bits in itertools.product([0, 1], repeat=r * m):
            A = np.array(bits, dtype=np.uint8).reshape(r, m)
            total += 1
            full += f.rank(A) == r
        assert zeta(m, r, 2) == pytest.approx(full / total, abs=1e-12)


def test_zeta_dkr_normalization():
    for d in range(1, 5):
        for k in range(1, 5):
            s = sum(zeta_dkr(d, k, r, 2) for r in range(min(d, k) + 1))
            assert s == pytest.approx(1.0, abs=1e-12)
    assert zeta_dkr(3, 2, 3, 2) == 0.0


def test_zeta_dkr_exhaustive_gf2():
    """zeta_r^{d,k} vs exhaustive product rank law at M=2, q=2."""
    f = GF(1)
    M, d, k = 2, 1, 1
    # H: fixed M x k matrix of rank k; G ranges over all d x M
    H = np.array([[1], [0]], dtype=np.uint8)
    counts = {0: 0, 1: 0}
    for bits in itertools.product([0, 1], repeat=d * M):
        G = np.array(bits, dtype=np.uint8).reshape(d, M)
        counts[f.rank(f.matmul(G, H))] += 1
    assert zeta_dkr(1, 1, 1, 2) == pytest.approx(counts[1] / 4, abs=1e-12)
    assert zeta_dkr(1, 1, 0, 2) == pytest.approx(counts[0] / 4, abs=1e-12)
    assert zeta_dkr(1, 1, 1, 2) == 0.5


def test_zeta_dkr_monte_carlo_q256():
    """Product-rank law vs simulation for a random-G, fixed-rank-H pair."""
    f = GF(8)
    s = RandomStream(5)
    M, d, k = 8, 5, 6
    trials = 4000
    counts = np.zeros(M + 1)
    while True:
        H = random_matrix(f, M, k, s)
        if f.rank(H) == k:
            break
    for _ in range(trials):
        G = random_matrix(f, d, M, s)
        counts[f.rank(f.matmul(G, H))] += 1
    emp = counts / trials
    law = np.array([zeta_dkr(d, k, r, 256) for r in range(M + 1)])
    assert np.abs(emp - law).sum() / 2 < 0.02


# -- effective distribution ------------------------------------------------

def test_effective_dist_m1():
    h = RankDistribution(1, np.array([0.3, 0.7]))
    eff = effective_dist(h, 16)
    assert eff.hbar[0] == pytest.approx((1 - 1 / 16) * 0.7, abs=1e-14)
    assert eff.hbar_prime[0] == pytest.approx((1 - 1 / 16) * 0.7, abs=1e-14)


def test_effective_dist_zero_rank():
    h = RankDistribution(3, np.array([1.0, 0, 0, 0]))
    eff = effective_dist(h, 256)
    assert np.all(eff.hbar == 0)
    assert np.all(eff.hbar_prime == 0)


@given(st.integers(0, 10**6))
@settings(max_examples=100, deadline=None)
def test_effective_tail_and_rate_bound(seed):
    """hbar'_r = sum_{k>=r} hbar_k exactly; sum r hbar_r <= sum r h_r."""
    rng = np.random.default_rng(seed)
    M = int(rng.integers(1, 20))
    q = int(rng.choice([2, 4, 16, 256]))
    h = random_h(M, rng)
    eff = effective_dist(h, q)
    tail = np.cumsum(eff.hbar[::-1])[::-1]
    assert np.allclose(eff.hbar_prime, tail, atol=1e-12)
    assert np.all(np.diff(eff.hbar_prime) <= 1e-12)
    assert np.all((eff.hbar >= -1e-15) & (eff.hbar <= 1 + 1e-12))
    assert eff.weighted_sum() <= expected_rank(h) + 1e-12


# -- link and line laws ----------------------------------------------------

def test_erasure_rank_dist_cases():
    d = erasure_rank_dist(2, 0.5)
    assert np.allclose(d.h, [0.25, 0.5, 0.25])
    assert np.allclose(erasure_rank_dist(4, 0.0).h, [0, 0, 0, 0, 1])
    assert np.allclose(erasure_rank_dist(4, 1.0).h, [1, 0, 0, 0, 0])


def test_line_single_hop_reduces():
    a = line_rank_dist(8, [0.3], 256)
    b = erasure_rank_dist(8, 0.3)
    assert np.allclose(a.h, b.h, atol=1e-14)


def test_line_two_hop_table_value():
    """Expected effective-rank sum for the 2-hop reference setup."""
    h = line_rank_dist(16, [0.2, 0.1], 256)
    eff = effective_dist(h, 256)
    assert eff.weighted_sum() == pytest.approx(12.57, abs=0.02)


def test_line_monotone_degradation():
    rng = np.random.default_rng(3)
    eps = [0.2]
    for _ in range(4):
        before = expected_rank(line_rank_dist(8, eps, 16))
        eps = eps + [float(rng.uniform(0, 0.5))]
        after = expected_rank(line_rank_dist(8, eps, 16))
        assert after <= before + 1e-12


def test_line_normalization_large_m():
    h = line_rank_dist(64, [0.2, 0.2, 0.2], 256)
    assert h.h.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(h.h >= 0)


def test_normalized_rank_trend():
    """Normalized expected rank nondecreasing in M; exceeds 0.75 at M=32."""
    vals = {}
    for M in [1, 2, 4, 8, 16, 32, 64]:
        h = line_rank_dist(M, [0.2, 0.2], 256)
        vals[M] = expected_rank(h) / M
    seq = [vals[M] for M in [1, 2, 4, 8, 16, 32, 64]]
    assert all(b >= a - 1e-9 for a, b in zip(seq, seq[1:]))
    assert vals[32] > 0.75


# -- empirical -------------------------------------------------------------

def test_empirical_basic():
    d = empirical_rank_dist([2, 2, 2], 2)
    assert np.allclose(d.h, [0, 0, 1])
    d = empirical_rank_dist([0, 1], 1)
    assert np.allclose(d.h, [0.5, 0.5])
    with pytest.raises(ValueError):
        empirical_rank_dist([], 2)


def test_empirical_lln():
    rng = np.random.default_rng(9)
    h = random_h(6, rng)
    draws = rng.choice(7, size=100_000, p=h.h)
    est = empirical_rank_dist(draws, 6)
    assert np.abs(est.h - h.h).sum() / 2 < 0.01
