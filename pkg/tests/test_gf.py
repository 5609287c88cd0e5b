"""Field arithmetic and matrix kernel tests."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batskit.gf import GF, REDUCTION_POLY, RandomStream, _poly_mul, random_matrix

FIELDS = [GF(m) for m in (1, 2, 4, 8)]


@pytest.mark.parametrize("f", FIELDS)
def test_add_self_is_zero(f):
    xs = np.arange(f.q, dtype=np.uint8)
    assert np.all(f.add(xs, xs) == 0)


@pytest.mark.parametrize("f", FIELDS)
def test_mul_identity(f):
    xs = np.arange(f.q, dtype=np.uint8)
    assert np.all(f.mul(1, xs) == xs)


def test_all_inverses_q256():
    f = GF(8)
    xs = np.arange(1, 256, dtype=np.uint8)
    assert np.all(f.mul(xs, f.inv(xs)) == 1)


def test_inv_zero_errors():
    with pytest.raises(ZeroDivisionError):
        GF(8).inv(0)
    with pytest.raises(ZeroDivisionError):
        GF(2).div(1, 0)


@pytest.mark.parametrize("m", [1, 2, 4])
def test_tables_match_polynomial_arithmetic(m):
    """Exhaustive brute force against carry-less polynomial product."""
    f = GF(m)
    poly = REDUCTION_POLY[m]
    for a in range(f.q):
        for b in range(f.q):
            assert int(f.mul(a, b)) == _poly_mul(a, b, poly, m)


def test_arith_dispatch():
    f = GF(4)
    assert int(f.arith(5, 5, "add")) == 0
    assert int(f.arith(1, 7, "mul")) == 7
    assert int(f.arith(0, 3, "inv")) == int(f.inv(3))
    assert int(f.arith(f.mul(6, 3), 3, "div")) == 6


# -- rank ------------------------------------------------------------------

def test_rank_identity_and_zero():
    f = GF(8)
    assert f.rank(np.eye(5, dtype=np.uint8)) == 5
    assert f.rank(np.zeros((3, 4), dtype=np.uint8)) == 0
    assert f.rank(np.zeros((0, 4), dtype=np.uint8)) == 0


def test_rank_all_2x2_gf2():
    """Exactly 6 of the 16 binary 2x2 matrices are invertible (6/16 = 0.375)."""
    f = GF(1)
    full = sum(
        1 for bits in itertools.product([0, 1], repeat=4)
        if f.rank(np.array(bits, dtype=np.uint8).reshape(2, 2)) == 2)
    assert full == 6


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4, 8]))
@settings(max_examples=40, deadline=None)
def test_rank_product_bound(seed, m):
    f = GF(m)
    s = RandomStream(seed)
    A = random_matrix(f, 5, 4, s)
    B = random_matrix(f, 4, 6, s)
    assert f.rank(f.matmul(A, B)) <= min(f.rank(A), f.rank(B))


# -- solve -----------------------------------------------------------------

def test_solve_identity():
    f = GF(8)
    Y = np.array([[1, 2, 3], [4, 5, 6]], dtype=np.uint8)
    B = f.solve_left(np.eye(3, dtype=np.uint8), Y)
    assert np.array_equal(B, Y)


def test_solve_scalar_case():
    # d=1, A=[g 0]: B = Y[:, 0] * g^{-1}
    f = GF(8)
    g = np.uint8(97)
    A = np.array([[g, 0]], dtype=np.uint8)
    B_true = np.array([[13], [200]], dtype=np.uint8)
    Y = f.matmul(B_true, A)
    B = f.solve_left(A, Y)
    assert np.array_equal(B, B_true)
    assert np.array_equal(B[:, 0], f.mul(Y[:, 0], f.inv(g)))


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4, 8]),
       st.integers(1, 5), st.integers(1, 4))
@settings(max_examples=60, deadline=None)
def test_solve_round_trip(seed, m, extra_cols, d):
    f = GF(m)
    s = RandomStream(seed)
    c = d + extra_cols
    A = random_matrix(f, d, c, s)
    if f.rank(A) < d:
        return
    B = random_matrix(f, 3, d, s)
    assert np.array_equal(f.solve_left(A, f.matmul(B, A)), B)


def test_solve_rank_deficient_errors():
    f = GF(2)
    A = np.array([[1, 2], [1, 2]], dtype=np.uint8)
    with pytest.raises(np.linalg.LinAlgError):
        f.solve_left(A, np.zeros((1, 2), dtype=np.uint8))


# -- random streams --------------------------------------------------------

def test_stream_determinism():
    f = GF(8)
    a = random_matrix(f, 4, 7, RandomStream(123, 9))
    b = random_matrix(f, 4, 7, RandomStream(123, 9))
    assert np.array_equal(a, b)
    c = random_matrix(f, 4, 7, RandomStream(123, 10))
    assert not np.array_equal(a, c)


def test_stream_derive_independent():
    s = RandomStream(42)
    a = s.derive("batch", 0).integers(0, 2**31, size=8)
    b = s.derive("batch", 1).integers(0, 2**31, size=8)
    a2 = RandomStream(42).derive("batch", 0).integers(0, 2**31, size=8)
    assert np.array_equal(a, a2)
    assert not np.array_equal(a, b)


def test_random_rank2_fraction_gf2():
    """Pr{rank=2} for random 2x2 over GF(2) is 6/16 = 0.375."""
    f = GF(1)
    s = RandomStream(7)
    mats = s.gen.integers(0, 2, size=(100_000, 2, 2), dtype=np.uint8)
    # rank 2 iff det = ad + bc = 1 over GF(2)
    det = (mats[:, 0, 0] & mats[:, 1, 1]) ^ (mats[:, 0, 1] & mats[:, 1, 0])
    frac = det.mean()
    assert abs(frac - 0.375) < 0.01


def test_random_element_uniformity_q256():
    f = GF(8)
    s = RandomStream(11)
    draws = random_matrix(f, 1000, 1000, s).ravel()
    counts = np.bincount(draws, minlength=256)
    expected = draws.size / 256
    chi2 = ((counts - expected) ** 2 / expected).sum()
    # 99% band for chi-square with 255 dof: [~200, ~311]
    from scipy.stats import chi2 as chi2_dist
    lo, hi = chi2_dist.ppf([0.005, 0.995], 255)
    assert lo < chi2 < hi
