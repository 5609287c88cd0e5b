"""Exact arithmetic and dense linear algebra over GF(2^m), m in {1, 2, 4, 8}.

Matrices are numpy uint8 arrays with one field element per entry.
Multiplication uses log/antilog tables built at import of each field size;
the table for a given m is constructed once and cached.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

# Canonical reduction polynomials (bit i = coefficient of x^i).
# m=8 is the AES polynomial x^8 + x^4 + x^3 + x + 1.
REDUCTION_POLY = {1: 0b11, 2: 0b111, 4: 0b10011, 8: 0b100011011}


def _poly_mul(a: int, b: int, poly: int, m: int) -> int:
    """Carry-less polynomial product reduced mod poly."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if (a >> m) & 1:
            a ^= poly
    return r


class GF:
    """A finite field GF(2^m) with vectorized table-driven arithmetic."""

    _cache: dict[int, "GF"] = {}

    def __new__(cls, m: int):
        if m not in REDUCTION_POLY:
            raise ValueError(f"unsupported field width m={m}; need m in {{1,2,4,8}}")
        if m in cls._cache:
            return cls._cache[m]
        self = super().__new__(cls)
        self._build(m)
        cls._cache[m] = self
        return self

    def _build(self, m: int) -> None:
        self.m = m
        self.q = 1 << m
        self.poly = REDUCTION_POLY[m]
        q = self.q
        # find a multiplicative generator by brute force
        gen = None
        for g in range(2, q) or [1]:
            seen = set()
            x = 1
            for _ in range(q - 1):
                seen.add(x)
                x = _poly_mul(x, g, self.poly, m)
            if len(seen) == q - 1:
                gen = g
                break
        if gen is None:
            gen = 1  # GF(2): the single nonzero element
        exp = np.zeros(2 * (q - 1), dtype=np.uint8)
        log = np.zeros(q, dtype=np.int32)
        x = 1
        for i in range(q - 1):
            exp[i] = x
            exp[i + q - 1] = x
            log[x] = i
            x = _poly_mul(x, gen, self.poly, m)
        self._exp = exp
        self._log = log
        self.generator = gen

    # -- scalar / elementwise arithmetic -------------------------------------

    def add(self, a, b):
        return np.bitwise_xor(a, b)

    def mul(self, a, b):
        a = np.asarray(a, dtype=np.uint8)
        b = np.asarray(b, dtype=np.uint8)
        prod = self._exp[self._log[a] + self._log[b]]
        out = np.where((a == 0) | (b == 0), 0, prod).astype(np.uint8)
        return out if out.shape else np.uint8(out)

    def inv(self, a):
        a_arr = np.asarray(a, dtype=np.uint8)
        if np.any(a_arr == 0):
            raise ZeroDivisionError("inverse of zero in GF(q)")
        out = self._exp[(self.q - 1 - self._log[a_arr]) % (self.q - 1)]
        return out if out.shape else np.uint8(out)

    def div(self, a, b):
        return self.mul(a, self.inv(b))

    def arith(self, a, b, op: str):
        """Single dispatch point for {add, mul, inv, div}."""
        if op == "add":
            return self.add(a, b)
        if op == "mul":
            return self.mul(a, b)
        if op == "inv":
            return self.inv(b)
        if op == "div":
            return self.div(a, b)
        raise ValueError(f"unknown op {op!r}")

    # -- matrices ------------------------------------------------------------

    def matmul(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Exact product of uint8 matrices over the field."""
        A = np.ascontiguousarray(A, dtype=np.uint8)
        B = np.ascontiguousarray(B, dtype=np.uint8)
        n, k = A.shape
        k2, p = B.shape
        if k != k2:
            raise ValueError(f"shape mismatch {A.shape} x {B.shape}")
        if self.m == 1:
            return ((A.astype(np.int64) @ B.astype(np.int64)) & 1).astype(np.uint8)
        C = np.zeros((n, p), dtype=np.uint8)
        logA = self._log[A]
        logB = self._log[B]
        for t in range(k):
            col = A[:, t]
            row = B[t, :]
            if not col.any() or not row.any():
                continue
            prod = self._exp[logA[:, t, None] + logB[None, t, :]]
            prod[col == 0, :] = 0
            prod[:, row == 0] = 0
            C ^= prod
        return C

    def rref(self, A: np.ndarray) -> tuple[np.ndarray, list[int]]:
        """Reduced row echelon form; returns (R, pivot column list)."""
        R = np.array(A, dtype=np.uint8, copy=True)
        if R.ndim != 2:
            raise ValueError("matrix expected")
        rows, cols = R.shape
        pivots: list[int] = []
        r = 0
        for c in range(cols):
            if r == rows:
                break
            nz = np.nonzero(R[r:, c])[0]
            if nz.size == 0:
                continue
            p = r + nz[0]
            if p != r:
                R[[r, p]] = R[[p, r]]
            piv = R[r, c]
            if piv != 1:
                R[r] = self.mul(R[r], self.inv(piv))
            mask = (R[:, c] != 0)
            mask[r] = False
            if mask.any():
                factors = R[mask, c]
                R[mask] ^= self.mul(factors[:, None], R[r][None, :])
            pivots.append(c)
            r += 1
        return R, pivots

    def rank(self, A: np.ndarray) -> int:
        A = np.asarray(A, dtype=np.uint8)
        if A.size == 0:
            return 0
        return len(self.rref(A)[1])

    def solve_left(self, A: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Solve B @ A = Y for B, requiring A (d x c) to have full row rank d.

        Y is (t x c); the result is (t x d). Raises on rank-deficient A,
        mirroring the decodability precondition of the peeling decoder.
        """
        A = np.asarray(A, dtype=np.uint8)
        Y = np.asarray(Y, dtype=np.uint8)
        d, c = A.shape
        t = Y.shape[0]
        if Y.shape[1] != c:
            raise ValueError(f"shape mismatch A {A.shape}, Y {Y.shape}")
        aug = np.concatenate([A.T, Y.T], axis=1)  # c x (d + t)
        R, pivots = self.rref(aug)
        lead = [p for p in pivots if p < d]
        if len(lead) < d:
            raise np.linalg.LinAlgError(
                f"rank-deficient system: rank {len(lead)} < {d}")
        if any(p >= d for p in pivots):
            raise np.linalg.LinAlgError("inconsistent system")
        B = np.zeros((t, d), dtype=np.uint8)
        for i, p in enumerate(lead):
            B[:, p] = R[i, d:]
        return B


def _derive_key(tag: str, index: int) -> int:
    digest = hashlib.blake2b(
        f"{tag}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class RandomStream:
    """Counter-based random stream keyed by (master seed, domain key).

    Backed by the Philox bit generator, so the output sequence is a pure
    function of (master_seed, key, counter). Distinct keys give independent
    streams; a batch's randomness is recomputable from the master seed and
    the batch id alone.
    """

    master_seed: int
    key: int = 0
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        bitgen = np.random.Philox(
            key=np.array([self.master_seed & (2**64 - 1),
                          self.key & (2**64 - 1)], dtype=np.uint64))
        self.gen = np.random.Generator(bitgen)

    def derive(self, tag: str, index: int = 0) -> "RandomStream":
        """Independent child stream for (tag, index), e.g. ("batch", batch_id)."""
        return RandomStream(self.master_seed,
                            self.key ^ _derive_key(tag, index))

    def integers(self, low, high=None, size=None, dtype=np.int64):
        return self.gen.integers(low, high, size=size, dtype=dtype)

    def uniform(self, size=None):
        return self.gen.random(size)


def random_matrix(field_: GF, rows: int, cols: int,
                  stream: RandomStream) -> np.ndarray:
    """Totally random matrix: each entry i.i.d. uniform over GF(q)."""
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols), dtype=np.uint8)
    return stream.gen.integers(0, field_.q, size=(rows, cols), dtype=np.uint8)
