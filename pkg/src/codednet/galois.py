"""Arithmetic over GF(2^m) for m <= 16, plus dense matrix elimination.

Elements are plain integers in [0, 2^m).  Vectors and matrices are numpy
integer arrays.  Multiplication uses log/antilog tables (and a full product
table when m <= 8), built once per field and cached.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

# Conventional irreducible polynomials (bit k is the coefficient of x^k).
DEFAULT_POLYS = {
    1: 0x3, 2: 0x7, 3: 0xB, 4: 0x13, 5: 0x25, 6: 0x43, 7: 0x89, 8: 0x11B,
    9: 0x211, 10: 0x409, 11: 0x805, 12: 0x1053, 13: 0x201B, 14: 0x4443,
    15: 0x8003, 16: 0x1002B,
}


class ZeroInverse(ZeroDivisionError):
    pass


class SingularSystem(ValueError):
    pass


def clmul_mod(a: int, b: int, m: int, poly: int) -> int:
    """Shift-and-add product of a and b reduced modulo poly (reference path)."""
    r = 0
    top = 1 << m
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & top:
            a ^= poly
    return r


def _poly_mod(a: int, b: int) -> int:
    db = b.bit_length() - 1
    while a and a.bit_length() - 1 >= db:
        a ^= b << (a.bit_length() - 1 - db)
    return a


def is_irreducible(poly: int) -> bool:
    """Trial division by every polynomial of degree <= deg/2."""
    deg = poly.bit_length() - 1
    if deg < 1:
        return False
    for d in range(1, deg // 2 + 1):
        for cand in range(1 << d, 1 << (d + 1)):
            if _poly_mod(poly, cand) == 0:
                return False
    return True


@dataclass(frozen=True)
class FieldSpec:
    m: int
    poly: int = 0

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or not 1 <= self.m <= 16:
            raise ValueError(f"field degree must be in 1..16, got {self.m}")
        if self.poly == 0:
            object.__setattr__(self, "poly", DEFAULT_POLYS[int(self.m)])
        if self.poly.bit_length() - 1 != self.m:
            raise ValueError(f"polynomial {self.poly:#x} does not have degree {self.m}")
        if not _irreducible_cached(self.poly):
            raise ValueError(f"polynomial {self.poly:#x} is reducible")

    @property
    def q(self) -> int:
        return 1 << self.m

    @property
    def dtype(self):
        """Smallest unsigned integer type holding one field element."""
        return np.uint8 if self.m <= 8 else np.uint16

    @property
    def tables(self) -> "_Tables":
        return _tables(self.m, self.poly)

    # array helpers -------------------------------------------------------
    def mul(self, a, b):
        """Elementwise product of integer arrays (broadcasting)."""
        return self.tables.mul(a, b)

    def inv(self, a: int) -> int:
        return gf_inv(a, self)

    def random(self, rng, size=None, nonzero=False):
        lo = 1 if nonzero else 0
        return rng.integers(lo, self.q, size=size, dtype=self.dtype)

    def dot(self, coeffs, rows):
        """Linear combination sum_l coeffs[l] * rows[l] for a 2-D rows array."""
        coeffs = np.asarray(coeffs)
        rows = np.asarray(rows)
        if rows.shape[0] == 0:
            return np.zeros(rows.shape[1:], dtype=self.dtype)
        prod = self.mul(coeffs.reshape((-1,) + (1,) * (rows.ndim - 1)), rows)
        return np.bitwise_xor.reduce(prod, axis=0)


def _gf_pow(a: int, e: int, m: int, poly: int) -> int:
    r = 1
    while e:
        if e & 1:
            r = clmul_mod(r, a, m, poly)
        a = clmul_mod(a, a, m, poly)
        e >>= 1
    return r


def _find_generator(m: int, poly: int) -> int:
    order = (1 << m) - 1
    primes, n, p = [], order, 2
    while p * p <= n:
        if n % p == 0:
            primes.append(p)
            while n % p == 0:
                n //= p
        p += 1
    if n > 1:
        primes.append(n)
    for g in range(1, 1 << m):
        if all(_gf_pow(g, order // p, m, poly) != 1 for p in primes):
            return g
    raise ValueError(f"no primitive element for {poly:#x}")


@lru_cache(maxsize=None)
def _irreducible_cached(poly: int) -> bool:
    return is_irreducible(poly)


class _Tables:
    def __init__(self, m: int, poly: int):
        q = 1 << m
        self.q = q
        order = q - 1
        gen = _find_generator(m, poly)
        exp = np.zeros(2 * order + 1, dtype=np.int64)
        log = np.zeros(q, dtype=np.int64)
        x = 1
        for k in range(order):
            exp[k] = x
            log[x] = k
            x = clmul_mod(x, gen, m, poly)
        exp[order:2 * order] = exp[:order]
        exp[2 * order] = exp[0]
        self.exp, self.log, self.order = exp, log, order
        self.flat = None
        if m <= 8:
            # full product table, indexed by (a << 8) | b
            a = np.arange(256)
            la = log[a % q][:, None] + log[a % q][None, :]
            full = exp[la]
            full[0, :] = 0
            full[:, 0] = 0
            full[q:, :] = 0
            full[:, q:] = 0
            self.flat = full.astype(np.uint8).ravel()
        else:
            self.exp16 = exp.astype(np.uint16)
            self.log32 = log.astype(np.int32)
        inv = np.zeros(q, dtype=np.int64)
        nz = np.arange(1, q)
        inv[nz] = exp[(order - log[nz]) % order]
        self.inv = inv

    def mul(self, a, b):
        if self.flat is not None:
            idx = (np.asarray(a, dtype=np.uint16) << 8) | b
            return self.flat[idx]
        a = np.asarray(a)
        b = np.asarray(b)
        r = self.exp16[self.log32[a] + self.log32[b]]
        return np.where((a == 0) | (b == 0), np.uint16(0), r)


@lru_cache(maxsize=None)
def _tables(m: int, poly: int) -> _Tables:
    return _Tables(m, poly)


def _check(a, spec: FieldSpec):
    if not 0 <= int(a) < spec.q:
        raise ValueError(f"element {a} outside GF(2^{spec.m})")


def gf_add(a: int, b: int, spec: FieldSpec) -> int:
    _check(a, spec)
    _check(b, spec)
    return int(a) ^ int(b)


def gf_mul(a: int, b: int, spec: FieldSpec) -> int:
    _check(a, spec)
    _check(b, spec)
    return int(spec.tables.mul(a, b))


def gf_inv(a: int, spec: FieldSpec) -> int:
    _check(a, spec)
    if a == 0:
        raise ZeroInverse("zero has no multiplicative inverse")
    return int(spec.tables.inv[int(a)])


@dataclass
class FieldMatrix:
    """Row-major matrix over GF(2^m)."""
    spec: FieldSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.int64))
        if self.data.size and (self.data.min() < 0 or self.data.max() >= self.spec.q):
            raise ValueError("matrix entries outside the field")

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]


def rref(data: np.ndarray, spec: FieldSpec, ncols: int | None = None):
    """Reduced row echelon form.  Returns (matrix, pivot columns).

    Only the first ``ncols`` columns are used for pivoting, which allows an
    augmented matrix to be reduced in one pass.
    """
    A = np.array(data, dtype=np.int64, copy=True)
    rows, cols = A.shape
    ncols = cols if ncols is None else ncols
    inv = spec.tables.inv
    pivots = []
    r = 0
    for c in range(ncols):
        if r == rows:
            break
        nz = np.nonzero(A[r:, c])[0]
        if nz.size == 0:
            continue
        p = r + nz[0]
        if p != r:
            A[[r, p]] = A[[p, r]]
        A[r] = spec.mul(inv[A[r, c]], A[r])
        col = A[:, c].copy()
        col[r] = 0
        hit = np.nonzero(col)[0]
        if hit.size:
            A[hit] ^= spec.mul(col[hit][:, None], A[r][None, :])
        pivots.append(c)
        r += 1
    return A, pivots


def mat_rank(M: FieldMatrix) -> int:
    if M.data.size == 0:
        return 0
    return len(rref(M.data, M.spec)[1])


def gauss_solve(A: FieldMatrix, B: FieldMatrix) -> FieldMatrix:
    """Solve A X = B for square nonsingular A."""
    if A.rows != A.cols:
        raise ValueError("coefficient matrix must be square")
    if B.rows != A.rows:
        raise ValueError("dimension mismatch")
    aug = np.hstack([A.data, B.data])
    R, piv = rref(aug, A.spec, ncols=A.cols)
    if len(piv) < A.cols:
        raise SingularSystem("coefficient matrix is singular")
    return FieldMatrix(A.spec, R[:, A.cols:])


def full_rank_prob(n: int, K: int, q: int) -> float:
    """Probability that a uniform n x K matrix over F_q has rank K."""
    if K < 0 or n < 0:
        raise ValueError("sizes must be nonnegative")
    if n < K:
        return 0.0
    p = 1.0
    for k in range(n - K + 1, n + 1):
        p *= 1.0 - float(q) ** (-k)
    return p
