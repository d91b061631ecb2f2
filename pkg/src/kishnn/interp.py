"""Polynomial interpolation over Z_P and low-depth ciphertext evaluation.

Any integer function on [0, P) becomes a degree P-1 coefficient table;
tables are evaluated on ciphertexts with a baby-step/giant-step split so
the non-scalar multiplication count stays O(sqrt(P)) and the depth
O(log P).  Includes the named tables the classifier needs, among them the
upper-half sign test that realizes strict comparison.
"""

from __future__ import annotations

import functools
import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import he_sim
from .he_sim import Cipher
from .ring import ParameterError, RingParams

_CACHE_MAGIC = b"KPLT"


@dataclass(frozen=True)
class PolyTable:
    """Dense coefficient table of one interpolated function over Z_modulus."""

    modulus: int
    coeffs: tuple
    name: str

    def eval_plain(self, x: int) -> int:
        """Direct plaintext evaluation (Horner)."""
        acc = 0
        for c in reversed(self.coeffs):
            acc = (acc * x + c) % self.modulus
        return acc

    def degree(self) -> int:
        for i in range(len(self.coeffs) - 1, -1, -1):
            if self.coeffs[i] != 0:
                return i
        return 0


def lagrange_table(f, params: RingParams, name: str = "f") -> PolyTable:
    """Interpolate f over all of Z_P.

    With the full residue domain the master polynomial is x^P - x and all
    interpolation denominators reduce to -1, so the explicit formula
    collapses to alpha_j = -sum_i f(i) * i^(P-1-j) for j >= 1 and
    alpha_0 = f(0).
    """
    P = params.modulus
    y = np.array([int(f(i)) % P for i in range(P)], dtype=np.int64)
    idx = np.arange(P, dtype=np.int64)
    w = np.zeros(P, dtype=np.int64)  # w[e] = sum_i y_i * i^e
    pw = np.ones(P, dtype=np.int64)  # i^e, with 0^0 = 1
    for e in range(P):
        w[e] = int((y * pw).sum()) % P
        pw = (pw * idx) % P
    coeffs = np.empty(P, dtype=np.int64)
    coeffs[0] = y[0]
    for j in range(1, P):
        coeffs[j] = (-w[P - 1 - j]) % P
    return PolyTable(modulus=P, coeffs=tuple(int(c) for c in coeffs), name=name)


def _balanced_powers(x: Cipher, top: int, ring: RingParams) -> dict:
    """x^1 .. x^top with a product tree, depth(x^j) = depth(x)+ceil(log2 j)."""
    xp = {1: x}
    for j in range(2, top + 1):
        xp[j] = he_sim.mul(xp[j // 2], xp[(j + 1) // 2], ring)
    return xp


def eval_poly_ps(table: PolyTable, x: Cipher, params: RingParams) -> Cipher:
    """Baby-step/giant-step evaluation of an interpolated table.

    Block size ~ sqrt(degree+1); block contents use only plaintext-scalar
    multiplications, blocks are combined through precomputed giant powers,
    keeping non-scalar gates <= 3*ceil(sqrt(P)) and depth <= log2(P)+4.
    """
    if table.modulus != params.modulus:
        raise ParameterError("table interpolated over a different ring")
    deg = table.degree()
    if deg == 0:
        return he_sim.embed_like(x, np.full(x.size, table.coeffs[0],
                                            dtype=np.int64))
    s = math.isqrt(deg)
    if s * s < deg + 1:
        s += 1
    t = -(-(deg + 1) // s)
    kmax = min(s, deg)
    xp = _balanced_powers(x, kmax, ring=params)
    # Block i holds coefficients c[i*s] .. c[i*s+s-1]; the x^j weights are
    # plaintext, so the whole block matrix is one free linear combination.
    weights = np.zeros((t, kmax), dtype=np.int64)
    consts = np.zeros(t, dtype=np.int64)
    for i in range(t):
        consts[i] = table.coeffs[i * s]
        for j in range(1, s):
            k = i * s + j
            if k <= deg:
                weights[i, j - 1] = table.coeffs[k]
    blocks = he_sim.linear_combine([xp[j] for j in range(1, kmax + 1)],
                                   weights, params)
    blocks = [he_sim.add(b, int(consts[i]), params)
              for i, b in enumerate(blocks)]
    if t == 1:
        return blocks[0]
    yp = _balanced_powers(xp[s], t - 1, ring=params)
    acc = blocks[0]
    for i in range(1, t):
        acc = he_sim.add(acc, he_sim.mul(blocks[i], yp[i], params), params)
    return acc


def _nearest_isqrt(v: int) -> int:
    r = math.isqrt(v)
    return r + 1 if v - r * r > r else r


def _round_div(a: int, b: int) -> int:
    return (2 * a + b) // (2 * b)


@dataclass(frozen=True)
class NamedTables:
    """The interpolated polynomials used by the classifier circuit."""

    sqrt: PolyTable
    square_div_p: PolyTable
    is_zero: PolyTable
    sqrt_plus_p: PolyTable
    sqrt_times_p: PolyTable
    is_neg: PolyTable

    def all(self):
        return (self.sqrt, self.square_div_p, self.is_zero,
                self.sqrt_plus_p, self.sqrt_times_p, self.is_neg)


@functools.lru_cache(maxsize=8)
def build_named_tables(params: RingParams) -> NamedTables:
    P = params.modulus
    p = params.coord_bound

    def sqrt_f(x):
        return _nearest_isqrt(x)

    def square_div_p_f(x):
        return _round_div(x * x, p)

    def is_zero_f(x):
        return 1 if x == 0 else 0

    def sqrt_plus_p_f(x):
        # Upper-half arguments are negative representatives; the shifted
        # square root must see p + signed(x), else the digit-couple branch
        # for a negative low difference breaks.
        v = p + params.signed(x)
        return _nearest_isqrt(v) if v >= 0 else 0

    def sqrt_times_p_f(x):
        return _nearest_isqrt(x * p)

    def is_neg_f(x):
        return 1 if x > P / 2 else 0

    return NamedTables(
        sqrt=lagrange_table(sqrt_f, params, "sqrt"),
        square_div_p=lagrange_table(square_div_p_f, params, "square_div_p"),
        is_zero=lagrange_table(is_zero_f, params, "is_zero"),
        sqrt_plus_p=lagrange_table(sqrt_plus_p_f, params, "sqrt_plus_p"),
        sqrt_times_p=lagrange_table(sqrt_times_p_f, params, "sqrt_times_p"),
        is_neg=lagrange_table(is_neg_f, params, "is_neg"),
    )


def is_smaller(x: Cipher, y, params: RingParams) -> Cipher:
    """Strict encrypted comparison bit: 1 iff value(x) < value(y).

    Realized as the upper-half test on x - y; both values must lie in
    [0, dist_bound] so the difference keeps its sign in the ring.
    """
    tables = build_named_tables(params)
    diff = he_sim.sub(x, y, params)
    return eval_poly_ps(tables.is_neg, diff, params)


def save_table(table: PolyTable, path) -> None:
    """Binary cache: magic, modulus, name hash, then 8-byte LE coefficients."""
    name_hash = hashlib.blake2b(table.name.encode(), digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<Q", table.modulus))
        fh.write(name_hash)
        for c in table.coeffs:
            fh.write(struct.pack("<Q", c))


def load_table(path, name: str) -> PolyTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CACHE_MAGIC:
        raise ParameterError("bad table cache magic")
    modulus = struct.unpack_from("<Q", blob, 4)[0]
    name_hash = hashlib.blake2b(name.encode(), digest_size=8).digest()
    if blob[12:20] != name_hash:
        raise ParameterError("table cache holds a different function")
    expect = 20 + 8 * modulus
    if len(blob) != expect:
        raise ParameterError("table cache truncated")
    coeffs = struct.unpack_from(f"<{modulus}Q", blob, 20)
    return PolyTable(modulus=modulus, coeffs=tuple(coeffs), name=name)
