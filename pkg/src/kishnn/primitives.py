"""Probabilistic building blocks of the classifier circuit.

The L1 distance sub-circuit, the doubly-blinded coin toss (success
probability depends on a ciphertext, outcome is a ciphertext) and the
coin-sum moment estimator built from it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import he_sim, interp
from .he_sim import Cipher
from .ring import ParameterError, RingParams

# Plaintext-side saturation diagnostic; reads hidden slot values, so it is
# only honored when the test trapdoor is switched on.
_diagnostics = {"enabled": False, "saturated_coins": 0}


def enable_diagnostics(on: bool = True) -> None:
    _diagnostics["enabled"] = on
    _diagnostics["saturated_coins"] = 0


def saturated_coin_count() -> int:
    return _diagnostics["saturated_coins"]


def derive_seed(base: int, label: str) -> int:
    """Named sub-stream seed; all randomness flows from one base seed."""
    h = hashlib.blake2b(f"{base}:{label}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class CoinSpec:
    """Parameters of one batch of doubly-blinded coins.

    f names an increasing invertible integer function; m is the
    probability denominator, so a coin on x lands 1 with probability
    min(f(x), m) / m.
    """

    f: str  # "identity" | "square"
    m: int
    rng_seed: int

    def __post_init__(self):
        if self.f not in ("identity", "square"):
            raise ParameterError(f"unknown coin function {self.f!r}")
        if self.m < 1:
            raise ParameterError("coin denominator m must be >= 1")

    def apply(self, x: int) -> int:
        return x * x if self.f == "square" else x

    def inverse_ceil(self, r: int) -> int:
        """ceil(f^-1(r)) in exact integer arithmetic, r >= 1."""
        if self.f == "square":
            return math.isqrt(r - 1) + 1
        return r


def compute_dists(enc_q: list, points: np.ndarray, params: RingParams) -> Cipher:
    """All n L1 distances |q - s_i| as one packed ciphertext.

    Per coordinate: b = [q < s] via the sign test, then (1 - 2b)(q - s)
    recovers the absolute difference with a single non-scalar mult.
    """
    points = np.asarray(points, dtype=np.int64)
    n, d = points.shape
    if len(enc_q) != d:
        raise ParameterError(f"query has {len(enc_q)} coords, points have {d}")
    tables = interp.build_named_tables(params)
    total = None
    for j in range(d):
        qj = he_sim.broadcast(enc_q[j], n, params)
        diff = he_sim.sub(qj, points[:, j], params)  # q_j - s_ij, free
        b = interp.eval_poly_ps(tables.is_neg, diff, params)  # [q_j < s_ij]
        sign = he_sim.rsub(1, he_sim.mul(b, 2, params), params)  # 1 - 2b
        term = he_sim.mul(sign, diff, params)  # |q_j - s_ij|
        total = term if total is None else he_sim.add(total, term, params)
    return total


def compute_dist_l1(enc_q: list, point, params: RingParams) -> Cipher:
    """L1 distance between an encrypted query and one plaintext point."""
    pts = np.asarray(point, dtype=np.int64).reshape(1, -1)
    return compute_dists(enc_q, pts, params)


def _coin_batch(xs: Cipher, rs: np.ndarray, spec: CoinSpec,
                params: RingParams) -> Cipher:
    """One coin per slot of xs, with pre-drawn numerators rs in [1, m].

    The coin is [r <= f(x)] = [x >= ceil(f^-1(r))], realized as the
    complement of the strict comparison.  Draws whose inverse exceeds the
    distance bound are deterministically 0 and get masked out in
    plaintext, which keeps every comparison argument sign-safe.
    """
    tables = interp.build_named_tables(params)
    rprime = np.array([spec.inverse_ceil(int(r)) for r in rs], dtype=np.int64)
    mask = (rprime <= params.dist_bound).astype(np.int64)
    clamped = np.minimum(rprime, params.dist_bound)
    if _diagnostics["enabled"]:
        vals = xs._values  # test-build trapdoor
        sat = sum(1 for v in vals if spec.apply(int(v)) > spec.m)
        _diagnostics["saturated_coins"] += sat
    arg = he_sim.sub(xs, clamped, params)
    neg = interp.eval_poly_ps(tables.is_neg, arg, params)  # [x < r']
    bit = he_sim.rsub(1, neg, params)  # [x >= r']
    return he_sim.mul(bit, mask, params)  # free plaintext mask


def coin_toss(x: Cipher, spec: CoinSpec, params: RingParams) -> Cipher:
    """One doubly-blinded coin: Pr[bit = 1] = min(f(x), m) / m."""
    rng = np.random.default_rng(spec.rng_seed)
    r = int(rng.integers(1, spec.m + 1))
    return _coin_batch(x, np.array([r]), spec, params)


def prob_avg(xs, spec: CoinSpec, params: RingParams) -> Cipher:
    """Estimate (1/m) * sum_i f(x_i) as a sum of independent coins.

    xs is either a packed ciphertext or a list of single-slot ciphers.
    All numerators are drawn up front from the seeded generator, so the
    evaluated circuit family member is deterministic for a given seed and
    the tosses themselves are order-independent.
    """
    if not isinstance(xs, Cipher):
        xs = he_sim.pack(list(xs), params)
    n = xs.size
    rng = np.random.default_rng(spec.rng_seed)
    rs = rng.integers(1, spec.m + 1, size=n)
    bits = _coin_batch(xs, rs, spec, params)
    return he_sim.slot_sum(bits, params)
