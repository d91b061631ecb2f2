"""Server-side k-ish nearest-neighbor circuit and the client role.

The server estimates the mean and spread of the encrypted distance
distribution with coin-sum estimators, derives a quantile threshold, and
counts class labels among the points falling under it -- all without
decrypting anything.  The client wrapper repeats the protocol and takes a
majority to damp the estimator noise.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from . import he_sim, interp, primitives
from .he_sim import Cipher
from .primitives import CoinSpec, derive_seed
from .ring import ParameterError, RingParams, phi_inverse


@dataclass(frozen=True)
class ProtocolParams:
    ring: RingParams
    k: int
    n: int
    z_k: int  # round(Phi^-1(k/n)), plaintext
    repetitions: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k < self.n:
            raise ParameterError("need 1 <= k < n")
        if self.repetitions % 2 != 1:
            raise ParameterError("repetition count must be odd")


def make_protocol_params(ring: RingParams, k: int, n: int,
                         repetitions: int = 5, rng_seed: int = 0) -> ProtocolParams:
    z = int(round(phi_inverse(k / n)))
    return ProtocolParams(ring=ring, k=k, n=n, z_k=z,
                          repetitions=repetitions, rng_seed=rng_seed)


@dataclass(frozen=True)
class LabeledDatabase:
    points: np.ndarray  # (n, d) grid coordinates
    labels: np.ndarray  # (n,) bits

    def __post_init__(self):
        if len(self.points) != len(self.labels):
            raise ParameterError("points and labels length mismatch")

    @property
    def n(self) -> int:
        return len(self.labels)

    def without(self, i: int) -> "LabeledDatabase":
        keep = np.arange(self.n) != i
        return LabeledDatabase(self.points[keep], self.labels[keep])


@dataclass(frozen=True)
class SigmaDigits:
    """Digit-couple ciphertexts feeding the spread estimate."""

    mu2_low: Cipher
    mu2_high: Cipher
    musq_low: Cipher
    musq_high: Cipher


def estimate_mu(xs: Cipher, pp: ProtocolParams) -> Cipher:
    """Coin-sum estimate of the mean distance (f identity, denominator n)."""
    spec = CoinSpec("identity", pp.n, derive_seed(pp.rng_seed, "mu"))
    return primitives.prob_avg(xs, spec, pp.ring)


def estimate_mu2_digits(xs: Cipher, pp: ProtocolParams):
    """Digit-couple estimate of the second moment.

    Low digit: coins with denominator n (the ring supplies the implicit
    mod); high digit: denominator n*p.  The low-digit call can saturate
    when squared distances exceed n; see the diagnostics counter.
    """
    low = primitives.prob_avg(
        xs, CoinSpec("square", pp.n, derive_seed(pp.rng_seed, "mu2-low")),
        pp.ring)
    high = primitives.prob_avg(
        xs, CoinSpec("square", pp.n * pp.ring.coord_bound,
                     derive_seed(pp.rng_seed, "mu2-high")),
        pp.ring)
    return low, high


def square_mu_digits(mu_star: Cipher, pp: ProtocolParams):
    """Base-p digits of the squared mean: one non-scalar mult + one table."""
    tables = interp.build_named_tables(pp.ring)
    low = he_sim.mul(mu_star, mu_star, pp.ring)
    high = interp.eval_poly_ps(tables.square_div_p, mu_star, pp.ring)
    return low, high


def sqrt_of_digit_diff(high_a: Cipher, low_a: Cipher, high_b: Cipher,
                       low_b: Cipher, pp: ProtocolParams) -> Cipher:
    """Oblivious sqrt(a - b) from base-p digit couples of a and b.

    Three-way branch on dh = high(a) - high(b): sqrt(dl) when dh = 0,
    sqrt(p + dl) when dh = 1, sqrt(dh * p) otherwise, with dl the low
    digit difference.  Selector bits come from the is-zero table and every
    branch is combined by multiply-and-add, so nothing is revealed.
    """
    ring = pp.ring
    tables = interp.build_named_tables(ring)
    dh = he_sim.sub(high_a, high_b, ring)
    dl = he_sim.sub(low_a, low_b, ring)
    b0 = interp.eval_poly_ps(tables.is_zero, dh, ring)
    b1 = interp.eval_poly_ps(tables.is_zero, he_sim.sub(dh, 1, ring), ring)
    b2 = he_sim.rsub(1, he_sim.add(b0, b1, ring), ring)
    v0 = interp.eval_poly_ps(tables.sqrt, dl, ring)
    v1 = interp.eval_poly_ps(tables.sqrt_plus_p, dl, ring)
    v2 = interp.eval_poly_ps(tables.sqrt_times_p, dh, ring)
    acc = he_sim.mul(b0, v0, ring)
    acc = he_sim.add(acc, he_sim.mul(b1, v1, ring), ring)
    acc = he_sim.add(acc, he_sim.mul(b2, v2, ring), ring)
    return acc


def estimate_sigma(sd: SigmaDigits, pp: ProtocolParams) -> Cipher:
    """Spread of the distance distribution from the moment digit-couples.

    The variance is mu_2 - mu^2, so the digit difference is taken with the
    second moment on the positive side.
    """
    return sqrt_of_digit_diff(sd.mu2_high, sd.mu2_low,
                              sd.musq_high, sd.musq_low, pp)


def threshold(mu_star: Cipher, sigma_star: Cipher, pp: ProtocolParams) -> Cipher:
    """T* = mu* + z_k * sigma*; z_k is plaintext, so this is free."""
    z = pp.ring.reduce(pp.z_k)
    return he_sim.add(mu_star, he_sim.mul(sigma_star, z, pp.ring), pp.ring)


def count_classes(xs: Cipher, t_star: Cipher, labels, pp: ProtocolParams):
    """Per-class counts of points strictly below the threshold.

    The n comparison bits are computed once (one batched sign test) and
    reused for both sums; the label masks are plaintext.
    """
    ring = pp.ring
    labels = np.asarray(labels, dtype=np.int64)
    tb = he_sim.broadcast(t_star, xs.size, ring)
    bits = interp.eval_poly_ps(interp.build_named_tables(ring).is_neg,
                               he_sim.sub(xs, tb, ring), ring)
    c0 = he_sim.slot_sum(he_sim.mul(bits, 1 - labels, ring), ring)
    c1 = he_sim.slot_sum(he_sim.mul(bits, labels, ring), ring)
    return c0, c1


def _threshold_pipeline(enc_q: list, db: LabeledDatabase, pp: ProtocolParams):
    """Distances and threshold ciphertexts shared by classify and kappa."""
    xs = primitives.compute_dists(enc_q, db.points, pp.ring)
    mu_star = estimate_mu(xs, pp)
    mu2_low, mu2_high = estimate_mu2_digits(xs, pp)
    musq_low, musq_high = square_mu_digits(mu_star, pp)
    sd = SigmaDigits(mu2_low=mu2_low, mu2_high=mu2_high,
                     musq_low=musq_low, musq_high=musq_high)
    sigma_star = estimate_sigma(sd, pp)
    t_star = threshold(mu_star, sigma_star, pp)
    return xs, t_star


def server_classify(pk, enc_q: list, db: LabeledDatabase,
                    pp: ProtocolParams) -> Cipher:
    """The full server circuit; returns one encrypted class bit.

    Ties (C0 == C1, including the zero-neighbor corner) resolve to class 0
    because the final comparison is strict.
    """
    if len(enc_q) != pp.ring.dim:
        raise ParameterError("query dimension does not match ring params")
    if db.n != pp.n:
        raise ParameterError("database size does not match protocol params")
    xs, t_star = _threshold_pipeline(enc_q, db, pp)
    c0, c1 = count_classes(xs, t_star, db.labels, pp)
    return interp.is_smaller(c0, c1, pp.ring)


def classify_with_majority(query, db: LabeledDatabase,
                           pp: ProtocolParams) -> int:
    """Client-side wrapper: run the protocol repeatedly, majority-vote."""
    keys = he_sim.keygen(pp.ring, derive_seed(pp.rng_seed, "keys"))
    enc_q = [he_sim.encrypt(keys.pk, int(c)) for c in query]
    votes = 0
    for rep in range(pp.repetitions):
        pp_rep = replace(pp, rng_seed=derive_seed(pp.rng_seed, f"rep-{rep}"))
        bit = server_classify(keys.pk, enc_q, db, pp_rep)
        votes += he_sim.decrypt(keys.sk, bit)
    return 1 if 2 * votes > pp.repetitions else 0


def kappa_of_run(db: LabeledDatabase, query, pp: ProtocolParams,
                 seed: int) -> int:
    """Diagnostic: how many neighbors one run's threshold actually selects.

    Decrypts the threshold through the test trapdoor, so it refuses to run
    unless KISHNN_TEST_TRAPDOOR=1 is set in the environment.
    """
    if os.environ.get("KISHNN_TEST_TRAPDOOR") != "1":
        raise RuntimeError("kappa_of_run is a test-build diagnostic; "
                           "set KISHNN_TEST_TRAPDOOR=1 to enable")
    pp_run = replace(pp, rng_seed=seed)
    keys = he_sim.keygen(pp.ring, derive_seed(seed, "kappa-keys"))
    enc_q = [he_sim.encrypt(keys.pk, int(c)) for c in query]
    _, t_star = _threshold_pipeline(enc_q, db, pp_run)
    t_val = pp.ring.signed(he_sim.decrypt(keys.sk, t_star))
    dists = np.abs(np.asarray(db.points, dtype=np.int64)
                   - np.asarray(query, dtype=np.int64)).sum(axis=1)
    return int((dists < t_val).sum())
