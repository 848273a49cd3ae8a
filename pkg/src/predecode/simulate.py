"""Monte Carlo simulation of mismatched decoding with pre-processing.

Every trial draws a uniform message, sends its codeword through the DMC,
pre-processes the output and decodes with the additive metric ``q``.  A tie
for the maximum score counts as an error.

Randomness is split by chunk: chunk ``c`` of ``CHUNK`` trials uses streams
spawned from ``SeedSequence(seed, spawn_key=(c,))``, one per stage (message,
channel, pre-processing), so results do not depend on the number of workers.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm

from .core import (
    PreconditionError,
    ValidationError,
    as_channel,
    as_distribution,
    as_metric,
    check_shapes,
)
from .preprocessing import PreProcessor

CHUNK = 4096
EXHAUSTIVE_BITS = 24
RANDOM_PROBES = 10**6
Z95 = float(norm.ppf(0.975))
SCORE_DECIMALS = 12


@dataclass(frozen=True)
class Codebook:
    codewords: np.ndarray
    composition: np.ndarray | None = None

    def __post_init__(self):
        cw = np.asarray(self.codewords)
        if cw.ndim != 2 or cw.shape[0] < 1 or cw.shape[1] < 1:
            raise ValidationError("codewords must be a non-empty M x n integer array")
        if not np.issubdtype(cw.dtype, np.integer):
            if not np.all(cw == np.round(cw)):
                raise ValidationError("codewords must be integers")
            cw = cw.astype(np.int64)
        if cw.min() < 0:
            raise ValidationError("codeword symbols must be non-negative")
        cw = np.array(cw)
        cw.setflags(write=False)
        object.__setattr__(self, "codewords", cw)
        if self.composition is not None:
            comp = as_distribution(self.composition, "composition")
            counts = np.stack([np.bincount(row, minlength=len(comp)) for row in cw])
            if counts.shape[1] != len(comp) or not np.allclose(counts / cw.shape[1], comp[None], atol=1e-12):
                raise ValidationError("codewords do not all have the stated composition")
            object.__setattr__(self, "composition", comp)

    @property
    def n(self):
        return self.codewords.shape[1]

    @property
    def size(self):
        return self.codewords.shape[0]


@dataclass(frozen=True)
class SimResult:
    trials: int
    errors: int
    p_err: float
    ci95_halfwidth: float
    seed: int


@dataclass
class DecodeAndProcess:
    inner_codebook: Codebook
    ml_channel: np.ndarray
    target_points: dict = field(default_factory=dict)
    q: np.ndarray | None = None

    def ml_decode(self, y):
        return ml_decode(self.ml_channel, self.inner_codebook, y)

    def __call__(self, y, rng=None):
        m = self.ml_decode(y)
        targets = np.stack([self.target_points[i] for i in range(self.inner_codebook.size)])
        return targets[m]


def confidence_halfwidth(errors, trials):
    """95% half-width: normal approximation, Wilson interval when fewer than 5
    errors (or fewer than 5 successes)."""
    if trials <= 0:
        return math.inf
    p = errors / trials
    if min(errors, trials - errors) >= 5:
        return Z95 * math.sqrt(p * (1.0 - p) / trials)
    z2 = Z95 * Z95
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = Z95 * math.sqrt(p * (1.0 - p) / trials + z2 / (4 * trials * trials)) / denom
    return max(centre + half - p, p - (centre - half))


def _result(errors, trials, seed):
    return SimResult(int(trials), int(errors), errors / trials, confidence_halfwidth(errors, trials), int(seed))


def _streams(seed, chunk):
    ss = np.random.SeedSequence(seed, spawn_key=(chunk,))
    return [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(4)]


def _chunks(trials):
    return [(c, min(CHUNK, trials - c * CHUNK)) for c in range((trials + CHUNK - 1) // CHUNK)]


def _run_chunks(work, trials, threads):
    chunks = _chunks(trials)
    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(work, chunks))
    return [work(c) for c in chunks]


# ---------------------------------------------------------------------------
# codebooks


def round_composition(composition, n):
    """Largest-remainder rounding of ``n * composition`` to integer counts."""
    p = as_distribution(composition, "composition")
    raw = p * n
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rem]] += 1
    return counts


def codebook_size(n, rate, alphabet):
    if rate < 0:
        raise ValidationError("rate must be non-negative")
    if n * rate > n * math.log(alphabet) + 1e-12:
        raise ValidationError(f"rate {rate} exceeds log|X| = {math.log(alphabet):.6g}")
    return max(1, math.ceil(math.exp(n * rate) - 1e-9))


def random_cc_codebook(n, rate, composition, seed) -> Codebook:
    """``ceil(exp(n rate))`` codewords drawn independently and uniformly from
    the type class of the rounded composition."""
    if n < 1:
        raise ValidationError("block length must be positive")
    comp = as_distribution(composition, "composition")
    counts = round_composition(comp, n)
    m = codebook_size(n, rate, len(comp))
    rng = np.random.default_rng(seed)
    base = np.repeat(np.arange(len(comp)), counts)
    words = rng.permuted(np.tile(base, (m, 1)), axis=1)
    return Codebook(words, counts / n)


# ---------------------------------------------------------------------------
# decoding


def _sample_outputs(w, x, rng):
    cdf = np.cumsum(w, axis=1)
    u = rng.random(x.shape)
    y = (u[..., None] >= cdf[x]).sum(-1)
    return np.minimum(y, w.shape[1] - 1)


def scores(q, cb: Codebook, z):
    """``S[i, j] = sum_t q(x_j[t], z_i[t])`` for a batch of outputs ``z``."""
    z = np.atleast_2d(z)
    qcb = q[cb.codewords]                      # M x n x |Y|
    out = np.zeros((z.shape[0], cb.size))
    for t in range(cb.n):
        out += qcb[:, t, :][:, z[:, t]].T
    return out


def q_decode(q, cb, z):
    """Index of the unique best codeword, or -1 for a tie."""
    s = scores(q, cb, z)
    best = s.max(axis=1)
    winners = (s == best[:, None]).sum(axis=1)
    return np.where(winners == 1, s.argmax(axis=1), -1)


def ml_decode(w, cb, y):
    """Posterior argmax under ``w`` (uniform prior); ties go to the smallest index."""
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    s = scores(logw, cb, y)
    return s.argmax(axis=1)


def _simulate(w, cb, q, transform, trials, seed, trace=None, threads=1):
    w = as_channel(w)
    q = as_metric(q)
    check_shapes(w, q)
    if cb.codewords.max() >= w.shape[0]:
        raise ValidationError("codebook uses symbols outside the input alphabet")
    if trials < 1:
        raise ValidationError("trials must be positive")

    def work(chunk):
        c, size = chunk
        r_msg, r_ch, r_pre, _ = _streams(seed, c)
        msg = r_msg.integers(cb.size, size=size)
        y = _sample_outputs(w, cb.codewords[msg], r_ch)
        z = transform(y, r_pre)
        dec = q_decode(q, cb, z)
        return msg, dec

    parts = _run_chunks(work, trials, threads)
    errors = sum(int(np.sum(dec != msg)) for msg, dec in parts)
    if trace is not None:
        _write_trace(trace, seed, parts)
    return _result(errors, trials, seed)


def _write_trace(path, seed, parts):
    with open(path, "w") as fh:
        for msg, dec in parts:
            for m, mh in zip(msg.tolist(), dec.tolist()):
                fh.write(json.dumps({"seed": int(seed), "m": m, "m_hat": mh, "tie_flag": mh < 0}) + "\n")


def simulate(w, cb: Codebook, q, f, trials, seed, trace=None, threads=1) -> SimResult:
    """Error rate with a symbolwise pre-processor ``f``."""
    f = PreProcessor.from_any(f)
    return _simulate(w, cb, q, lambda y, rng: f.apply(y, rng), trials, seed, trace, threads)


def symbolwise_lift(f):
    """Vectorwise function applying ``f`` to every symbol of each block."""
    f = PreProcessor.from_any(f)

    def f_n(y, rng):
        return f.apply(y, rng)
    return f_n


def constant_block(z):
    z = np.asarray(z)

    def f_n(y, rng):
        return np.broadcast_to(z, y.shape).copy()
    return f_n


def simulate_vectorwise(w, cb: Codebook, q, f_n, trials, seed, trace=None, threads=1) -> SimResult:
    """Error rate with a block pre-processor ``f_n(y, rng)``; ``y`` is a
    (trials x n) batch of channel outputs."""

    def transform(y, rng):
        z = np.asarray(f_n(y, rng))
        if z.shape != y.shape:
            raise ValidationError("vectorwise pre-processor must map Y^n to Y^n")
        return z

    return _simulate(w, cb, q, transform, trials, seed, trace, threads)


# ---------------------------------------------------------------------------
# decode-and-process


def _region_points(q, cb, candidates):
    """For each message, the first candidate strictly inside its region."""
    dec = q_decode(q, cb, candidates)
    found = {}
    for m in range(cb.size):
        hit = np.flatnonzero(dec == m)
        if hit.size:
            found[m] = candidates[hit[0]]
    return found


def find_region_points(q, cb: Codebook, n_outputs, seed=0, probes=RANDOM_PROBES, batch=1 << 16):
    """A point of every decision region, exhaustively when ``|Y|^n <= 2**24``
    and otherwise by random probing.  Raises PreconditionError naming an
    empty (or unfound) region."""
    q = np.asarray(q, dtype=float)
    n = cb.n
    found = {}
    # per-position favourite symbols of each codeword often suffice
    guess = np.stack([q[cb.codewords[m]].argmax(axis=1) for m in range(cb.size)])
    found.update(_region_points(q, cb, guess))
    if len(found) < cb.size:
        total = n_outputs ** n
        if n * math.log2(n_outputs) <= EXHAUSTIVE_BITS:
            for start in range(0, total, batch):
                idx = np.arange(start, min(start + batch, total))
                cand = np.stack(np.unravel_index(idx, (n_outputs,) * n), axis=1)
                for m, z in _region_points(q, cb, cand).items():
                    found.setdefault(m, z)
                if len(found) == cb.size:
                    break
            exhaustive = True
        else:
            rng = np.random.default_rng(seed)
            for start in range(0, probes, batch):
                cand = rng.integers(n_outputs, size=(min(batch, probes - start), n))
                for m, z in _region_points(q, cb, cand).items():
                    found.setdefault(m, z)
                if len(found) == cb.size:
                    break
            exhaustive = False
        missing = [m for m in range(cb.size) if m not in found]
        if missing:
            how = "is empty" if exhaustive else f"was not found in {probes} random probes"
            raise PreconditionError(f"decision region of message {missing[0]} {how}")
    return {m: np.asarray(found[m]) for m in range(cb.size)}


def build_decode_and_process(w, cb: Codebook, q, seed=0) -> DecodeAndProcess:
    """ML decoding followed by a jump to a fixed point of the decoded
    message's q-decision region, so the q-decoder reproduces the ML estimate."""
    w = as_channel(w)
    q = as_metric(q)
    check_shapes(w, q)
    targets = find_region_points(q, cb, w.shape[1], seed)
    return DecodeAndProcess(cb, w, targets, q)


def reencode_preprocessor(w, cb: Codebook, f_tilde):
    """Stochastic decode-and-process built from a block pre-processor
    ``f_tilde``: ML-decode, re-send the decoded codeword through a fresh use
    of ``w`` and apply ``f_tilde``.  Its error rate is at most twice that of
    ``f_tilde``."""
    w = as_channel(w)

    def f_n(y, rng):
        m = ml_decode(w, cb, y)
        y2 = _sample_outputs(w, cb.codewords[m], rng)
        return np.asarray(f_tilde(y2, rng))
    return f_n


def decode_and_process_mismatch(dp: DecodeAndProcess, trials, seed):
    """Count trials with ``m_hat != m_tilde`` (ML estimate vs q-decoder output)."""
    w = dp.ml_channel
    cb = dp.inner_codebook
    bad = 0
    for c, size in _chunks(trials):
        r_msg, r_ch, _, _ = _streams(seed, c)
        msg = r_msg.integers(cb.size, size=size)
        y = _sample_outputs(w, cb.codewords[msg], r_ch)
        m_tilde = dp.ml_decode(y)
        m_hat = q_decode(dp.q, cb, dp(y))
        bad += int(np.sum(m_hat != m_tilde))
    return bad


# ---------------------------------------------------------------------------
# random-coding ensemble


def _log_multinomial(counts):
    counts = np.asarray(counts, dtype=float)
    return float(gammaln(counts.sum() + 1) - gammaln(counts + 1).sum())


def _tables(rows, cols):
    """All non-negative integer tables with the given row and column sums."""
    rows = tuple(int(r) for r in rows)
    cols = tuple(int(c) for c in cols)

    def split(total, caps):
        if len(caps) == 1:
            if total <= caps[0]:
                yield (total,)
            return
        for first in range(min(total, caps[0]) + 1):
            if total - first <= sum(caps[1:]):
                for rest in split(total - first, caps[1:]):
                    yield (first,) + rest

    def rec(j, remaining):
        if j == len(cols):
            if not any(remaining):
                yield ()
            return
        for col in split(cols[j], remaining):
            nxt = tuple(r - c for r, c in zip(remaining, col))
            for rest in rec(j + 1, nxt):
                yield (col,) + rest

    for t in rec(0, rows):
        yield np.array(t).T


@lru_cache(maxsize=4096)
def _competitor_law(rows, cols, qbytes, shape):
    """Sorted scores and upper-tail probabilities of a uniform draw from the
    type class ``rows`` scored against an output with symbol counts ``cols``."""
    q = np.frombuffer(qbytes).reshape(shape)
    base = _log_multinomial(rows)
    vals, logp = [], []
    for t in _tables(rows, cols):
        vals.append(round(float((t * q).sum()), SCORE_DECIMALS))
        logp.append(sum(_log_multinomial(t[:, j]) for j in range(t.shape[1])) - base)
    vals = np.array(vals)
    prob = np.exp(np.array(logp))
    order = np.argsort(vals)
    vals, prob = vals[order], prob[order]
    tail = np.cumsum(prob[::-1])[::-1]
    return vals, np.minimum(tail, 1.0)


def simulate_random_coding(w, q, f, n, rate, composition, trials, seed, threads=1) -> SimResult:
    """Error rate of constant-composition random coding, one fresh codebook per trial.

    Each trial draws the sent codeword uniformly from the type class, the
    channel output and its pre-processed version ``z``.  The other
    ``M - 1`` codewords are independent uniform draws from the type class, so
    the event that one of them scores at least as high as the sent codeword
    has probability ``1 - (1 - p)**(M - 1)`` where ``p`` is computed exactly
    by enumerating joint types; the error indicator is drawn with that
    probability.  This samples the ensemble exactly without storing
    ``exp(n R)`` codewords.  Scores are compared after rounding to 12 decimals.
    """
    w = as_channel(w)
    q = as_metric(q)
    check_shapes(w, q)
    f = PreProcessor.from_any(f)
    comp = as_distribution(composition, "composition")
    if len(comp) != w.shape[0]:
        raise ValidationError("composition must be over the input alphabet")
    counts = round_composition(comp, n)
    m = codebook_size(n, rate, w.shape[0])
    base = np.repeat(np.arange(w.shape[0]), counts)
    qbytes = np.ascontiguousarray(q).tobytes()
    nz = w.shape[1]

    def work(chunk):
        c, size = chunk
        r_msg, r_ch, r_pre, r_aux = _streams(seed, c)
        x = r_msg.permuted(np.tile(base, (size, 1)), axis=1)
        z = f.apply(_sample_outputs(w, x, r_ch), r_pre)
        own = np.round((q[x, z]).sum(axis=1), SCORE_DECIMALS)
        zc = np.stack([np.bincount(row, minlength=nz) for row in z])
        p = np.empty(size)
        for i in range(size):
            vals, tail = _competitor_law(tuple(counts), tuple(zc[i]), qbytes, q.shape)
            k = np.searchsorted(vals, own[i], side="left")
            p[i] = tail[k] if k < len(vals) else 0.0
        if m > 1:
            with np.errstate(divide="ignore"):
                p_err = -np.expm1((m - 1) * np.log1p(-p))
        else:
            p_err = np.zeros(size)
        return int(np.sum(r_aux.random(size) < p_err))

    errors = sum(_run_chunks(work, trials, threads))
    return _result(errors, trials, seed)
