"""Useless metrics, witness channels and binary closed forms.

A metric is useless (no channel and no pre-processor gives it a positive
rate) exactly when every row difference ``q(x1, .) - q(x2, .)`` is constant
in the output symbol.  When it is not, a quadruple ``(x1, x2, y1, y2)`` with

    kappa = q(x1,y1) + q(x2,y2) - q(x1,y2) - q(x2,y1) != 0

gives a noiseless binary sub-channel on which the q-decoder is as good as
maximum likelihood.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    LN2,
    PreconditionError,
    ValidationError,
    as_channel,
    as_metric,
    check_shapes,
    kl_divergence,
    mutual_information,
)
from .preprocessing import PreProcessor, r_pre_lm

USELESS_TOL = 1e-12
POSITIVE_RATE = 1e-9


@dataclass(frozen=True)
class UselessnessVerdict:
    useless: bool
    witness: tuple | None = None
    """``(x1, x2, y1, y2)`` with ``kappa_q(x1, y1, x2, y2) != 0``."""


class Regime(str, Enum):
    ALIGNED = "sum<1, aligned"
    MISALIGNED = "sum<1, misaligned"
    CROSSED = "sum>1, crossed"
    UNCROSSED = "sum>1, uncrossed"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class BinaryCapacity:
    value: float
    regime: Regime


@dataclass(frozen=True)
class BinaryPreCapacity:
    value: float
    f: PreProcessor


def kappa(q, x1, y1, x2, y2):
    """``q(x1,y1) + q(x2,y2) - q(x1,y2) - q(x2,y1)``."""
    q = np.asarray(q, dtype=float)
    return float(q[x1, y1] + q[x2, y2] - q[x1, y2] - q[x2, y1])


def delta(q, x1, x2, tol=USELESS_TOL):
    """Row difference ``q(x1, y) - q(x2, y)``; only defined when it does not
    depend on ``y``."""
    q = np.asarray(q, dtype=float)
    d = q[x1] - q[x2]
    if d.max() - d.min() > tol:
        raise PreconditionError(f"q({x1},y) - q({x2},y) depends on y")
    return float(d[0])


def is_useless(q, tol=USELESS_TOL) -> UselessnessVerdict:
    """Scan all input pairs for a row difference that varies with ``y``.

    Differences are compared with absolute tolerance ``tol``, so metrics
    within ``tol`` of an additive one are declared useless.

    >>> is_useless([[1, 0], [0, 1]])
    UselessnessVerdict(useless=False, witness=(0, 1, 0, 1))
    """
    q = as_metric(q)
    m, n = q.shape
    for x1 in range(m):
        for x2 in range(x1 + 1, m):
            d = q[x1] - q[x2]
            off = np.flatnonzero(np.abs(d - d[0]) > tol)
            if off.size:
                return UselessnessVerdict(False, (x1, x2, 0, int(off[0])))
    return UselessnessVerdict(True, None)


def is_useless_for_channel(q, w, cap=None) -> bool:
    """True when no deterministic symbolwise pre-processor gives a positive
    LM rate (threshold ``POSITIVE_RATE`` nats)."""
    kwargs = {} if cap is None else {"cap": cap}
    return r_pre_lm(w, q, **kwargs).rate <= POSITIVE_RATE


def witness_channel(q, witness, tol=USELESS_TOL):
    """Channel on which a non-useless metric reaches capacity 1 bit.

    Rows ``x1`` and ``x2`` are noiseless onto ``{y1, y2}``, paired so that
    the q-decoder prefers the transmitted symbol: ``x1 -> y1, x2 -> y2`` when
    kappa > 0 and crossed when kappa < 0.  All other rows are uniform.
    """
    q = as_metric(q)
    x1, x2, y1, y2 = (int(v) for v in witness)
    m, n = q.shape
    if not (0 <= x1 < m and 0 <= x2 < m and 0 <= y1 < n and 0 <= y2 < n):
        raise ValidationError(f"witness {witness} out of range for a {m}x{n} metric")
    if x1 == x2 or y1 == y2:
        raise ValidationError("witness needs two distinct inputs and two distinct outputs")
    k = kappa(q, x1, y1, x2, y2)
    if abs(k) <= tol:
        raise PreconditionError(f"kappa_q{(x1, y1, x2, y2)} = {k:.3g}: not a witness")
    w = np.full((m, n), 1.0 / n)
    w[[x1, x2]] = 0.0
    if k > 0:
        w[x1, y1] = w[x2, y2] = 1.0
    else:
        w[x1, y2] = w[x2, y1] = 1.0
    return w


def restrict(w, q, xs, ys):
    """Sub-channel on inputs ``xs`` and outputs ``ys`` (rows renormalised)."""
    w = np.asarray(w, dtype=float)[np.ix_(xs, ys)]
    sums = w.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise PreconditionError("restricted channel has a row with no mass")
    return w / sums, np.asarray(q, dtype=float)[np.ix_(xs, ys)]


def _binary_input_information(p0, w):
    return mutual_information(np.array([p0, 1.0 - p0])[:, None] * w)


def binary_input_capacity(w, tol=1e-10):
    """Capacity of a binary-input channel by bisection on the derivative
    ``dI/dp = D(W_0 || r) - D(W_1 || r)`` (decreasing in ``p = P_X(0)``)."""
    w = np.asarray(w, dtype=float)

    def slope(p):
        r = p * w[0] + (1.0 - p) * w[1]
        return kl_divergence(w[0], r) - kl_divergence(w[1], r)

    lo, hi = 0.0, 1.0
    if slope(tol) <= 0:
        hi = 0.0
    elif slope(1.0 - tol) >= 0:
        lo = 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
    p = 0.5 * (lo + hi)
    return _binary_input_information(p, w), p


def _check_binary(w, q):
    w = as_channel(w)
    q = as_metric(q)
    check_shapes(w, q)
    if w.shape != (2, 2):
        raise ValidationError(f"binary formulas need 2x2 inputs, got {w.shape}")
    return w, q


def _sums(w, q, tol):
    crossover = w[1, 0] + w[0, 1]          # W(0|1) + W(1|0)
    off = q[0, 1] + q[1, 0]
    diag = q[0, 0] + q[1, 1]
    if abs(off - diag) <= tol:
        off = diag
    return crossover, off, diag


def binary_mismatch_capacity(w, q, tol=USELESS_TOL) -> BinaryCapacity:
    """Mismatch capacity of a binary-input binary-output channel.

    With ``s = W(0|1) + W(1|0)`` the q-decoder reaches C(W) when ``s < 1``
    and ``q(0,1)+q(1,0) < q(0,0)+q(1,1)``, or when ``s > 1`` and the
    inequality is reversed (strictly); otherwise the capacity is 0.  ``s = 1``
    makes the output independent of the input.
    """
    w, q = _check_binary(w, q)
    s, off, diag = _sums(w, q, tol)
    if abs(s - 1.0) <= 1e-12:
        return BinaryCapacity(0.0, Regime.DEGENERATE)
    if s < 1.0:
        if off < diag:
            return BinaryCapacity(binary_input_capacity(w)[0], Regime.ALIGNED)
        return BinaryCapacity(0.0, Regime.MISALIGNED)
    if off > diag:
        return BinaryCapacity(binary_input_capacity(w)[0], Regime.CROSSED)
    return BinaryCapacity(0.0, Regime.UNCROSSED)


IDENTITY2 = PreProcessor(mapping=(0, 1))
FLIP2 = PreProcessor(mapping=(1, 0))


def binary_pre_capacity(w, q, tol=USELESS_TOL) -> BinaryPreCapacity:
    """Best rate with a symbolwise pre-processor on a binary channel.

    Flipping the output exchanges ``s`` and ``2 - s``, so whenever the q-sums
    differ one of identity/flip puts the channel in a C(W) regime.  Equal
    q-sums (an additive 2x2 metric) and ``s = 1`` give 0 with the identity.
    """
    w, q = _check_binary(w, q)
    s, off, diag = _sums(w, q, tol)
    if abs(s - 1.0) <= 1e-12 or off == diag:
        return BinaryPreCapacity(0.0, IDENTITY2)
    if s < 1.0:
        f = FLIP2 if off > diag else IDENTITY2
    else:
        f = IDENTITY2 if off > diag else FLIP2
    return BinaryPreCapacity(binary_input_capacity(w)[0], f)


def optimal_channel_binary_input(q, y1, y2, tol=USELESS_TOL):
    """Noiseless binary-input channel onto ``{y1, y2}`` with C_q = C = 1 bit.

    ``W0`` (0 -> y1, 1 -> y2) when ``q(0,y2)+q(1,y1) < q(0,y1)+q(1,y2)``,
    ``W1`` (0 -> y2, 1 -> y1) when the inequality is reversed.
    """
    q = as_metric(q)
    if q.shape[0] != 2:
        raise ValidationError("optimal_channel_binary_input needs a binary input alphabet")
    n = q.shape[1]
    if not (0 <= y1 < n and 0 <= y2 < n) or y1 == y2:
        raise ValidationError("y1, y2 must be distinct output symbols")
    kt = q[0, y1] + q[1, y2] - q[0, y2] - q[1, y1]
    if abs(kt) <= tol:
        raise PreconditionError("q(0,y1)+q(1,y2) equals q(0,y2)+q(1,y1): no optimal pairing")
    w = np.zeros((2, n))
    if kt > 0:
        w[0, y1] = w[1, y2] = 1.0
    else:
        w[0, y2] = w[1, y1] = 1.0
    return w


def useless_metric_gap(q, x0, x1, y):
    """Both sides of the decomposition of a useless metric's score gap.

    Returns ``(direct, via_delta)`` with ``direct = sum_t q(x0_t, y_t) -
    q(x1_t, y_t)`` and ``via_delta = sum_{i,j} delta(i, j) |K0_i & K1_j|``,
    where ``K_g_i`` is the set of positions at which codeword ``g`` is ``i``.
    The second form does not involve ``y``.  Exact for integer metrics.
    """
    q = as_metric(q)
    x0 = np.asarray(x0, dtype=int)
    x1 = np.asarray(x1, dtype=int)
    y = np.asarray(y, dtype=int)
    if not (x0.shape == x1.shape == y.shape):
        raise ValidationError("x0, x1, y must have equal length")
    direct = float(q[x0, y].sum() - q[x1, y].sum())
    m = q.shape[0]
    counts = np.zeros((m, m), dtype=int)
    np.add.at(counts, (x0, x1), 1)
    via = 0.0
    for i in range(m):
        for j in range(m):
            if counts[i, j]:
                via += delta(q, i, j) * counts[i, j]
    return direct, via


def bits(nats):
    return nats / LN2
