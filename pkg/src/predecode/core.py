"""Probability primitives shared by every solver in the package.

Alphabets are ``range(k)``; distributions, channels, joints and metrics are
plain read-only numpy arrays that went through one of the ``as_*``
validators.  All information quantities are in nats.
"""
from __future__ import annotations

import math

import numpy as np

PROB_TOL = 1e-12
RENORM_TOL = 1e-9
METRIC_FLOOR = -1e6

LN2 = math.log(2.0)


class PredecodeError(Exception):
    """Base class for package errors."""


class ValidationError(PredecodeError, ValueError):
    """Malformed probability object or metric."""


class PreconditionError(PredecodeError, ValueError):
    """Inputs are well formed but violate an operation's precondition."""


class InfeasibleError(PreconditionError):
    """A constraint set turned out to be empty."""


class ResourceLimitError(PredecodeError):
    """An enumeration or search would exceed its configured guard."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _renormalize(a, axis, what):
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{what} has non-finite entries")
    if a.min(initial=0.0) < -PROB_TOL:
        raise ValidationError(f"{what} has negative entries (min {a.min():.3g})")
    a = np.clip(a, 0.0, None)
    sums = a.sum(axis=axis, keepdims=True)
    err = np.abs(sums - 1.0).max()
    if err > RENORM_TOL:
        raise ValidationError(f"{what} does not sum to one (error {err:.3g})")
    if err > PROB_TOL:
        a = a / sums
    return a


def as_distribution(p, name="distribution"):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError(f"{name} must be a non-empty vector")
    return _frozen(_renormalize(p, None, name))


def as_channel(w, name="channel"):
    """Validate a row-stochastic matrix ``w[x, y] = W(y|x)``."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.size == 0:
        raise ValidationError(f"{name} must be a non-empty matrix")
    return _frozen(_renormalize(w, 1, name))


def as_joint(j, name="joint distribution"):
    j = np.asarray(j, dtype=float)
    if j.ndim < 2 or j.size == 0:
        raise ValidationError(f"{name} must have at least two axes")
    return _frozen(_renormalize(j, None, name))


def as_metric(q, name="metric"):
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.size == 0:
        raise ValidationError(f"{name} must be a non-empty matrix")
    if not np.all(np.isfinite(q)):
        raise ValidationError(f"{name} must be finite; clamp log-likelihoods with log_metric()")
    return _frozen(q)


def log_metric(w, floor=METRIC_FLOOR):
    """Matched (maximum-likelihood) metric ``log W(y|x)``, clamped at ``floor``."""
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        q = np.log(w)
    return _frozen(np.maximum(q, floor))


def check_shapes(channel, q):
    if channel.shape != q.shape:
        raise ValidationError(f"channel shape {channel.shape} does not match metric shape {q.shape}")


def xlogy(x, y):
    """``x * log(y)`` with the convention ``0 log 0 = 0``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    mask = np.broadcast_to(x > 0, out.shape)
    xb = np.broadcast_to(x, out.shape)
    yb = np.broadcast_to(y, out.shape)
    with np.errstate(divide="ignore"):
        out[mask] = xb[mask] * np.log(yb[mask])
    return out


def entropy(p):
    p = np.asarray(p, dtype=float)
    return float(max(0.0, -xlogy(p, p).sum()))


def binary_entropy(p):
    return entropy([p, 1.0 - p])


def mutual_information(j):
    """I(A;B) of a two-dimensional joint table; 0 log 0 terms vanish."""
    j = np.asarray(j, dtype=float)
    if j.ndim != 2:
        raise ValidationError("mutual_information expects a two-dimensional joint")
    pa = j.sum(axis=1)
    pb = j.sum(axis=0)
    denom = np.outer(pa, pb)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(j > 0, j / np.where(denom > 0, denom, 1.0), 1.0)
    return float(max(0.0, xlogy(j, ratio).sum()))


def kl_divergence(p, q):
    """D(p||q) in nats; ``inf`` when p is not absolutely continuous w.r.t. q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValidationError(f"shape mismatch {p.shape} vs {q.shape}")
    if np.any((p > 0) & (q <= 0)):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p > 0, p / np.where(q > 0, q, 1.0), 1.0)
    return float(max(0.0, xlogy(p, ratio).sum()))


def compose_channel(w, p_zy):
    """Channel X -> Z obtained by following ``w`` with the kernel ``p_zy``."""
    w = np.asarray(w, dtype=float)
    p_zy = np.asarray(p_zy, dtype=float)
    if w.ndim != 2 or p_zy.ndim != 2 or w.shape[1] != p_zy.shape[0]:
        raise ValidationError(f"cannot compose {w.shape} with {p_zy.shape}")
    v = w @ p_zy
    # keep row sums at 1 to machine precision
    return _frozen(v / v.sum(axis=1, keepdims=True))


def joint(p_x, channel):
    return np.asarray(p_x, dtype=float)[:, None] * np.asarray(channel, dtype=float)


def input_mutual_information(p_x, channel):
    return mutual_information(joint(p_x, channel))


def _row_divergences(channel, r):
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(channel > 0, channel / np.where(r > 0, r, 1.0)[None, :], 1.0)
    return xlogy(channel, ratio).sum(axis=1)


def channel_capacity(channel, tol=1e-9, max_iter=100_000):
    """Blahut-Arimoto capacity of a DMC.

    Returns ``(lower, upper, p_x)`` where ``lower = I(p_x, channel)`` and
    ``upper = max_x D(W(.|x) || p_x W)``; the true capacity lies in between and
    the loop stops once ``upper - lower <= tol``.
    """
    w = np.asarray(channel, dtype=float)
    m = w.shape[0]
    p = np.full(m, 1.0 / m)
    lower = upper = 0.0
    for _ in range(max_iter):
        r = p @ w
        d = _row_divergences(w, r)
        lower = float(p @ d)
        upper = float(d.max())
        if upper - lower <= tol:
            break
        p = p * np.exp(d - upper)
        p /= p.sum()
    return max(lower, 0.0), max(upper, 0.0), p


def capacity_below(channel, threshold, max_iter=5000):
    """Decide whether C(channel) < threshold by Blahut-Arimoto iterations.

    Returns ``(True, upper)`` as soon as an upper estimate falls below the
    threshold, ``(False, lower)`` once a lower estimate reaches it, and
    ``(False, upper)`` if neither happens within ``max_iter`` steps.
    """
    w = np.asarray(channel, dtype=float)
    m = w.shape[0]
    p = np.full(m, 1.0 / m)
    upper = math.inf
    for _ in range(max_iter):
        r = p @ w
        d = _row_divergences(w, r)
        lower = float(p @ d)
        upper = float(d.max())
        if upper < threshold:
            return True, upper
        if lower >= threshold:
            return False, lower
        p = p * np.exp(d - upper)
        p /= p.sum()
    return False, upper


def capacity_upper(channel, tol=1e-9):
    return channel_capacity(channel, tol=tol)[1]
