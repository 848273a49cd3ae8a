"""Symbolwise pre-processing functions and the search for the best one.

A pre-processor turns the channel output ``Y`` into ``Z`` before the fixed
q-decoder sees it.  Because the LM rate is convex in the kernel ``P_{Z|Y}``,
its maximum over kernels is attained at a deterministic map, so the exact
search enumerates the ``|Y|**|Y|`` maps.  Composed channels are bounded by
their Shannon capacity, which lets the enumeration skip maps that cannot beat
the incumbent.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ResourceLimitError,
    ValidationError,
    as_channel,
    as_distribution,
    as_metric,
    _row_divergences,
    capacity_below,
    check_shapes,
    compose_channel,
    mutual_information,
)
from .lm import SimplexSearch, lm_rate, lm_rate_max_input

ENUMERATION_CAP = 6
TIE_TOL = 1e-10


@dataclass(frozen=True)
class PreProcessor:
    """Deterministic map ``y -> mapping[y]`` or a stochastic kernel ``P_{Z|Y}``."""

    mapping: tuple | None = None
    kernel: np.ndarray | None = None

    def __post_init__(self):
        if (self.mapping is None) == (self.kernel is None):
            raise ValidationError("give exactly one of mapping or kernel")
        if self.mapping is not None:
            mapping = tuple(int(v) for v in self.mapping)
            if any(v < 0 or v >= len(mapping) for v in mapping):
                raise ValidationError(f"map {mapping} is not a function on range({len(mapping)})")
            object.__setattr__(self, "mapping", mapping)
        else:
            k = as_channel(self.kernel, "pre-processing kernel")
            if k.shape[0] != k.shape[1]:
                raise ValidationError("pre-processing kernel must be square (Y -> Y)")
            object.__setattr__(self, "kernel", k)

    @classmethod
    def identity(cls, size):
        return cls(mapping=tuple(range(size)))

    @classmethod
    def from_any(cls, obj):
        """Accept a PreProcessor, a flat map or a square matrix."""
        if isinstance(obj, cls):
            return obj
        arr = np.asarray(obj)
        if arr.ndim == 1:
            return cls(mapping=tuple(arr.tolist()))
        return cls(kernel=arr)

    @property
    def deterministic(self):
        return self.mapping is not None

    @property
    def size(self):
        return len(self.mapping) if self.deterministic else self.kernel.shape[0]

    def matrix(self):
        if self.deterministic:
            k = np.zeros((self.size, self.size))
            k[np.arange(self.size), self.mapping] = 1.0
            return k
        return np.array(self.kernel)

    def apply(self, y, rng=None):
        """Apply symbolwise to an integer array of outputs."""
        y = np.asarray(y)
        if self.deterministic:
            return np.asarray(self.mapping)[y]
        if rng is None:
            raise ValueError("a stochastic pre-processor needs an rng")
        cdf = np.cumsum(self.kernel, axis=1)
        u = rng.random(y.shape)
        z = (u[..., None] >= cdf[y]).sum(-1)
        return np.minimum(z, self.size - 1)

    def to_json(self):
        if self.deterministic:
            return list(self.mapping)
        return self.kernel.tolist()

    def __eq__(self, other):
        if not isinstance(other, PreProcessor):
            return NotImplemented
        if self.deterministic != other.deterministic:
            return False
        if self.deterministic:
            return self.mapping == other.mapping
        return np.array_equal(self.kernel, other.kernel)

    def __hash__(self):
        return hash(self.mapping if self.deterministic else self.kernel.tobytes())


@dataclass
class PreOptReport:
    best_f: PreProcessor
    rate: float
    best_p_x: np.ndarray
    per_function_rates: list = field(default_factory=list)
    budget_constraint: float | None = None
    pruned: list = field(default_factory=list)
    """(pre-processor, capacity upper bound) for candidates skipped because the
    bound could not beat the incumbent."""


def all_maps(size):
    """Every deterministic map on ``range(size)``, lexicographically."""
    return itertools.product(range(size), repeat=size)


def output_information(p_x, w, f: PreProcessor):
    """I(Y;Z) when Y ~ p_x W and Z is produced from Y by ``f``."""
    p_y = np.asarray(p_x) @ np.asarray(w)
    return mutual_information(p_y[:, None] * f.matrix())


def _quick_bound(v):
    """max_x D(V_x || uniform-input output law): a valid capacity upper bound."""
    r = v.mean(axis=0)
    return float(_row_divergences(v, r).max())


def _tie_key(f: PreProcessor, v):
    """Secondary preference among equal rates: higher-rank (information
    preserving) kernels, then composed channels with more diagonal mass."""
    k = min(v.shape)
    if f.deterministic:
        rank = len(set(f.mapping))
    else:
        rank = int(np.linalg.matrix_rank(f.kernel))
    return rank, round(float(np.trace(v[:k, :k])), 12)


def _search(w, q, candidates, search, budget=None):
    """Maximise lm_rate_max_input over candidate pre-processors.

    Rates within TIE_TOL are ties.  Ties go to the kernel of larger rank
    (bijections before merging maps), then to the composed channel with the
    larger diagonal mass ``sum_x V(x|x)``, then to the earliest candidate in
    the given order.

    Candidates are examined in decreasing order of a cheap capacity bound; one
    is skipped when Blahut-Arimoto certifies that its composed channel's
    capacity is too small for it to beat the incumbent or win a tie.
    """
    entries = []
    quick = {}
    for order, f in enumerate(candidates):
        v = compose_channel(w, f.matrix())
        key = v.tobytes()
        if key not in quick:
            quick[key] = _quick_bound(v)
        tie = _tie_key(f, v)
        entries.append((order, f, v, key, tie))
    entries.sort(key=lambda e: (-quick[e[3]], -e[4][0], -e[4][1], e[0]))

    solved = {}
    results = {}
    best = None
    pruned = []

    def loses_tie(tie, order):
        return (tie[0], tie[1], -order) < (best[1][0], best[1][1], -best[2])

    for order, f, v, key, tie in entries:
        if best is not None:
            threshold = best[0] + TIE_TOL if loses_tie(tie, order) else best[0] - TIE_TOL
            if quick[key] < threshold:
                pruned.append((f, quick[key]))
                continue
            below, bound = capacity_below(v, threshold)
            if below:
                pruned.append((f, bound))
                continue
        if key not in solved:
            solved[key] = lm_rate_max_input(v, q, search)
        p_x, sol = solved[key]
        results[order] = (f, p_x, sol)
        if budget is not None and output_information(p_x, w, f) > budget + 1e-12:
            continue
        if (best is None or sol.rate > best[0] + TIE_TOL
                or (sol.rate >= best[0] - TIE_TOL and not loses_tie(tie, order))):
            best = (sol.rate, tie, order)

    if best is None:
        raise ResourceLimitError("no candidate pre-processor satisfies the budget")
    f, p_x, sol = results[best[2]]
    per_function = [(results[o][0], results[o][2].rate) for o in sorted(results)]
    return PreOptReport(f, sol.rate, p_x, per_function, budget, pruned)


def _check(w, q):
    w = as_channel(w)
    q = as_metric(q)
    check_shapes(w, q)
    if w.shape[1] != q.shape[1]:
        raise ValidationError("metric must be defined on the channel output alphabet")
    return w, q


def r_pre_lm(w, q, search: SimplexSearch | None = None, cap=ENUMERATION_CAP) -> PreOptReport:
    """Best LM rate over all deterministic symbolwise pre-processors.

    The identity map is always among the candidates, so the result is at
    least ``lm_rate_max_input(w, q)``.  Raises ResourceLimitError when
    ``|Y| > cap``; use :func:`r_pre_lm_sampled` there instead.
    """
    w, q = _check(w, q)
    ny = w.shape[1]
    if ny > cap:
        raise ResourceLimitError(
            f"|Y| = {ny} exceeds the enumeration cap {cap} ({ny}**{ny} maps); use r_pre_lm_sampled"
        )
    maps = [PreProcessor(mapping=m) for m in all_maps(ny)]
    return _search(w, q, maps, search)


def random_kernels(size, n_samples, seed):
    rng = np.random.default_rng(seed)
    return [PreProcessor(kernel=rng.dirichlet(np.ones(size), size=size)) for _ in range(n_samples)]


def constant_maps(size):
    return [PreProcessor(mapping=(c,) * size) for c in range(size)]


def r_pre_lm_sampled(w, q, n_samples, seed, search: SimplexSearch | None = None,
                     include_identity=True) -> PreOptReport:
    """Best LM rate over random stochastic kernels, the constant maps and
    (optionally) the identity.  A lower bound on :func:`r_pre_lm`."""
    w, q = _check(w, q)
    if n_samples < 0:
        raise ValidationError("n_samples must be non-negative")
    ny = w.shape[1]
    cands = [PreProcessor.identity(ny)] if include_identity else []
    cands += constant_maps(ny)
    cands += random_kernels(ny, n_samples, seed)
    return _search(w, q, cands, search)


def r_pre_lm_budgeted(w, q, budget, n_samples=0, seed=0, search: SimplexSearch | None = None,
                      cap=ENUMERATION_CAP) -> PreOptReport:
    """Best LM rate over pre-processors with ``I(Y;Z) <= budget``.

    ``I(Y;Z)`` is measured with ``Y`` distributed as the output of the
    candidate's own rate-optimal input distribution.  Candidates are all
    deterministic maps followed by ``n_samples`` random kernels.
    """
    w, q = _check(w, q)
    if budget < 0:
        raise ValidationError("budget must be non-negative")
    ny = w.shape[1]
    if ny > cap:
        raise ResourceLimitError(f"|Y| = {ny} exceeds the enumeration cap {cap}")
    cands = [PreProcessor(mapping=m) for m in all_maps(ny)]
    cands += random_kernels(ny, n_samples, seed)
    return _search(w, q, cands, search, budget=budget)


def convexity_witness(w, q, p_x, k1, k2, alpha):
    """Both sides of the convexity inequality of the fixed-input LM rate in
    the pre-processing kernel: returns ``(psi(mix), alpha psi(k1) + (1-alpha) psi(k2))``."""
    w, q = _check(w, q)
    p_x = as_distribution(p_x, "p_x")
    k1 = PreProcessor.from_any(k1).matrix()
    k2 = PreProcessor.from_any(k2).matrix()
    if k1.shape != k2.shape or k1.shape[0] != w.shape[1]:
        raise ValidationError("kernels must both be |Y| x |Y|")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie strictly between 0 and 1")

    def psi(k):
        return lm_rate(p_x, compose_channel(w, k), q).rate

    lhs = psi(alpha * k1 + (1.0 - alpha) * k2)
    rhs = alpha * psi(k1) + (1.0 - alpha) * psi(k2)
    return lhs, rhs


def relabel(w, q, perm):
    """Rename output symbol ``y`` as ``perm[y]`` in both the channel and metric."""
    perm = np.asarray(perm)
    inv = np.argsort(perm)
    return np.asarray(w)[:, inv], np.asarray(q)[:, inv]


__all__ = [
    "PreProcessor", "PreOptReport", "r_pre_lm", "r_pre_lm_sampled", "r_pre_lm_budgeted",
    "convexity_witness", "all_maps", "output_information", "relabel", "ENUMERATION_CAP",
]
