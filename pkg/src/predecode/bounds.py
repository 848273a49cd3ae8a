"""Upper bound, error exponent and superposition rate with pre-processing.

Upper bound
    For a pre-processor with composed channel ``V = W_{Z|X}`` and any
    auxiliary metric ``rho``, the q-decoder's capacity is at most
    ``min C(P_{Yt|X})`` over broadcast kernels ``P_{Z Yt|X}`` with Z-marginal
    ``V`` whose support respects ``rho(x,yt) - q(x,z) >= tau(z,yt)``.  Capacity
    is convex in the channel and the feasible set is a polytope, so the inner
    minimum is a convex program; any feasible point evaluated with the
    Blahut-Arimoto upper estimate is itself a valid bound.

Error exponent
    For fixed (pre-processor, input distribution) the exponent is
    ``min D(V_XZ || P_XZ) + |I(V_X'Z) - R|_+`` over pairs of joints with
    ``V_X = V_X' = P_X``, a common Z-marginal and ``E_V' q >= E_V q``; the
    objective is jointly convex.

Superposition
    Each cloud ``u`` carries an LM rate ``R_1u`` at input ``Q_{X|U=u}``; the
    cloud-centre rate ``R_0`` is a convex minimum of
    ``I(U';Z') + sum_u |Q_U(u) (I(X';Z'|U'=u) - R_1u)|_+``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .core import (
    InfeasibleError,
    PreconditionError,
    ResourceLimitError,
    ValidationError,
    _row_divergences,
    as_channel,
    as_distribution,
    as_joint,
    as_metric,
    capacity_below,
    channel_capacity,
    check_shapes,
    compose_channel,
    log_metric,
    mutual_information,
)
from .lm import SimplexSearch, _solve, lm_rate, simplex_grid
from .preprocessing import ENUMERATION_CAP, PreProcessor, all_maps, r_pre_lm

SOLVER = "CLARABEL"
MAX_CLOUDS = 8
BA_TOL = 1e-9
BA_ITERS = 20_000
PRUNE_TOL = 1e-12


def _cvx_solve(problem):
    try:
        problem.solve(solver=SOLVER)
    except cp.error.SolverError:
        return False
    return problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)


# ---------------------------------------------------------------------------
# upper bound


@dataclass(frozen=True)
class GammaInstance:
    q: np.ndarray
    rho: np.ndarray
    tau: np.ndarray
    support_mask: np.ndarray

    @classmethod
    def build(cls, q, rho):
        q = as_metric(q)
        rho = as_metric(rho, "rho")
        if q.shape[0] != rho.shape[0]:
            raise ValidationError("q and rho must share the input alphabet")
        # gap[x, z, yt] = rho(x, yt) - q(x, z)
        gap = rho[:, None, :] - q[:, :, None]
        tau = gap.max(axis=0)
        mask = gap >= tau[None]
        return cls(q, rho, tau, mask)

    def allowed(self, v):
        """Cells that may carry mass for Z-marginal ``v``."""
        return self.support_mask & (np.asarray(v) > 0)[:, :, None]

    def feasible(self, v):
        v = np.asarray(v)
        return bool(np.all((v <= 0) | self.allowed(v).any(axis=2)))


@dataclass
class UpperBoundResult:
    bound: float
    certificate: tuple
    """``(P_{Z Yt|X}, P_X)``: a feasible broadcast kernel indexed
    ``[x, z, yt]`` and a capacity-achieving input for its Yt-marginal."""
    best_f: PreProcessor
    per_function: list = field(default_factory=list)
    """``(map, value, status)`` with status "gamma", "shannon" or "infeasible"."""
    pruned: list = field(default_factory=list)
    infeasible: list = field(default_factory=list)


def _aux_channel(u):
    return u.sum(axis=1)


def _clean(u, allowed, v):
    """Project a solver output onto the feasible set exactly."""
    u = np.where(allowed, np.clip(u, 0.0, None), 0.0)
    sums = u.sum(axis=2)
    counts = allowed.sum(axis=2)
    fill = np.where(counts[:, :, None] > 0, allowed / np.maximum(counts, 1)[:, :, None], 0.0)
    u = np.where((sums > 0)[:, :, None], u / np.where(sums > 0, sums, 1.0)[:, :, None], fill)
    return u * np.asarray(v)[:, :, None]


def _capacity_value(u):
    # the upper estimate is a valid bound at any iteration count
    lower, upper, p = channel_capacity(_aux_channel(u), tol=BA_TOL, max_iter=BA_ITERS)
    return upper, p


def _gamma_convex(v, allowed):
    m, nz, ny = allowed.shape
    idx = np.argwhere(allowed)
    k = len(idx)
    x_of, z_of, y_of = idx[:, 0], idx[:, 1], idx[:, 2]
    to_aux = np.zeros((m * ny, k))
    to_aux[x_of * ny + y_of, np.arange(k)] = 1.0
    rows = np.flatnonzero(np.asarray(v).ravel() > 0)
    to_marg = np.zeros((m * nz, k))
    to_marg[x_of * nz + z_of, np.arange(k)] = 1.0
    to_marg = to_marg[rows]

    u = cp.Variable(k, nonneg=True)
    r = cp.Variable(ny, nonneg=True)
    t = cp.Variable()
    aux = cp.reshape(to_aux @ u, (m, ny), order="C")
    cons = [to_marg @ u == np.asarray(v).ravel()[rows], cp.sum(r) == 1]
    for x in range(m):
        cons.append(cp.sum(cp.rel_entr(aux[x], r)) <= t)
    prob = cp.Problem(cp.Minimize(t), cons)
    if not _cvx_solve(prob) or u.value is None:
        return None
    full = np.zeros(allowed.shape)
    full[x_of, z_of, y_of] = u.value
    return full


def _gamma_min(v, gamma: GammaInstance, restarts, rng):
    """Smallest evaluated capacity over the Gamma slice with Z-marginal ``v``.

    Returns ``(value, kernel, p_x)`` or None when the slice is empty.  The
    convex solve is followed by ``restarts`` random feasible points; every
    point is cleaned to exact feasibility before evaluation, so the value is
    always a capacity upper estimate of a feasible auxiliary channel.
    """
    allowed = gamma.allowed(v)
    if not gamma.feasible(v):
        return None
    best = None
    sol = _gamma_convex(v, allowed)
    if sol is not None:
        u = _clean(sol, allowed, v)
        val, p = _capacity_value(u)
        best = (val, u, p)
    for _ in range(restarts):
        raw = rng.gamma(1.0, size=allowed.shape) * allowed
        u = _clean(raw, allowed, v)
        if best is not None and not capacity_below(_aux_channel(u), best[0] - 1e-9)[0]:
            continue
        val, p = _capacity_value(u)
        if best is None or val < best[0]:
            best = (val, u, p)
    return best


def _shannon_certificate(v):
    """Copy kernel Yt = Z: feasible whenever mass may sit on the diagonal."""
    m, n = v.shape
    u = np.zeros((m, n, n))
    u[:, np.arange(n), np.arange(n)] = v
    return u


def upper_bound(w, q, rho=None, restarts=32, seed=0, strict=False,
                cap=ENUMERATION_CAP) -> UpperBoundResult:
    """Upper bound on the q-capacity with the best deterministic pre-processor.

    ``rho=None`` uses, for every map, the clamped log-likelihood of its
    composed channel; otherwise the given metric is used for all maps.  A map
    whose Gamma slice is empty falls back to the Shannon capacity of its
    composed channel (also an upper bound on its q-capacity) and is listed in
    ``infeasible``; ``strict=True`` raises InfeasibleError when every map is
    infeasible.  Per map the value is ``min(Gamma value, C(V))``.
    """
    w = as_channel(w)
    q = as_metric(q)
    check_shapes(w, q)
    m, n = w.shape
    if n > cap:
        raise ResourceLimitError(f"|Y| = {n} exceeds the enumeration cap {cap}")
    if restarts < 0:
        raise ValidationError("restarts must be non-negative")
    fixed = None
    if rho is not None:
        rho = as_metric(rho, "rho")
        if rho.shape != (m, n):
            raise ValidationError(f"rho must be {m}x{n}")
        fixed = GammaInstance.build(q, rho)
    rng = np.random.default_rng(seed)

    maps = [PreProcessor(mapping=f) for f in all_maps(n)]
    entries = []
    for order, f in enumerate(maps):
        v = compose_channel(w, f.matrix())
        entries.append((float(_row_divergences(v, v.mean(axis=0)).max()), order, f, v))
    entries.sort(key=lambda e: (-e[0], e[1]))

    best = None
    per_function, pruned, infeasible = [], [], []
    cache = {}
    for quick, order, f, v in entries:
        if best is not None:
            # a pruned map's capacity estimate still enters the final max,
            # so the small tolerance never invalidates the bound
            if quick <= best[0] + PRUNE_TOL:
                pruned.append((f, quick))
                continue
            below, bound = capacity_below(v, best[0] + PRUNE_TOL)
            if below:
                pruned.append((f, bound))
                continue
        key = v.tobytes()
        if key not in cache:
            gamma = fixed or GammaInstance.build(q, log_metric(v))
            _, shannon, p_sh = channel_capacity(v, tol=BA_TOL, max_iter=BA_ITERS)
            res = _gamma_min(v, gamma, restarts, rng)
            if res is None:
                cache[key] = (shannon, (_shannon_certificate(v), p_sh), "infeasible")
            elif res[0] <= shannon:
                cache[key] = (res[0], (res[1], res[2]), "gamma")
            else:
                cache[key] = (shannon, (_shannon_certificate(v), p_sh), "shannon")
        value, cert, status = cache[key]
        per_function.append((f, value, status))
        if status == "infeasible":
            infeasible.append(f)
        if best is None or value > best[0]:
            best = (value, cert, f)

    if strict and len(infeasible) == len(per_function):
        raise InfeasibleError("the Gamma polytope is empty for every pre-processor")
    value = max([best[0]] + [b for _, b in pruned])
    return UpperBoundResult(value, best[1], best[2], per_function, pruned, infeasible)


# ---------------------------------------------------------------------------
# error exponent


@dataclass
class ExponentCurve:
    rate_grid: list
    exponents: list
    optimizer_kernels: list
    """Per rate, ``(pre-processor, P_X)`` attaining the exponent (None when 0)."""
    raw_exponents: list = field(default_factory=list)
    """Values before the right-to-left running maximum."""


def exponent_at(p_x, channel, q, rate):
    """``min D(V_XZ||P_XZ) + |I(V_X'Z) - R|_+`` at a fixed input distribution.

    Returns ``(value, V, V')``.
    """
    p_x = np.asarray(p_x, dtype=float)
    channel = np.asarray(channel, dtype=float)
    q = np.asarray(q, dtype=float)
    rows = np.flatnonzero(p_x > 0)
    px = p_x[rows]
    pxz = px[:, None] * channel[rows]
    cols = np.flatnonzero(pxz.sum(axis=0) > 0)
    pxz = pxz[:, cols]
    qs = q[np.ix_(rows, cols)]
    supp = pxz > 0
    m, n = pxz.shape

    v = cp.Variable((m, n), nonneg=True)
    vp = cp.Variable((m, n), nonneg=True)
    vz = cp.sum(v, axis=0)
    cons = [
        cp.sum(v, axis=1) == px,
        cp.sum(vp, axis=1) == px,
        cp.sum(vp, axis=0) == vz,
        cp.sum(cp.multiply(vp, qs)) >= cp.sum(cp.multiply(v, qs)),
    ]
    if not supp.all():
        cons.append(v[~supp] == 0)
    div = cp.sum(cp.rel_entr(v[supp], pxz[supp]))
    info = cp.sum(cp.rel_entr(vp, px[:, None] @ cp.reshape(vz, (1, n), order="C")))
    prob = cp.Problem(cp.Minimize(div + cp.pos(info - rate)), cons)
    if not _cvx_solve(prob):
        raise PreconditionError(f"exponent program failed: {prob.status}")
    value = max(float(prob.value), 0.0)
    full_v = np.zeros_like(channel)
    full_vp = np.zeros_like(channel)
    full_v[np.ix_(rows, cols)] = np.clip(v.value, 0.0, None)
    full_vp[np.ix_(rows, cols)] = np.clip(vp.value, 0.0, None)
    return value, full_v, full_vp


def error_exponent(w, q, rate_grid, resolution=8, extra_candidates=(), include_best=True,
                   cap=ENUMERATION_CAP) -> ExponentCurve:
    """Exponent lower bound over deterministic pre-processors and gridded P_X.

    For every candidate pair the value is at most ``|R_LM - R|_+`` (take
    ``V = P_XZ`` and the LM minimiser), which is used to skip candidates
    that cannot beat the current best.  ``include_best`` adds the optimiser
    of :func:`r_pre_lm`, so the exponent is positive below that rate.  A
    right-to-left running maximum enforces monotonicity (a code of rate R'
    contains codes of every smaller rate).
    """
    w = as_channel(w)
    q = as_metric(q)
    check_shapes(w, q)
    rates = [float(r) for r in rate_grid]
    if any(r < 0 for r in rates):
        raise ValidationError("rates must be non-negative")
    m, n = w.shape
    if n > cap:
        raise ResourceLimitError(f"|Y| = {n} exceeds the enumeration cap {cap}")

    pairs = []
    if include_best:
        rep = r_pre_lm(w, q, cap=cap)
        pairs.append((rep.best_f, np.asarray(rep.best_p_x, dtype=float)))
    pairs.extend((PreProcessor.from_any(f), np.asarray(p, dtype=float)) for f, p in extra_candidates)
    grid = simplex_grid(m, resolution)
    for f in all_maps(n):
        pre = PreProcessor(mapping=f)
        pairs.extend((pre, p) for p in grid)

    channels = {}
    lm = []
    for f, p in pairs:
        key = f.mapping
        if key not in channels:
            channels[key] = compose_channel(w, f.matrix())
        lm.append(_solve(p, channels[key], q)[0].rate)
    lm = np.array(lm)

    raw, kernels = [], []
    cache = {}
    for rate in rates:
        ub = lm - rate
        order = np.argsort(-ub, kind="stable")
        best, arg = 0.0, None
        for i in order:
            if ub[i] <= best + 1e-12:
                break
            f, p = pairs[i]
            key = (f.mapping, p.tobytes(), rate)
            if key not in cache:
                cache[key] = exponent_at(p, channels[f.mapping], q, rate)[0]
            val = min(cache[key], ub[i])
            if val > best:
                best, arg = val, (f, p)
        raw.append(best)
        kernels.append(arg)

    order = np.argsort(rates)
    exps = list(raw)
    run, run_arg = 0.0, None
    for i in order[::-1]:
        if exps[i] < run:
            exps[i], kernels[i] = run, run_arg
        else:
            run, run_arg = exps[i], kernels[i]
    return ExponentCurve(rates, exps, kernels, raw)


# ---------------------------------------------------------------------------
# superposition


@dataclass(frozen=True)
class SuperpositionConfig:
    q_ux: np.ndarray
    log_tau0: bool = False
    """Use E[log q] in the cloud-centre constraint (metrics must be positive)."""

    def __post_init__(self):
        j = as_joint(self.q_ux, "Q_UX")
        if j.ndim != 2:
            raise ValidationError("Q_UX must be a |U| x |X| table")
        object.__setattr__(self, "q_ux", j)

    @property
    def u_size(self):
        return self.q_ux.shape[0]

    @property
    def q_u(self):
        return self.q_ux.sum(axis=1)

    def q_x_given_u(self, u):
        return self.q_ux[u] / self.q_ux[u].sum()


@dataclass
class SuperpositionRate:
    total: float
    r0: float
    r1: list
    subset: tuple = ()
    """Subset of clouds attaining the max in the R_0 correction."""


def _r0(cfg: SuperpositionConfig, v, q, r1):
    """Cloud-centre rate and the optimal ``P_{U'X'Z'}`` (one table per cloud,
    on that cloud's input support)."""
    keep = np.flatnonzero(cfg.q_u > 0)
    qux = cfg.q_ux[keep]
    r1 = np.asarray(r1, dtype=float)[keep]
    q_u = qux.sum(axis=1)
    p_z = qux.sum(axis=0) @ v
    cols = np.flatnonzero(p_z > 0)
    pz = p_z[cols]
    metric = np.asarray(q, dtype=float)[:, cols]
    if cfg.log_tau0:
        if np.any(metric <= 0):
            raise PreconditionError("the log form of the cloud-centre constraint needs q > 0")
        metric = np.log(metric)
    nz = len(cols)
    target = float((qux.sum(axis=0)[:, None] * v[:, cols] * metric).sum())

    supports = [np.flatnonzero(row > 0) for row in qux]
    pv = [cp.Variable((len(xs), nz), nonneg=True) for xs in supports]
    cons = [cp.sum(pv[u], axis=1) == qux[u, xs] for u, xs in enumerate(supports)]
    cons.append(sum(cp.sum(t, axis=0) for t in pv) == pz)
    cons.append(sum(cp.sum(cp.multiply(t, metric[xs])) for t, xs in zip(pv, supports)) >= target)

    puz = [cp.sum(t, axis=0) for t in pv]
    objective = sum(cp.sum(cp.rel_entr(puz[u], q_u[u] * pz)) for u in range(len(pv)))
    for u, xs in enumerate(supports):
        qx = qux[u, xs] / q_u[u]
        cond = cp.sum(cp.rel_entr(pv[u], qx[:, None] @ cp.reshape(puz[u], (1, nz), order="C")))
        objective = objective + cp.pos(cond - q_u[u] * r1[u])
    prob = cp.Problem(cp.Minimize(objective), cons)
    if not _cvx_solve(prob) or not np.isfinite(prob.value):
        raise PreconditionError(f"cloud-centre program failed: {prob.status}")
    tables = [np.clip(t.value, 0.0, None) for t in pv]
    return max(float(prob.value), 0.0), tables, keep


def _conditional_terms(tables, q_u):
    """``Q_U(u) I(X';Z'|U'=u)`` and ``I(U';Z')`` of a solution."""
    cond = []
    for u, t in enumerate(tables):
        mass = t.sum()
        # a cloud of negligible weight can come back as an all-zero table
        cond.append(mutual_information(t / mass) * q_u[u] if mass > 0 else 0.0)
    puz = np.array([t.sum(axis=0) for t in tables])
    return cond, mutual_information(puz / puz.sum())


def best_subset(values):
    """Subset maximising the sum of ``values`` by exhaustive enumeration."""
    k = len(values)
    if k > MAX_CLOUDS:
        raise ResourceLimitError(f"|U| = {k} exceeds {MAX_CLOUDS}")
    best, arg = 0.0, ()
    for size in range(1, k + 1):
        for sub in itertools.combinations(range(k), size):
            s = float(sum(values[i] for i in sub))
            if s > best + 1e-15:
                best, arg = s, sub
    return best, arg


def superposition_rate(w, q, cfg: SuperpositionConfig, p_zy=None) -> SuperpositionRate:
    """Superposition-coding rate for a fixed pre-processor (identity if None).

    ``R_1u`` is the LM rate of ``Q_{X|U=u}`` over the composed channel and
    ``R_0`` the minimum of the cloud-centre program; the correction's max over
    cloud subsets is reported by exhaustive enumeration.
    """
    w = as_channel(w)
    q = as_metric(q)
    check_shapes(w, q)
    if cfg.q_ux.shape[1] != w.shape[0]:
        raise ValidationError("Q_UX input alphabet does not match the channel")
    if cfg.u_size > MAX_CLOUDS:
        raise ResourceLimitError(f"|U| = {cfg.u_size} exceeds {MAX_CLOUDS}")
    f = PreProcessor.identity(w.shape[1]) if p_zy is None else PreProcessor.from_any(p_zy)
    v = compose_channel(w, f.matrix())

    q_u = cfg.q_u
    r1 = []
    for u in range(cfg.u_size):
        r1.append(lm_rate(cfg.q_x_given_u(u), v, q).rate if q_u[u] > 0 else 0.0)
    r0, tables, keep = _r0(cfg, v, q, r1)
    cond, _ = _conditional_terms(tables, q_u[keep])
    gaps = [cond[i] - q_u[u] * r1[u] for i, u in enumerate(keep)]
    _, sub = best_subset(gaps)
    total = r0 + float(np.dot(q_u, r1))
    return SuperpositionRate(total, r0, r1, tuple(int(keep[i]) for i in sub))


def partition_splits(p_x):
    """Two-cloud configurations splitting the support of ``p_x`` in two;
    each keeps the overall input distribution ``p_x``."""
    p_x = np.asarray(p_x, dtype=float)
    supp = np.flatnonzero(p_x > 1e-12)
    out = []
    for size in range(1, len(supp)):
        for sub in itertools.combinations(supp, size):
            if supp[0] not in sub:
                continue
            a = np.zeros_like(p_x)
            a[list(sub)] = p_x[list(sub)]
            out.append(SuperpositionConfig(np.vstack([a, p_x - a])))
    return out


def superposition_best(w, q, report=None, search: SimplexSearch | None = None):
    """Best superposition rate over a single cloud at the optimiser of
    :func:`r_pre_lm` and all two-cloud partitions of its input support.

    Returns ``(SuperpositionRate, PreProcessor, SuperpositionConfig)``.
    """
    w = as_channel(w)
    q = as_metric(q)
    rep = report or r_pre_lm(w, q, search)
    p_x = as_distribution(np.clip(rep.best_p_x, 0.0, None) / np.clip(rep.best_p_x, 0.0, None).sum())
    configs = [SuperpositionConfig(p_x[None, :])] + partition_splits(p_x)
    best = None
    for cfg in configs:
        res = superposition_rate(w, q, cfg, rep.best_f)
        if best is None or res.total > best[0].total + 1e-12:
            best = (res, rep.best_f, cfg)
    return best


def nats_to_bits(x):
    return x / math.log(2.0)
