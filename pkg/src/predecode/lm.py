"""LM rate of constant-composition random coding under a mismatched metric.

For a fixed input distribution the rate is

    min I(X';Y)  over joints with  P_X' = P_X,  P_Y' = P_Y,  E q(X',Y) >= E q(X,Y)

where (X, Y) ~ P_X x W.  With both marginals pinned, minimising I is the
I-projection of the product P_X x P_Y onto a polytope, so the minimiser has
the exponential-family form ``P_X P_Y exp(a(x) + b(y) + s q(x,y))`` with
``s >= 0``.  We solve the (smooth, convex) dual in ``(a, b, s)`` by damped
Newton steps.  When the true joint is already optimal for the transport LP
``max E q``, the multiplier ``s`` diverges; that case is detected with an LP
and handled by iterative proportional fitting on the optimal face.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize

from .core import (
    ResourceLimitError,
    ValidationError,
    as_channel,
    as_distribution,
    as_metric,
    check_shapes,
    mutual_information,
    xlogy,
)

CONVERGED = "converged"
MAX_ITERS = "max_iters"
INFEASIBLE = "infeasible"

MAX_ITERATIONS = 200_000
_S_CHECK = 60.0          # multiplier (on the [0,1]-normalised metric) that triggers the face test
_FACE_GAP = 1e-10        # LP optimum minus target below which the optimal face is used
ORACLE_GUARD = 10**8


@dataclass(frozen=True)
class LmSolution:
    rate: float
    minimizer: np.ndarray
    solver_status: str
    gap_estimate: float
    multiplier: float = 0.0

    def __post_init__(self):
        self.minimizer.setflags(write=False)


def metric_slack(q):
    """Absolute tolerance for metric-expectation comparisons."""
    return 1e-12 * max(1.0, float(np.abs(q).max()))


def _support(p_x, channel):
    p_y = p_x @ channel
    rows = np.flatnonzero(p_x > 0)
    cols = np.flatnonzero(p_y > 0)
    return p_y, rows, cols


def _newton_dual(px, py, logr, qn, t, max_iter=500, s_check=_S_CHECK, init=None):
    """Minimise sum R e^{a+b+sq} - a.px - b.py - s t (gauge b[-1] = 0).

    ``init`` optionally gives a starting point ``(a, b, s)``.  Returns
    ``(P, a, b, s, phi, converged, hit_cap)``.
    """
    m, n = qn.shape
    a = np.zeros(m)
    b = np.zeros(n)
    s = 0.0

    def evaluate(a, b, s):
        logp = logr + a[:, None] + b[None, :] + s * qn
        with np.errstate(over="ignore", invalid="ignore"):
            p = np.exp(logp)
            pq = p * qn
            phi = p.sum() - a @ px - b @ py - s * t
            g = np.concatenate([p.sum(1) - px, (p.sum(0) - py)[:-1], [pq.sum() - t]])
        return p, pq, phi, g

    p, pq, phi, g = evaluate(a, b, s)
    if init is not None:
        wa, wb, ws = init
        wa = wa + wb[-1]
        wb = wb - wb[-1]
        cand = evaluate(wa, wb, max(ws, 0.0))
        if np.isfinite(cand[2]) and cand[2] < phi:
            a, b, s = wa, wb, max(ws, 0.0)
            p, pq, phi, g = cand
    k = m + n
    for _ in range(max_iter):
        gmax = np.abs(g).max()
        if gmax < 1e-13:
            return p, a, b, s, phi, True, False
        if s > s_check:
            return p, a, b, s, phi, False, True
        h = np.zeros((k, k))
        h[:m, :m] = np.diag(p.sum(1))
        h[m:k - 1, m:k - 1] = np.diag(p.sum(0)[:-1])
        h[:m, m:k - 1] = p[:, :-1]
        h[m:k - 1, :m] = p[:, :-1].T
        h[:m, -1] = h[-1, :m] = pq.sum(1)
        h[m:k - 1, -1] = h[-1, m:k - 1] = pq.sum(0)[:-1]
        h[-1, -1] = (pq * qn).sum()
        try:
            d = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            d = -np.linalg.lstsq(h, g, rcond=None)[0]
        slope = g @ d
        if slope >= 0:
            d = -g
            slope = -(g @ g)
        step = 1.0
        while step > 1e-12:
            na = a + step * d[:m]
            nb = b.copy()
            nb[:-1] += step * d[m:k - 1]
            ns = s + step * d[-1]
            cand = evaluate(na, nb, ns)
            nphi, ng = cand[2], cand[3]
            if np.isfinite(nphi) and (
                nphi <= phi + 1e-4 * step * slope
                # objective changes below float resolution near the optimum
                or (gmax < 1e-6 and np.abs(ng).max() < 0.5 * gmax)
            ):
                break
            step *= 0.5
        else:
            return p, a, b, s, phi, gmax < 1e-10, False
        a, b, s = na, nb, ns
        p, pq, phi, g = cand
    return p, a, b, s, phi, np.abs(g).max() < 1e-10, False


def _transport_lp(px, py, qn):
    """Maximise E q over couplings; returns (value, reduced costs) or None."""
    m, n = qn.shape
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    b_eq = np.concatenate([px, py])
    c = -qn.ravel()
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    y = res.eqlin.marginals
    reduced = c - a_eq.T @ y
    return -res.fun, reduced.reshape(m, n)


def _optimal_face(qn, flow, tol=1e-12):
    """Face of the transport LP ``max E qn`` if ``flow`` is optimal, else None.

    Optimality of ``flow`` means dual potentials with ``u_i + v_j >= qn_ij``
    everywhere and equality on the support of ``flow`` exist.  These are
    difference constraints, so Bellman-Ford decides feasibility (a negative
    cycle means an improving cycle of the LP).  Returns the zero-reduced-cost
    cells of the potentials found.
    """
    m, n = qn.shape
    supp = flow > 0
    qsupp = np.where(supp, qn, np.inf)
    u = np.zeros(m)
    w = np.zeros(n)     # w = -v
    for _ in range(m + n + 2):
        nw = np.minimum(w, (u[:, None] - qn).min(0))
        nu = np.minimum(u, (nw[None, :] + qsupp).min(1))
        if (w - nw).max() <= tol and (u - nu).max() <= tol:
            reduced = u[:, None] - w[None, :] - qn
            return reduced <= 1e-9
        u, w = nu, nw
    return None


def _live_cells(face, flow):
    """Cells of ``face`` that are positive in some coupling supported on it.

    ``flow`` is one such coupling.  A face cell (i, j) can carry mass iff it
    already does or column j reaches row i in the residual graph (forward
    edges along face cells, backward edges along positive cells), since then
    mass can be pushed around the cycle.
    """
    m, n = face.shape
    pos = flow > 1e-15
    reach = np.zeros((m + n, m + n), dtype=bool)
    reach[:m, m:] = face
    reach[m:, :m] = pos.T
    reach |= np.eye(m + n, dtype=bool)
    # transitive closure by repeated squaring
    for _ in range(int(np.ceil(np.log2(m + n))) + 1):
        reach = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
    back = reach[m:, :m].T
    return face & (pos | back)


def _newton_marginals(kernel, px, py, max_iter=200):
    """Scale ``kernel`` to marginals (px, py) by Newton steps on the dual of
    min D(P || kernel).  Returns ``(P, converged)``."""
    m, n = kernel.shape
    with np.errstate(divide="ignore"):
        logk = np.log(kernel)
    a = np.zeros(m)
    b = np.zeros(n)

    def evaluate(a, b):
        with np.errstate(over="ignore", invalid="ignore"):
            p = np.exp(logk + a[:, None] + b[None, :])
            phi = p.sum() - a @ px - b @ py
        g = np.concatenate([p.sum(1) - px, (p.sum(0) - py)[:-1]])
        return p, phi, g

    p, phi, g = evaluate(a, b)
    k = m + n - 1
    for _ in range(max_iter):
        gmax = np.abs(g).max()
        if gmax < 1e-15:
            return p, True
        h = np.zeros((k, k))
        h[:m, :m] = np.diag(p.sum(1))
        h[m:, m:] = np.diag(p.sum(0)[:-1])
        h[:m, m:] = p[:, :-1]
        h[m:, :m] = p[:, :-1].T
        try:
            d = -np.linalg.solve(h, g)
            solved = np.all(np.isfinite(d)) and np.abs(h @ d + g).max() <= 1e-9 * max(gmax, 1e-300)
        except np.linalg.LinAlgError:
            solved = False
        if not solved:
            # block-structured supports leave one gauge freedom per block
            d = -np.linalg.lstsq(h, g, rcond=None)[0]
        slope = g @ d
        if not slope < 0:
            return p, False
        step = 1.0
        while step > 1e-12:
            na = a + step * d[:m]
            nb = b.copy()
            nb[:-1] += step * d[m:]
            cand = evaluate(na, nb)
            if np.isfinite(cand[1]) and (
                cand[1] <= phi + 1e-4 * step * slope
                or (gmax < 1e-6 and np.abs(cand[2]).max() < 0.5 * gmax)
            ):
                break
            step *= 0.5
        else:
            return p, gmax < 1e-12
        a, b = na, nb
        p, phi, g = cand
    return p, np.abs(g).max() < 1e-12


def _project_marginals(kernel, px, py):
    p, ok = _newton_marginals(kernel, px, py)
    if ok:
        # one scaling sweep leaves columns exact and rows within rounding
        rs = p.sum(1)
        p = p * np.divide(px, rs, out=np.zeros_like(px), where=rs > 0)[:, None]
        cs = p.sum(0)
        return p * np.divide(py, cs, out=np.zeros_like(py), where=cs > 0)[None, :], True
    return _ipf(kernel, px, py)


def _ipf(kernel, px, py, max_iter=MAX_ITERATIONS):
    p = kernel / kernel.sum()
    last = math.inf
    for it in range(max_iter):
        rs = p.sum(1)
        p = p * np.where(rs > 0, px / np.where(rs > 0, rs, 1.0), 0.0)[:, None]
        cs = p.sum(0)
        p = p * np.where(cs > 0, py / np.where(cs > 0, cs, 1.0), 0.0)[None, :]
        err = np.abs(p.sum(1) - px).max()
        if err < 1e-15:
            return p, True
        # marginals outside the support's reach stall at a fixed residual
        if it % 100 == 99:
            if err > 0.5 * last:
                break
            last = err
    return p, np.abs(p.sum(1) - px).max() < 1e-9


def lm_rate(p_x, channel, q) -> LmSolution:
    """LM rate at a fixed input distribution (nats).

    Examples
    --------
    >>> round(lm_rate([0.5, 0.5], [[0.9, 0.1], [0.1, 0.9]], [[1, 0], [0, 1]]).rate, 6)
    0.368064
    """
    p_x = as_distribution(p_x, "p_x")
    channel = as_channel(channel)
    q = as_metric(q)
    check_shapes(channel, q)
    if p_x.size != channel.shape[0]:
        raise ValidationError(f"p_x has {p_x.size} entries, channel has {channel.shape[0]} rows")
    return _solve(p_x, channel, q)[0]


def _solve(p_x, channel, q, warm=None):
    """Unchecked LM solve.  Returns ``(LmSolution, dual)`` where ``dual`` is
    ``(a, b, s)`` indexed over the full alphabets with ``s`` on the raw metric
    scale (``None`` when no exponential-family solution exists); passing it
    back as ``warm`` for a nearby ``p_x`` saves most Newton iterations."""
    p_y, rows, cols = _support(p_x, channel)
    true_joint = p_x[:, None] * channel
    target = float((true_joint * q).sum())
    full = np.zeros_like(true_joint)

    px, py = p_x[rows], p_y[cols]
    qs = q[np.ix_(rows, cols)]
    product = np.outer(px, py)
    if (product * qs).sum() >= target - metric_slack(q):
        full[np.ix_(rows, cols)] = product
        return LmSolution(0.0, full, CONVERGED, 0.0, 0.0), None

    lo, hi = qs.min(), qs.max()
    scale = hi - lo
    qn = (qs - lo) / scale
    tn = (target - lo) / scale
    logr = np.log(product)

    init = None
    if warm is not None:
        wa, wb, ws = warm
        init = (wa[rows] + ws * lo, wb[cols], ws * scale)

    flow = true_joint[np.ix_(rows, cols)]
    face = _optimal_face(qn, flow)
    hit_cap = False
    if face is None:
        p, a, b, s, phi, ok, hit_cap = _newton_dual(px, py, logr, qn, tn, init=init)
        status = CONVERGED if ok else MAX_ITERS
    if hit_cap:
        lp = _transport_lp(px, py, qn)
        if lp is not None and lp[0] - tn <= _FACE_GAP:
            face = lp[1] <= 1e-9
    if face is not None:
        p, ok = _project_marginals(product * _live_cells(face, flow), px, py)
        status = CONVERGED if ok else MAX_ITERS
        full[np.ix_(rows, cols)] = p
        return LmSolution(mutual_information(full), full, status, 0.0, math.inf), None
    if hit_cap:
        p, a, b, s, phi, ok, _ = _newton_dual(px, py, logr, qn, tn, max_iter=5000, s_check=math.inf,
                                              init=(a, b, s))
        status = CONVERGED if ok else MAX_ITERS

    full[np.ix_(rows, cols)] = p
    rate = mutual_information(full)
    gap = abs(float(xlogy(p, p / product).sum()) - (1.0 - phi))
    da = np.zeros(p_x.size)
    db = np.zeros(p_y.size)
    da[rows] = a - s * lo / scale
    db[cols] = b
    return LmSolution(rate, full, status, gap, s / scale), (da, db, s / scale)


# ---------------------------------------------------------------------------
# outer maximisation over the input distribution


@dataclass(frozen=True)
class SimplexSearch:
    """Input-simplex search: lattice with spacing ``1/resolution`` plus
    Nelder-Mead refinement from the best ``n_starts`` lattice points."""

    resolution: int = 16
    n_starts: int = 5
    maxfev_per_dim: int = 40
    extra_points: tuple = field(default_factory=tuple)


@functools.lru_cache(maxsize=32)
def _simplex_grid(dim, resolution):
    g = simplex_grid_uncached(dim, resolution)
    g.setflags(write=False)
    return g


def simplex_grid(dim, resolution):
    """All points of the simplex with coordinates in ``{0, 1/r, ..., 1}``,
    in lexicographic order of their integer numerators."""
    return _simplex_grid(dim, resolution).copy()


def simplex_grid_uncached(dim, resolution):
    """All points of the simplex with coordinates in ``{0, 1/r, ..., 1}``,
    in lexicographic order of their integer numerators."""
    pts = []
    for combo in itertools.combinations(range(resolution + dim - 1), dim - 1):
        prev = -1
        counts = []
        for c in combo:
            counts.append(c - prev - 1)
            prev = c
        counts.append(resolution + dim - 2 - prev)
        pts.append(counts)
    g = np.array(pts, dtype=float) / resolution
    order = np.lexsort(g.T[::-1])
    return g[order]


def grid_screen(grid, channel, q):
    """Vectorised per-point quantities for a batch of input distributions.

    Returns ``(excess, info)`` where ``excess = E q(X,Y) - E_{P_X x P_Y} q`` (the
    LM rate is zero exactly when this is within slack of zero or negative) and
    ``info = I(X;Y)``, an upper bound on the LM rate.
    """
    py = grid @ channel
    target = grid @ (channel * q).sum(1)
    prod = ((grid @ q) * py).sum(1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(channel[None] > 0, channel[None] / np.where(py[:, None, :] > 0, py[:, None, :], 1.0), 1.0)
        info = (grid[:, :, None] * xlogy(channel[None], ratio)).sum((1, 2))
    return target - prod, np.maximum(info, 0.0)


def lm_rate_max_input(channel, q, search: SimplexSearch | None = None):
    """Best constant-composition LM rate over input distributions.

    The inner minimisation is solved exactly for every visited input
    distribution, so the returned rate is achievable even though the outer
    search is heuristic.  Returns ``(p_x, LmSolution)``.
    """
    channel = as_channel(channel)
    q = as_metric(q)
    check_shapes(channel, q)
    search = search or SimplexSearch()
    m = channel.shape[0]
    grid = _simplex_grid(m, search.resolution)
    if search.extra_points:
        grid = np.vstack([grid, np.atleast_2d(np.asarray(search.extra_points, dtype=float))])
    excess, info = grid_screen(grid, channel, q)
    slack = metric_slack(q)

    # Points whose product coupling is feasible have rate 0 and are never solved.
    cand = np.flatnonzero(excess > slack)
    cand = cand[np.argsort(-info[cand], kind="stable")]
    keep = max(search.n_starts, 1)
    values = {}
    top = []
    for k in cand:
        if len(top) >= keep and info[k] < top[-1] - 1e-12:
            break
        values[k] = _solve(grid[k], channel, q)[0]
        top = sorted((v.rate for v in values.values()), reverse=True)[:keep]

    if not values:
        k0 = 0
        return grid[k0].copy(), _solve(grid[k0], channel, q)[0]

    ranked = sorted(values, key=lambda k: (-values[k].rate, k))
    best_p, best = grid[ranked[0]].copy(), values[ranked[0]]
    starts = [k for k in ranked[: search.n_starts] if values[k].rate > 0]

    warm = [None]

    def to_simplex(z, pivot):
        p = np.insert(np.abs(z), pivot, 1.0)
        return p / p.sum()

    def objective(z, pivot):
        sol, dual = _solve(to_simplex(z, pivot), channel, q, warm[0])
        if dual is not None:
            warm[0] = dual
        return -sol.rate

    # Coordinates relative to the start's largest entry: a chart of the
    # simplex without the flat scale direction of an unnormalised vector.
    for k in starts if m > 1 else []:
        warm[0] = None
        x0 = grid[k]
        pivot = int(np.argmax(x0))
        z0 = np.delete(x0, pivot) / x0[pivot]
        step = 0.5 / (search.resolution * x0[pivot])
        simplex = [z0]
        for i in range(m - 1):
            e = z0.copy()
            e[i] += step
            simplex.append(e)
        res = minimize(
            objective, z0, args=(pivot,), method="Nelder-Mead",
            options={"initial_simplex": np.array(simplex), "xatol": 1e-9, "fatol": 1e-13,
                     "maxfev": search.maxfev_per_dim * m},
        )
        p = to_simplex(res.x, pivot)
        sol = _solve(p, channel, q)[0]
        if sol.rate > best.rate + 1e-12:
            best_p, best = p, sol
    return best_p, best


# ---------------------------------------------------------------------------
# brute-force oracle


def _complete_raw(free, px, py):
    """Fill the last row and column of couplings from their free cells."""
    m, n = px.size, py.size
    tables = np.empty((free.shape[0], m, n))
    tables[:, :-1, :-1] = free
    tables[:, :-1, -1] = px[:-1] - free.sum(2)
    tables[:, -1, :-1] = py[:-1] - free.sum(1)
    tables[:, -1, -1] = 1.0 - px[:-1].sum() - py[:-1].sum() + free.sum((1, 2))
    return tables


def _complete(free, px, py):
    tables = _complete_raw(free, px, py)
    ok = (tables >= -1e-15).all((1, 2))
    return np.clip(tables[ok], 0.0, None)


def _lattice_batches(axes, batch=1 << 18):
    """Cartesian product of 1-d value arrays, yielded in row batches."""
    if not axes:
        yield np.zeros((1, 0))
        return
    sizes = [len(ax) for ax in axes]
    total = math.prod(sizes)
    for start in range(0, total, batch):
        idx = np.unravel_index(np.arange(start, min(total, start + batch)), sizes)
        yield np.stack([ax[i] for ax, i in zip(axes, idx)], axis=1)


def lm_oracle(p_x, channel, q, resolution=64):
    """Brute-force LM value: minimum of I over lattice couplings.

    Candidates are couplings whose free cells (all but the last row and
    column) lie on a lattice of ``resolution + 1`` evenly spaced values between
    zero and the cell's largest feasible mass, together with the points
    obtained by moving one free cell so that the metric constraint is met with
    equality (the optimum lies on that hyperplane whenever the rate is
    positive), plus the true joint.  Every candidate satisfies the marginal and
    metric constraints exactly, so the result is never below the true LM rate
    and never above ``I(X;Y)``.
    """
    p_x = as_distribution(p_x, "p_x")
    channel = as_channel(channel)
    q = as_metric(q)
    check_shapes(channel, q)
    p_y, rows, cols = _support(p_x, channel)
    target = float((p_x[:, None] * channel * q).sum())
    px, py = p_x[rows], p_y[cols]
    qs = q[np.ix_(rows, cols)]
    prod = np.outer(px, py)
    slack = metric_slack(q)
    if (prod * qs).sum() >= target - slack:
        return 0.0
    true_joint = (p_x[:, None] * channel)[np.ix_(rows, cols)]
    best = float(xlogy(true_joint, true_joint / prod).sum())

    m, n = px.size, py.size
    nfree = (m - 1) * (n - 1)
    if nfree == 0:
        return max(best, 0.0)
    caps = np.minimum.outer(px[:-1], py[:-1]).ravel()
    # each free cell ranges over {0, c/N, ..., c} with c its largest feasible value
    axes = [c * np.arange(resolution + 1) / resolution for c in caps]
    count = (resolution + 1) ** nfree
    if count > ORACLE_GUARD:
        raise ResourceLimitError(f"oracle lattice has {count} points (guard {ORACLE_GUARD})")

    # E q is affine in the free cells: base + coef . v
    base = float((_complete_raw(np.zeros((1, m - 1, n - 1)), px, py)[0] * qs).sum())
    coef = (qs[:-1, :-1] - qs[:-1, -1:] - qs[-1:, :-1] + qs[-1, -1]).ravel()
    pivot = int(np.argmax(np.abs(coef)))

    def consider(tables):
        nonlocal best
        if tables.shape[0] == 0:
            return
        ok = (tables * qs).sum((1, 2)) >= target - slack
        tables = tables[ok]
        if tables.shape[0]:
            vals = xlogy(tables, tables / prod[None]).sum((1, 2))
            best = min(best, float(vals.min()))

    for free in _lattice_batches(axes):
        consider(_complete(free.reshape(-1, m - 1, n - 1), px, py))
    if abs(coef[pivot]) > 0:
        others = [ax for i, ax in enumerate(axes) if i != pivot]
        for part in _lattice_batches(others):
            rest = np.delete(coef, pivot) @ part.T if part.shape[1] else np.zeros(part.shape[0])
            v = (target - base - rest) / coef[pivot]
            free = np.insert(part, pivot, v, axis=1)
            free = free[(v >= 0) & (v <= caps[pivot])]
            consider(_complete(free.reshape(-1, m - 1, n - 1), px, py))
    return float(max(best, 0.0))

