import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_channel
from oracles import h2, lm_cvx, mi
from predecode.core import ResourceLimitError, ValidationError, input_mutual_information, log_metric
from predecode.instances import quadratic_channel_1
from predecode.lm import SimplexSearch, lm_oracle, lm_rate, lm_rate_max_input

BSC = np.array([[0.9, 0.1], [0.1, 0.9]])
EQ = np.eye(2)

# LM rates of three fixed instances, computed with the primal convex program
# in tests/oracles.py (cvxpy + Clarabel) and frozen here.
FROZEN = [
    ([0.3, 0.7], [[0.8, 0.2], [0.3, 0.7]], [[1.0, -0.5], [0.2, 0.4]], 0.1104131),
    ([0.2, 0.5, 0.3], [[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]],
     [[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]], 0.0),
    ([0.5, 0.5], [[0.6, 0.3, 0.1], [0.1, 0.3, 0.6]], [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], 0.1981216),
]


def instance(seed, m, n):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(m)), random_channel(rng, m, n), rng.normal(size=(m, n))


def test_noiseless_binary():
    assert lm_rate([0.5, 0.5], EQ, EQ).rate == pytest.approx(math.log(2), abs=1e-9)


def test_constant_metric_gives_zero():
    assert lm_rate([0.3, 0.7], BSC, np.ones((2, 2))).rate == 0.0


def test_bsc_matched_ordering():
    # the exact value is log 2 - h(0.1) = 0.3680642...
    assert lm_rate([0.5, 0.5], BSC, EQ).rate == pytest.approx(math.log(2) - h2(0.1), abs=1e-9)


@pytest.mark.parametrize("p_x,w,q,expected", FROZEN)
def test_frozen_values(p_x, w, q, expected):
    assert lm_rate(p_x, w, q).rate == pytest.approx(expected, abs=1e-6)


def test_frozen_values_match_reference():
    for p_x, w, q, expected in FROZEN:
        assert lm_cvx(p_x, w, q) == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("seed", range(25))
def test_against_convex_reference(seed):
    m, n = 2 + seed % 3, 2 + (seed // 3) % 3
    p, w, q = instance(seed, m, n)
    assert lm_rate(p, w, q).rate == pytest.approx(lm_cvx(p, w, q), abs=1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_oracle_sandwich(seed):
    m = 2 + seed % 2
    p, w, q = instance(100 + seed, m, m)
    rate = lm_rate(p, w, q).rate
    oracle = lm_oracle(p, w, q, resolution=64)
    assert oracle >= rate - 1e-6
    assert oracle - rate <= 0.02


def test_oracle_coarse_lattice_and_constant():
    p, w, q = instance(3, 2, 2)
    assert lm_oracle(p, w, q, resolution=1) >= lm_rate(p, w, q).rate - 1e-9
    assert lm_oracle(p, w, np.zeros((2, 2))) == 0.0


def test_oracle_guard():
    p, w, q = instance(4, 4, 4)
    with pytest.raises(ResourceLimitError):
        lm_oracle(p, w, q, resolution=64)


@given(st.integers(0, 10**6))
def test_solution_invariants(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(2, 5, size=2)
    p, w, q = instance(seed, m, n)
    sol = lm_rate(p, w, q)
    j = sol.minimizer
    assert np.abs(j.sum(axis=1) - p).max() <= 1e-8
    assert np.abs(j.sum(axis=0) - p @ w).max() <= 1e-8
    assert (j * q).sum() >= (p[:, None] * w * q).sum() - 1e-8
    assert sol.rate == pytest.approx(mi(j), abs=1e-9)
    assert sol.rate <= input_mutual_information(p, w) + 1e-9
    assert sol.solver_status == "converged"


@given(st.integers(0, 10**6))
def test_matched_metric_gives_mutual_information(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(2, 5, size=2)
    p = rng.dirichlet(np.ones(m))
    w = random_channel(rng, m, n, floor=0.01)
    assert lm_rate(p, w, log_metric(w)).rate == pytest.approx(input_mutual_information(p, w), abs=1e-6)


@given(st.integers(0, 10**6))
def test_invariant_under_additive_terms_and_scaling(seed):
    rng = np.random.default_rng(seed)
    p, w, q = instance(seed, 3, 3)
    a, b = rng.normal(size=3), rng.normal(size=3)
    base = lm_rate(p, w, q).rate
    assert lm_rate(p, w, 2.5 * q + a[:, None] + b[None, :]).rate == pytest.approx(base, abs=1e-7)


@given(st.integers(0, 10**6))
def test_output_relabeling(seed):
    rng = np.random.default_rng(seed)
    p, w, q = instance(seed, 3, 4)
    perm = rng.permutation(4)
    assert lm_rate(p, w[:, perm], q[:, perm]).rate == pytest.approx(lm_rate(p, w, q).rate, abs=1e-8)


@given(st.integers(0, 10**6))
def test_useless_metric_rate_zero(seed):
    rng = np.random.default_rng(seed)
    p, w, _ = instance(seed, 3, 3)
    q = rng.normal(size=3)[:, None] + rng.normal(size=3)[None, :]
    assert lm_rate(p, w, q).rate <= 1e-9


@given(st.integers(0, 10**6))
def test_mutual_information_convexity(seed):
    rng = np.random.default_rng(seed)
    p_x = rng.dirichlet(np.ones(3))
    p_y = rng.dirichlet(np.ones(3))
    # two couplings with the same marginals
    j1 = np.outer(p_x, p_y)
    w = random_channel(rng, 3, 3)
    j2 = p_x[:, None] * w
    a = rng.uniform(0.01, 0.99)
    assert mi(a * j1 + (1 - a) * j2) <= a * mi(j1) + (1 - a) * mi(j2) + 1e-9


def test_validation_errors():
    with pytest.raises(ValidationError):
        lm_rate([0.5, 0.5], BSC, np.eye(3))
    with pytest.raises(ValidationError):
        lm_rate([1.0], BSC, EQ)


def test_max_input_symmetric_is_uniform():
    p, sol = lm_rate_max_input(BSC, EQ)
    assert np.allclose(p, 0.5, atol=1e-3)
    assert sol.rate == pytest.approx(math.log(2) - h2(0.1), abs=1e-9)


def test_max_input_dominated_duplicate_row():
    # input 2 duplicates input 0's outputs but the metric never favours it
    w = np.array([[0.9, 0.1], [0.1, 0.9], [0.9, 0.1]])
    q = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    p, sol = lm_rate_max_input(w, q)
    assert sol.rate == pytest.approx(math.log(2) - h2(0.1), abs=1e-6)
    assert p[2] <= 1e-6


def test_max_input_quadratic_channel_1():
    w, q = quadratic_channel_1()
    p, sol = lm_rate_max_input(w, q)
    assert sol.rate == pytest.approx(math.log(3), abs=1e-6)


def test_max_input_extra_points_are_used():
    w = np.array([[0.9, 0.1], [0.2, 0.8]])
    q = np.eye(2)
    _, coarse = lm_rate_max_input(w, q, SimplexSearch(resolution=2, n_starts=0))
    _, fine = lm_rate_max_input(w, q)
    assert coarse.rate <= fine.rate + 1e-12


def test_face_projection_with_unreachable_marginals_is_fast():
    # zero rows force the projection onto a support that cannot hit the
    # marginals exactly; this used to run the full iteration cap per solve
    import time

    q = np.array([[1.0, 2.0, 1.0], [-1.0, -1.0, 1.0], [1.0, 1.0, 2.0]])
    w = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3]])
    t0 = time.perf_counter()
    p_x, sol = lm_rate_max_input(w, q)
    assert time.perf_counter() - t0 < 60
    assert sol.rate == pytest.approx(lm_cvx(p_x, w, q), abs=1e-6)
    assert sol.rate >= math.log(2) - 1e-6
