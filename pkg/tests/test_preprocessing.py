import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_channel
from oracles import h2
from predecode.core import ResourceLimitError, ValidationError, channel_capacity, compose_channel
from predecode.instances import binary_example
from predecode.lm import lm_rate, lm_rate_max_input
from predecode.preprocessing import (
    PreProcessor,
    convexity_witness,
    output_information,
    r_pre_lm,
    r_pre_lm_budgeted,
    r_pre_lm_sampled,
    relabel,
)

C_BSC = math.log(2) - h2(0.1)
FLIP = np.array([[0.0, 1.0], [1.0, 0.0]])


def small_instance(seed, m=2, n=3):
    rng = np.random.default_rng(seed)
    return random_channel(rng, m, n), rng.normal(size=(m, n))


def test_preprocessor_forms():
    f = PreProcessor.from_any([1, 0])
    assert f.deterministic and f.size == 2
    assert np.array_equal(f.matrix(), FLIP)
    assert np.array_equal(f.apply(np.array([0, 1, 1])), [1, 0, 0])
    k = PreProcessor.from_any([[0.5, 0.5], [0.0, 1.0]])
    assert not k.deterministic
    z = k.apply(np.zeros(10000, dtype=int), np.random.default_rng(0))
    assert abs(z.mean() - 0.5) < 0.02
    assert PreProcessor.from_any(f.to_json()) == f
    with pytest.raises(ValidationError):
        PreProcessor(mapping=(0, 2))
    with pytest.raises(ValidationError):
        PreProcessor(kernel=np.ones((2, 3)) / 3)


def test_binary_example_picks_flip():
    w, q = binary_example()
    rep = r_pre_lm(w, q)
    assert rep.best_f.mapping == (1, 0)
    assert rep.rate == pytest.approx(C_BSC, abs=1e-9)
    assert rep.rate >= max(r for _, r in rep.per_function_rates) - 1e-12
    v = compose_channel(w, rep.best_f.matrix())
    assert lm_rate_max_input(v, q)[1].rate == pytest.approx(rep.rate, abs=1e-9)


def test_binary_matched_ordering_keeps_identity():
    w, _ = binary_example()
    rep = r_pre_lm(w, np.eye(2))
    assert rep.best_f.mapping == (0, 1)
    assert rep.rate == pytest.approx(C_BSC, abs=1e-9)


def test_useless_metric_gives_zero():
    rng = np.random.default_rng(1)
    w = random_channel(rng, 3, 3)
    q = rng.normal(size=3)[:, None] + rng.normal(size=3)[None, :]
    rep = r_pre_lm(w, q)
    assert rep.rate <= 1e-9
    assert all(r <= 1e-9 for _, r in rep.per_function_rates)


def test_enumeration_cap():
    w = np.full((2, 7), 1 / 7)
    with pytest.raises(ResourceLimitError, match="r_pre_lm_sampled"):
        r_pre_lm(w, np.zeros((2, 7)))


def test_sampled_identity_only():
    w, q = small_instance(2)
    rep = r_pre_lm_sampled(w, q, n_samples=0, seed=0)
    assert rep.rate == pytest.approx(lm_rate_max_input(w, q)[1].rate, abs=1e-12)


def test_sampled_constant_maps_only():
    w, q = small_instance(3)
    rep = r_pre_lm_sampled(w, q, n_samples=0, seed=0, include_identity=False)
    assert rep.rate == 0.0


def test_sampled_never_beats_deterministic():
    w, q = binary_example()
    sampled = r_pre_lm_sampled(w, q, n_samples=1000, seed=7)
    assert sampled.rate <= r_pre_lm(w, q).rate + 1e-9


@settings(max_examples=10)
@given(st.integers(0, 10**6))
def test_deterministic_dominance(seed):
    w, q = small_instance(seed)
    det = r_pre_lm(w, q)
    assert r_pre_lm_sampled(w, q, n_samples=30, seed=seed).rate <= det.rate + 1e-9
    # identity floor
    assert det.rate >= lm_rate_max_input(w, q)[1].rate - 1e-9


@settings(max_examples=10)
@given(st.integers(0, 10**6), st.permutations(range(3)))
def test_permutation_equivariance(seed, perm):
    w, q = small_instance(seed)
    w2, q2 = relabel(w, q, perm)
    assert r_pre_lm(w2, q2).rate == pytest.approx(r_pre_lm(w, q).rate, abs=1e-9)


def test_budget_extremes():
    w, q = binary_example()
    full = r_pre_lm(w, q)
    wide = r_pre_lm_budgeted(w, q, math.log(2))
    assert wide.rate == pytest.approx(full.rate, abs=1e-12)
    assert wide.best_f == full.best_f
    assert r_pre_lm_budgeted(w, q, 0.0).rate == 0.0
    with pytest.raises(ValidationError):
        r_pre_lm_budgeted(w, q, -1.0)


def test_budget_half_bit():
    w, q = binary_example()
    b = 0.5 * math.log(2)
    rep = r_pre_lm_budgeted(w, q, b, n_samples=50, seed=0)
    assert rep.budget_constraint == b
    assert output_information(rep.best_p_x, w, rep.best_f) <= b + 1e-12
    assert rep.rate <= r_pre_lm(w, q).rate + 1e-12
    # direct evaluation over the feasible deterministic maps
    direct = 0.0
    for m in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        f = PreProcessor(mapping=m)
        p_x, sol = lm_rate_max_input(compose_channel(w, f.matrix()), q)
        if output_information(p_x, w, f) <= b:
            direct = max(direct, sol.rate)
    assert rep.rate >= direct - 1e-12


@settings(max_examples=8)
@given(st.integers(0, 10**6))
def test_budget_monotone(seed):
    w, q = small_instance(seed, 2, 2)
    rates = [r_pre_lm_budgeted(w, q, b, n_samples=10, seed=seed).rate for b in (0.0, 0.1, 0.3, 0.7)]
    assert all(a <= b + 1e-12 for a, b in zip(rates, rates[1:]))


def test_convexity_examples():
    w, q = binary_example()
    p = [0.5, 0.5]
    lhs, rhs = convexity_witness(w, q, p, np.eye(2), np.eye(2), 0.3)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    lhs, rhs = convexity_witness(w, q, p, np.eye(2), FLIP, 0.5)
    assert lhs <= rhs + 1e-12
    with pytest.raises(ValidationError):
        convexity_witness(w, q, p, np.eye(2), np.eye(3), 0.5)


@pytest.mark.parametrize("seed", range(100))
def test_convexity_random_kernels(seed):
    rng = np.random.default_rng(seed)
    m, n = 2 + seed % 2, 2 + seed % 3
    w = random_channel(rng, m, n)
    q = rng.normal(size=(m, n))
    p = rng.dirichlet(np.ones(m))
    k1, k2 = random_channel(rng, n, n), random_channel(rng, n, n)
    lhs, rhs = convexity_witness(w, q, p, k1, k2, rng.uniform(0.05, 0.95))
    assert lhs <= rhs + 1e-6


def test_output_information():
    w, _ = binary_example()
    assert output_information([0.5, 0.5], w, PreProcessor.identity(2)) == pytest.approx(math.log(2))
    assert output_information([0.5, 0.5], w, PreProcessor(mapping=(0, 0))) == 0.0


def test_pruned_bounds_never_exceed_rate():
    w, q = small_instance(11)
    rep = r_pre_lm(w, q)
    assert rep.pruned
    for f, bound in rep.pruned:
        v = compose_channel(w, f.matrix())
        # every recorded bound really bounds the capacity of the skipped channel
        assert bound >= channel_capacity(v)[0] - 1e-9
        assert lm_rate_max_input(v, q)[1].rate <= rep.rate + 1e-9
