import itertools
import json
import math

import numpy as np
import pytest

from conftest import random_channel
from predecode.core import PreconditionError, ValidationError
from predecode.instances import SHIFT_BY_2, binary_example, quadratic_channel_2
from predecode.preprocessing import PreProcessor, all_maps
from predecode.simulate import (
    Codebook,
    build_decode_and_process,
    codebook_size,
    confidence_halfwidth,
    constant_block,
    decode_and_process_mismatch,
    find_region_points,
    q_decode,
    random_cc_codebook,
    reencode_preprocessor,
    round_composition,
    simulate,
    simulate_random_coding,
    simulate_vectorwise,
    symbolwise_lift,
)


def exact_error(w, cb, q, f):
    """Error probability of a fixed codebook by enumerating every output block."""
    w = np.asarray(w)
    fm = PreProcessor.from_any(f)
    total = 0.0
    ys = np.array(list(itertools.product(range(w.shape[1]), repeat=cb.n)))
    z = fm.apply(ys)
    dec = q_decode(q, cb, z)
    for m, x in enumerate(cb.codewords):
        prob = np.prod(w[x[None, :], ys], axis=1)
        total += prob[dec != m].sum()
    return total / cb.size


def within(res, value, k=4.0):
    return abs(res.p_err - value) <= k * res.ci95_halfwidth + 1e-12


# --- codebooks -------------------------------------------------------------

def test_codebook_two_words():
    cb = random_cc_codebook(4, math.log(2) / 4, [0.5, 0.5], seed=1)
    assert cb.size == 2 and cb.n == 4
    assert all(np.bincount(row, minlength=2).tolist() == [2, 2] for row in cb.codewords)


def test_codebook_exact_type():
    cb = random_cc_codebook(12, 0.2, [1 / 3, 1 / 3, 1 / 3], seed=5)
    assert cb.size == math.ceil(math.exp(12 * 0.2))
    for row in cb.codewords:
        assert np.bincount(row, minlength=3).tolist() == [4, 4, 4]


def test_codebook_deterministic():
    a = random_cc_codebook(10, 0.3, [0.3, 0.7], seed=9)
    b = random_cc_codebook(10, 0.3, [0.3, 0.7], seed=9)
    assert np.array_equal(a.codewords, b.codewords)


def test_codebook_errors():
    with pytest.raises(ValidationError):
        random_cc_codebook(4, math.log(3), [0.5, 0.5], seed=0)
    with pytest.raises(ValidationError):
        Codebook(np.array([[0, 1], [1, 1]]), composition=[0.5, 0.5])
    with pytest.raises(ValidationError):
        Codebook(np.zeros((0, 3), dtype=int))


def test_round_composition():
    assert round_composition([0.5, 0.25, 0.25], 4).tolist() == [2, 1, 1]
    assert round_composition([1 / 3, 1 / 3, 1 / 3], 4).sum() == 4
    assert codebook_size(8, 0.0, 2) == 1


def test_confidence_halfwidth():
    assert confidence_halfwidth(500, 1000) == pytest.approx(1.96 * math.sqrt(0.25 / 1000), rel=1e-3)
    assert confidence_halfwidth(0, 1000) > 0
    assert confidence_halfwidth(1000, 1000) > 0
    assert confidence_halfwidth(0, 1000) == pytest.approx(confidence_halfwidth(1000, 1000))


# --- symbolwise simulation -------------------------------------------------

def test_noiseless_matched_is_error_free():
    w = np.eye(3)
    cb = Codebook(np.array([[0, 1, 2], [1, 2, 0], [2, 0, 1]]))
    res = simulate(w, cb, np.log(np.eye(3) + 1e-300), PreProcessor.identity(3), 2000, seed=0)
    assert res.errors == 0 and res.p_err == 0.0


def test_quadratic_channel_2_examples():
    w, q = quadratic_channel_2()
    cb = Codebook(np.array([[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 0, 1]]))
    assert simulate(w, cb, q, PreProcessor.identity(4), 3000, seed=1).p_err == 1.0
    assert simulate(w, cb, q, SHIFT_BY_2, 3000, seed=1).p_err == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_matches_exact_error(seed):
    rng = np.random.default_rng(seed)
    w = random_channel(rng, 2, 3)
    q = rng.normal(size=(2, 3))
    cb = Codebook(rng.integers(0, 2, size=(3, 5)))
    f = rng.integers(0, 3, size=3)
    res = simulate(w, cb, q, f, 40000, seed=seed)
    assert within(res, exact_error(w, cb, q, f))


def test_ties_are_errors():
    w = np.full((2, 2), 0.5)
    cb = Codebook(np.array([[0, 1], [1, 0]]))
    res = simulate(w, cb, np.zeros((2, 2)), PreProcessor.identity(2), 500, seed=0)
    assert res.p_err == 1.0


def test_determinism_and_thread_invariance():
    w, q = binary_example()
    cb = random_cc_codebook(16, 0.2, [0.5, 0.5], seed=3)
    a = simulate(w, cb, q, [1, 0], 20000, seed=11, threads=1)
    b = simulate(w, cb, q, [1, 0], 20000, seed=11, threads=4)
    assert a == b
    c = simulate(w, cb, q, [1, 0], 20000, seed=12)
    assert c.errors != a.errors or c.seed != a.seed


def test_stochastic_pre_processor():
    w, q = binary_example()
    cb = random_cc_codebook(6, 0.2, [0.5, 0.5], seed=0)
    k = np.array([[0.2, 0.8], [0.7, 0.3]])
    res = simulate(w, cb, q, k, 20000, seed=2)
    # the mixed kernel composes to a single channel; compare with its exact error
    v = w @ k
    assert within(res, exact_error(v, cb, q, PreProcessor.identity(2)))


def test_trace(tmp_path):
    w, q = binary_example()
    cb = random_cc_codebook(6, 0.2, [0.5, 0.5], seed=0)
    path = tmp_path / "trace.jsonl"
    res = simulate(w, cb, q, [1, 0], 50, seed=4, trace=path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == 50
    assert set(rows[0]) == {"seed", "m", "m_hat", "tie_flag"}
    assert sum(r["m"] != r["m_hat"] for r in rows) == res.errors
    assert all(r["tie_flag"] == (r["m_hat"] == -1) for r in rows)


def test_useless_metric_positivity():
    # additive metric: every enumerated map leaves the decoder blind
    rng = np.random.default_rng(0)
    w = random_channel(rng, 2, 3)
    q = np.array([0.0, 1.0])[:, None] + np.array([0.5, -1.0, 2.0])[None, :]
    cb = Codebook(np.array([[0, 1, 0, 1, 1, 0], [1, 0, 1, 0, 0, 1]]))
    for f in all_maps(3):
        res = simulate(w, cb, q, f, 2000, seed=1)
        assert res.p_err >= 0.5 - 3 * res.ci95_halfwidth


# --- vectorwise ------------------------------------------------------------

def test_symbolwise_lift_matches():
    w, q = binary_example()
    cb = random_cc_codebook(10, 0.2, [0.5, 0.5], seed=1)
    a = simulate(w, cb, q, [1, 0], 10000, seed=3)
    b = simulate_vectorwise(w, cb, q, symbolwise_lift([1, 0]), 10000, seed=3)
    assert a == b


def test_constant_block():
    w, q = binary_example()
    cb = random_cc_codebook(10, 0.2, [0.5, 0.5], seed=1)
    res = simulate_vectorwise(w, cb, q, constant_block(np.zeros(10, dtype=int)), 5000, seed=0)
    assert res.p_err >= 1 - 1 / cb.size - res.ci95_halfwidth


def test_vectorwise_shape_check():
    w, q = binary_example()
    cb = random_cc_codebook(4, 0.1, [0.5, 0.5], seed=1)
    with pytest.raises(ValidationError):
        simulate_vectorwise(w, cb, q, lambda y, rng: y[:, :2], 10, seed=0)


def test_decode_and_process_noiseless():
    w = np.eye(3)
    q = np.eye(3)
    cb = Codebook(np.array([[0, 1, 2], [1, 2, 0], [2, 0, 1]]))
    dp = build_decode_and_process(w, cb, q)
    assert simulate_vectorwise(w, cb, q, dp, 2000, seed=0).p_err == 0.0


@pytest.mark.parametrize("seed", range(6))
def test_decode_and_process_exact(seed):
    rng = np.random.default_rng(seed)
    w = random_channel(rng, 3, 3)
    q = rng.normal(size=(3, 3))
    cb = Codebook(rng.integers(0, 3, size=(3, 5)))
    dp = build_decode_and_process(w, cb, q)
    for m, z in dp.target_points.items():
        assert q_decode(q, cb, z[None])[0] == m
    assert decode_and_process_mismatch(dp, 5000, seed) == 0


def test_empty_region_is_reported():
    q = np.zeros((2, 2))
    cb = Codebook(np.array([[0, 1], [1, 0]]))
    with pytest.raises(PreconditionError, match="message 0"):
        find_region_points(q, cb, 2)


def test_random_probe_search():
    rng = np.random.default_rng(3)
    q = rng.normal(size=(2, 3))
    cb = Codebook(rng.integers(0, 2, size=(3, 20)))
    pts = find_region_points(q, cb, 3, probes=1000)
    assert all(q_decode(q, cb, pts[m][None])[0] == m for m in range(3))


def test_reencode_factor_two():
    rng = np.random.default_rng(4)
    w = random_channel(rng, 2, 2, floor=0.05)
    q = rng.normal(size=(2, 2))
    cb = Codebook(np.array([[0, 0, 1, 1], [1, 1, 0, 0]]))
    f_tilde = symbolwise_lift([0, 1])
    given = simulate_vectorwise(w, cb, q, f_tilde, 20000, seed=1)
    built = simulate_vectorwise(w, cb, q, reencode_preprocessor(w, cb, f_tilde), 20000, seed=2)
    assert built.p_err <= 2 * given.p_err + 3 * (built.ci95_halfwidth + 2 * given.ci95_halfwidth)


# --- ensemble sampler ------------------------------------------------------

def literal_ensemble(w, q, f, n, rate, composition, trials, seed):
    """Independent reference: draw a full fresh codebook for every trial."""
    rng = np.random.default_rng(seed)
    f = PreProcessor.from_any(f)
    counts = round_composition(composition, n)
    m = math.ceil(math.exp(n * rate) - 1e-9)
    base = np.repeat(np.arange(len(counts)), counts)
    cdf = np.cumsum(w, axis=1)
    errors = 0
    for _ in range(trials):
        words = rng.permuted(np.tile(base, (m, 1)), axis=1)
        y = (rng.random(n)[:, None] >= cdf[words[0]]).sum(-1)
        z = f.apply(np.minimum(y, w.shape[1] - 1))
        s = np.round(q[words, z[None, :]].sum(axis=1), 12)
        errors += int(np.any(s[1:] >= s[0]))
    return errors / trials


@pytest.mark.parametrize("rate", [0.15, 0.35])
def test_ensemble_sampler_matches_literal_codebooks(rate):
    w, q = binary_example()
    trials = 6000
    res = simulate_random_coding(w, q, [1, 0], 10, rate, [0.5, 0.5], trials, seed=0)
    ref = literal_ensemble(w, q, [1, 0], 10, rate, [0.5, 0.5], trials, seed=1)
    ref_ci = confidence_halfwidth(round(ref * trials), trials)
    assert abs(res.p_err - ref) <= 3 * math.hypot(res.ci95_halfwidth, ref_ci) + 1e-12


def test_ensemble_thread_invariance():
    w, q = binary_example()
    a = simulate_random_coding(w, q, [1, 0], 16, 0.2, [0.5, 0.5], 9000, seed=5, threads=1)
    b = simulate_random_coding(w, q, [1, 0], 16, 0.2, [0.5, 0.5], 9000, seed=5, threads=3)
    assert a == b


def test_ensemble_identity_fails_with_flipping_metric():
    w, q = binary_example()
    res = simulate_random_coding(w, q, [0, 1], 16, 0.1, [0.5, 0.5], 2000, seed=0)
    assert res.p_err > 0.9
