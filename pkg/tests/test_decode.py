import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from dlm_engine.core import BlockRange, LogitsMatrix
from dlm_engine.decode import (DecodeError, credit_decode, credit_fuse, credit_reset, credit_update,
                               hierarchical_decode, new_credit_table, threshold_decode)


def conf_logits(conf, vocab=4, start=0, token=0):
    """Rows whose argmax is ``token`` with probability ``conf[i]``."""
    conf = np.asarray(conf, dtype=float)
    rest = (1 - conf) / (vocab - 1)
    scores = np.log(np.repeat(rest[:, None], vocab, axis=1))
    scores[:, token] = np.log(conf)
    return LogitsMatrix(np.arange(start, start + conf.size), scores)


def test_threshold_examples():
    lm = conf_logits([0.95, 0.70, 0.85])
    assert threshold_decode(lm, [True] * 3, 0.8).positions.tolist() == [0, 2]
    lm = conf_logits([0.5, 0.6])
    assert threshold_decode(lm, [True, True], 0.8).positions.tolist() == [1]
    lm = conf_logits([0.3, 0.4, 0.35])
    assert threshold_decode(lm, [True] * 3, 0.0).positions.tolist() == [0, 1, 2]


def test_threshold_skips_decided_and_needs_work():
    lm = conf_logits([0.99, 0.5, 0.9])
    out = threshold_decode(lm, [False, True, True], 0.8)
    assert out.positions.tolist() == [2] and out.tokens.tolist() == [0]
    assert threshold_decode(lm, [False, True, False], 0.8).positions.tolist() == [1]
    with pytest.raises(DecodeError):
        threshold_decode(lm, [False] * 3, 0.8)
    with pytest.raises(DecodeError):
        threshold_decode(lm, [True] * 2, 0.8)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.26, 0.999), min_size=1, max_size=16), st.floats(0.0, 1.0),
       st.integers(0, 2 ** 16))
def test_threshold_matches_loop(conf, tau, seed):
    rng = np.random.default_rng(seed)
    und = rng.random(len(conf)) < 0.7
    und[rng.integers(len(conf))] = True
    lm = conf_logits(conf)
    p = np.exp(lm.scores) / np.exp(lm.scores).sum(axis=1, keepdims=True)
    # exact ties with tau depend on the last bit of the softmax
    assume(np.all(np.abs(p.max(axis=1) - tau) > 1e-9))
    want = [i for i in range(len(conf)) if und[i] and p[i].max() >= tau]
    if not want:
        want = [max((i for i in range(len(conf)) if und[i]), key=lambda i: (p[i].max(), -i))]
    assert threshold_decode(lm, und, tau).positions.tolist() == want


def _hier_run(n, conf, high=0.92, low=0.62):
    """Repeatedly decode a span with fixed confidences; returns commit sets per call."""
    lm = conf_logits(np.full(n, conf))
    und = np.ones(n, dtype=bool)
    seq = []
    while und.any():
        out = hierarchical_decode(lm, und, BlockRange(0, n), high, low)
        seq.append(out.positions.tolist())
        und[out.positions] = False
    return seq


def test_hierarchical_eight_positions():
    assert _hier_run(8, 0.7) == [[3], [1, 5], [0, 2, 4, 6], [7]]


def test_hierarchical_log_depth():
    assert len(_hier_run(64, 0.7)) == 7
    assert len(_hier_run(1, 0.7)) == 1


def test_hierarchical_saturated_and_fallback():
    assert _hier_run(8, 0.95) == [list(range(8))]
    lm = conf_logits([0.3, 0.5, 0.4, 0.2])
    out = hierarchical_decode(lm, [True] * 4, BlockRange(0, 4))
    assert out.positions.tolist() == [1]


def test_hierarchical_one_per_run():
    # splits at 4, then 2 and 6: runs {0,1}, {3}, {4}, {6,7}
    lm = conf_logits([0.7, 0.8, 0.99, 0.7, 0.7, 0.99, 0.65, 0.7])
    und = np.array([1, 1, 0, 1, 1, 0, 1, 1], dtype=bool)
    out = hierarchical_decode(lm, und, BlockRange(0, 8))
    assert out.positions.tolist() == [1, 3, 4, 7]


def test_hierarchical_errors():
    lm = conf_logits([0.7] * 4)
    with pytest.raises(DecodeError):
        hierarchical_decode(lm, [True] * 4, BlockRange(0, 4), high=0.5, low=0.6)
    with pytest.raises(DecodeError):
        hierarchical_decode(lm, [True] * 4, BlockRange(1, 5))


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(0.26, 0.999), min_size=1, max_size=24), st.integers(0, 2 ** 16))
def test_hierarchical_commits_are_valid(conf, seed):
    rng = np.random.default_rng(seed)
    und = rng.random(len(conf)) < 0.6
    und[rng.integers(len(conf))] = True
    out = hierarchical_decode(conf_logits(conf), und, BlockRange(0, len(conf)))
    pos = out.positions
    assert pos.size >= 1 and und[pos].all() and np.unique(pos).size == pos.size


def _block_logits(probs):
    return LogitsMatrix(np.arange(len(probs)), np.log(np.asarray(probs, dtype=float)))


def test_credit_update_examples():
    block = BlockRange(0, 1)
    t = new_credit_table(block, 3, beta=0.9, gamma=0.5)
    lm = _block_logits([[0.64, 0.18, 0.18]])
    t1 = credit_update(t, lm, [True])
    assert t1.scores[0, 0] == pytest.approx(0.8, abs=1e-12)
    t2 = credit_update(t1, lm, [True])
    assert t2.scores[0, 0] == pytest.approx(1.52, abs=1e-12)
    prior = new_credit_table(block, 3, beta=0.9, gamma=0.5)
    prior.scores[0, 1] = 1.0
    assert credit_update(prior, lm, [True]).scores[0, 1] == pytest.approx(0.9, abs=1e-12)


def test_credit_update_leaves_decided_rows():
    t = new_credit_table(BlockRange(0, 2), 3)
    t.scores[:] = 1.0
    lm = _block_logits([[0.5, 0.25, 0.25], [0.5, 0.25, 0.25]])
    out = credit_update(t, lm, [False, True])
    assert out.scores[0].tolist() == [1.0, 1.0, 1.0]
    assert t.scores[1].tolist() == [1.0, 1.0, 1.0]      # input table untouched


def test_credit_fuse_examples():
    lm = LogitsMatrix([0], [[2.0, 2.0]])
    t = new_credit_table(BlockRange(0, 1), 2)
    t.scores[0] = [1.0, 0.0]
    fused = credit_fuse(lm, t, alpha=1.0)
    assert fused.scores[0].tolist() == [2.0 + math.log(2), 2.0]
    assert int(np.argmax(fused.scores[0])) == 0
    assert np.array_equal(credit_fuse(lm, t, alpha=0.0).scores, lm.scores)
    assert np.array_equal(credit_fuse(lm, credit_reset(t)).scores, lm.scores)
    t.scores[0, 1] = -0.5
    with pytest.raises(DecodeError):
        credit_fuse(lm, t)


def test_credit_reset():
    t = new_credit_table(BlockRange(4, 8), 5)
    t.scores[:] = 3.0
    r = credit_reset(t, BlockRange(8, 12))
    assert not r.scores.any() and r.block == BlockRange(8, 12)
    assert np.array_equal(credit_reset(r).scores, r.scores)


def test_credit_decode_alpha_zero_is_threshold():
    rng = np.random.default_rng(4)
    for _ in range(50):
        lm = LogitsMatrix(np.arange(8), rng.standard_normal((8, 6)) * 3)
        und = rng.random(8) < 0.7
        und[0] = True
        t = new_credit_table(BlockRange(0, 8), 6, alpha=0.0)
        t.scores[:] = rng.random((8, 6)) * 4
        got, _ = credit_decode(lm, und, t, 0.8)
        want = threshold_decode(lm, und, 0.8)
        assert got.pairs() == want.pairs()


def test_credit_accumulation_lifts_commit():
    # p*=0.7 never clears 0.8 alone; credit pushes it over after a step or two
    lm = _block_logits([[0.7, 0.1, 0.1, 0.1]] * 2)
    t = new_credit_table(BlockRange(0, 2), 4, alpha=1.0)
    out, t = credit_decode(lm, [True, True], t, 0.8)
    assert out.positions.tolist() == [0, 1]
