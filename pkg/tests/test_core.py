import numpy as np
import pytest

from dlm_engine.core import (BlockRange, ConfigError, EngineError, GenerationConfig, LogitsMatrix, StateError,
                             new_generation_state, softmax, tokens_before_eos, top_confidence,
                             undecided_mask)


def test_new_state_layout():
    buf = new_generation_state([5, 7], 4, mask_id=0, eos_id=1)
    assert buf.ids.tolist() == [5, 7, 0, 0, 0, 0]
    assert buf.prompt_len == 2
    buf = new_generation_state([9], 1, mask_id=0, eos_id=1)
    assert buf.ids.tolist() == [9, 0] and buf.prompt_len == 1


@pytest.mark.parametrize("prompt,gen_len", [([5, 0, 7], 4), ([5], 0), ([], 4)])
def test_new_state_rejects(prompt, gen_len):
    with pytest.raises(ConfigError):
        new_generation_state(prompt, gen_len, mask_id=0, eos_id=1)


def test_undecided_mask():
    buf = new_generation_state([5, 7], 4, mask_id=0, eos_id=1)
    buf.ids[:] = [5, 7, 0, 3, 0, 0]
    assert undecided_mask(buf, BlockRange(2, 6)).tolist() == [True, False, True, True]
    buf.ids[2:] = 4
    assert not undecided_mask(buf, BlockRange(2, 6)).any()
    fresh = new_generation_state([5, 7], 4, mask_id=0, eos_id=1)
    assert undecided_mask(fresh, BlockRange(2, 6)).all()
    with pytest.raises(EngineError):
        undecided_mask(buf, BlockRange(2, 9))


def test_commit_guards():
    buf = new_generation_state([5, 7], 4, mask_id=0, eos_id=1)
    buf.commit([2, 4], [3, 3])
    with pytest.raises(StateError):
        buf.commit([2], [6])        # already decided
    with pytest.raises(StateError):
        buf.commit([1], [6])        # prompt
    with pytest.raises(StateError):
        buf.commit([3], [0])        # mask token
    assert buf.ids[:2].tolist() == [5, 7]


def test_tokens_before_eos():
    buf = new_generation_state([1], 5, mask_id=0, eos_id=9)
    buf.ids[1:] = [4, 4, 9, 4, 9]
    assert tokens_before_eos(buf) == 2
    buf.ids[1:] = [4, 4, 4, 4, 4]
    assert tokens_before_eos(buf) == 5
    buf.ids[0] = 9                  # EOS in the prompt does not count
    assert tokens_before_eos(buf) == 5


def test_block_range():
    b = BlockRange(2, 6)
    assert len(b) == 4 and b.positions().tolist() == [2, 3, 4, 5]
    with pytest.raises(ConfigError):
        BlockRange(5, 5)


def test_logits_rows():
    lm = LogitsMatrix([4, 2, 7], np.arange(9.0).reshape(3, 3))
    assert lm.row_index([2, 7]).tolist() == [1, 2]
    assert lm.restrict([7]).scores.tolist() == [[6.0, 7.0, 8.0]]
    with pytest.raises(Exception, match="no logits row"):
        lm.row_index([3])


def test_softmax_rows():
    rng = np.random.default_rng(0)
    p = softmax(rng.standard_normal((5, 11)) * 30)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    top, prob = top_confidence(np.log([[0.2, 0.5, 0.3]]))
    assert top.tolist() == [1] and prob[0] == pytest.approx(0.5)


def test_config_validation():
    GenerationConfig().validate()
    bad = [dict(gen_len=30, block_size=16), dict(decoder="beam"), dict(cache="lru"),
           dict(threshold=1.5), dict(hier_decode_threshold=0.5, hier_lower_bound=0.6),
           dict(credit_beta=1.0), dict(prefix_look=-1), dict(warmup_times=-1)]
    for kw in bad:
        with pytest.raises(ConfigError):
            GenerationConfig(**kw).validate()


def test_config_round_trip():
    cfg = GenerationConfig(decoder="credit", cache="vicinity", smooth_enabled=True, seed=3)
    assert GenerationConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        GenerationConfig.from_dict({"nope": 1})
    assert GenerationConfig(decoder="hierarchical").static_threshold == 0.92
