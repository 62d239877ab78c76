import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dlm_engine.bench import (SuiteFormatError, SuiteItem, aggregate, capture_trace, dumps_report,
                              load_suite, mean, parse_suite, replay_trace, run_benchmark,
                              strip_timing, tpf, tps, write_suite)
from dlm_engine.bench.metrics import MetricError
from dlm_engine.core import GenerationConfig, GenerationResult
from dlm_engine.engine import generate
from dlm_engine.model import ScriptFormatError, ToyModel, ToyModelParams


def result(T, F, t=1.0):
    return GenerationResult(np.zeros(1, dtype=np.int64), 0, T, F, t)


def test_tpf_examples():
    assert tpf(result(8, 2)) == 4.0
    assert tpf(result(5, 5)) == 1.0
    with pytest.raises(MetricError):
        tpf(result(3, 0))


def test_tps_examples():
    assert tps(result(100, 1, 0.5)) == 200.0
    assert tps(result(100, 1, 1.0)) == tps(result(100, 1, 0.5)) / 2
    assert mean([100.0, 300.0]) == 200.0
    with pytest.raises(MetricError):
        tps(result(3, 1, 0.0))


def test_tokens_after_eos_not_counted():
    from dlm_engine.bench.workloads import eos_suite
    model, prompt, eos_at = eos_suite(n_seqs=1)[0]
    res = generate(model, prompt, GenerationConfig(gen_len=64, block_size=16))
    assert res.tokens_before_eos == eos_at
    assert tpf(res) == eos_at / res.forwards


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=40), st.randoms())
def test_mean_order_free(values, rnd):
    shuffled = values[:]
    rnd.shuffle(shuffled)
    assert mean(values) == mean(shuffled)
    assert abs(mean(values) - sum(values) / len(values)) <= 1e-9 * max(1.0, max(values))


def test_parse_suite_forms():
    text = '{"schema": "dlm-suite", "version": 1}\n# note\n\n{"id": "a", "prompt": [1, 2]}\n' \
           '{"id": 2, "prompt": [3], "reference": "x"}\n'
    items = parse_suite(text)
    assert [(i.id, i.prompt, i.reference) for i in items] == [("a", [1, 2], None), (2, [3], "x")]


@pytest.mark.parametrize("text,loc", [
    ("", "<suite>"),
    ('{"id": 1, "prompt": [1]}\n{"id": 1, "prompt": [2]}', "<suite>:2"),
    ('{"id": 1, "prompt": []}', "<suite>:1"),
    ('{"id": 1}', "<suite>:1"),
    ('{"id": 1, "prompt": [1]}\n{"id": 2, "prom', "<suite>:2:"),
    ('{"id": 1, "prompt": [1]}\n{"schema": "dlm-suite", "version": 1}', "<suite>:2"),
])
def test_parse_suite_errors(text, loc):
    with pytest.raises(SuiteFormatError) as info:
        parse_suite(text)
    assert str(info.value).startswith(loc)


def test_suite_file_round_trip(tmp_path):
    items = [SuiteItem("a", [1, 2], "ref"), SuiteItem(7, [3])]
    path = tmp_path / "s.jsonl"
    write_suite(path, items)
    assert load_suite(path) == items


@pytest.fixture(scope="module")
def toy():
    return ToyModel(ToyModelParams(seed=9, logit_scale=8.0))


CFG = GenerationConfig(gen_len=16, block_size=8, cache="dual")


def test_single_prompt_report(toy):
    rep = run_benchmark([SuiteItem("only", [1, 2, 3])], CFG, toy)
    row = rep["sequences"][0]
    agg = rep["aggregate"]
    assert agg["N"] == 1 and agg["failed"] == 0
    assert agg["mean_tpf"] == row["tpf"] and agg["mean_tps"] == row["tps"]
    assert rep["schema"] == "dlm-run-report" and rep["config"] == CFG.to_dict()


def test_report_deterministic_and_order_free(toy, tmp_path):
    items = [SuiteItem(k, [k + 1, 2 * k + 1]) for k in range(6)]
    a = run_benchmark(items, CFG, toy, report_path=tmp_path / "r.json")
    b = run_benchmark(items, CFG, toy, workers=3)
    assert dumps_report(strip_timing(a)) == dumps_report(strip_timing(b))
    assert json.loads((tmp_path / "r.json").read_text())["aggregate"]["N"] == 6
    rev = run_benchmark(items[::-1], CFG, toy)
    assert strip_timing(rev["aggregate"]) == strip_timing(a["aggregate"])
    assert "t" not in strip_timing(a)["sequences"][0]


def test_sequence_failure_is_recorded(toy):
    items = [SuiteItem("ok", [1]), SuiteItem("bad", [1] * 250)]
    rep = run_benchmark(items, CFG, toy)
    assert rep["sequences"][0]["error"] is None
    assert "max_len" in rep["sequences"][1]["error"]
    assert rep["aggregate"]["N"] == 1 and rep["aggregate"]["failed"] == 1


def test_aggregate_mean_identity():
    rows = [{"tpf": x, "tps": 10 * x, "error": None,
             "staleness": {"mean_stale": 0.0, "max_stale": 0, "max_deviation": None}}
            for x in (1.0, 2.5, 4.25)]
    agg = aggregate(rows)
    assert abs(agg["mean_tpf"] - (1.0 + 2.5 + 4.25) / 3) <= 1e-9


@pytest.mark.parametrize("decoder", ["threshold", "hierarchical", "credit"])
def test_trace_round_trip(toy, tmp_path, decoder):
    cfg = GenerationConfig(gen_len=16, block_size=8, decoder=decoder, cache="vicinity",
                           prefix_look=2, after_look=2, warmup_times=1, smooth_enabled=True)
    path = tmp_path / "trace.json"
    res, doc = capture_trace(toy, [5, 6], cfg, path=path)
    replay = replay_trace(path)
    again = generate(replay, [5, 6], cfg)
    assert again.per_step_commits == res.per_step_commits
    assert np.array_equal(again.final_ids, res.final_ids)
    assert replay.meta["per_step_commits"] == [[s, list(p)] for s, p in res.per_step_commits]


def test_trace_replay_other_decoder_runs(toy, tmp_path):
    cfg = GenerationConfig(gen_len=16, block_size=16, decoder="threshold", threshold=0.95)
    path = tmp_path / "trace.json"
    capture_trace(toy, [5, 6], cfg, path=path)
    other = generate(replay_trace(path), [5, 6], cfg.replace(decoder="hierarchical"))
    assert toy.mask_id not in other.final_ids.tolist()


def test_truncated_trace(toy, tmp_path):
    path = tmp_path / "trace.json"
    capture_trace(toy, [5, 6], GenerationConfig(gen_len=8, block_size=8), path=path)
    text = path.read_text()
    path.write_text(text[: len(text) // 3])
    with pytest.raises(ScriptFormatError):
        replay_trace(path)
