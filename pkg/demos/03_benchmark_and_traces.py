# %% [markdown]
# # Benchmarks, reports and traces

# %%
import json
import tempfile
from pathlib import Path

from dlm_engine import GenerationConfig, ToyModel, ToyModelParams, generate
from dlm_engine.bench import (SuiteItem, capture_trace, replay_trace, run_benchmark, strip_timing,
                              write_suite)
from dlm_engine.bench.workloads import eos_suite

work = Path(tempfile.mkdtemp())
model = ToyModel(ToyModelParams(seed=2, logit_scale=8.0))

# %% [markdown]
# A suite is a JSON Lines file of prompts. The report echoes the config and
# lists per-sequence T, F, TPF, TPS and cache staleness.

# %%
suite = work / "suite.jsonl"
write_suite(suite, [SuiteItem(f"p{k}", [k + 1, 2 * k + 3, 7]) for k in range(4)])
cfg = GenerationConfig(gen_len=32, block_size=16, decoder="credit", cache="vicinity",
                       prefix_look=4, after_look=4, warmup_times=1)
report = run_benchmark(suite, cfg, model, workers=2, report_path=work / "report.json")
print(json.dumps(strip_timing(report["aggregate"]), indent=2))

# %% [markdown]
# ## Trace capture and replay
#
# A trace stores the logits of every forward. Replaying it through the engine
# with the same config reproduces the commit log without the model.

# %%
res, _ = capture_trace(model, [3, 9], cfg, path=work / "trace.json")
replayed = generate(replay_trace(work / "trace.json"), [3, 9], cfg)
print("commit logs match:", replayed.per_step_commits == res.per_step_commits)

# %% [markdown]
# ## Early termination
#
# Once EOS is committed, everything after it becomes EOS and the remaining
# blocks are skipped.

# %%
for on in (False, True):
    runs = [generate(m, p, GenerationConfig(gen_len=64, block_size=16, early_termination=on))
            for m, p, _ in eos_suite()]
    print(f"early_termination={on!s:5s} total forwards {sum(r.forwards for r in runs)}")
