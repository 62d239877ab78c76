# %% [markdown]
# # Decoders on designed scripted traces
#
# Scripted models replay fixed logits, which makes each decoder's behaviour
# exactly predictable.

# %%
from dlm_engine import GenerationConfig, generate
from dlm_engine.bench import mean, tpf
from dlm_engine.bench.workloads import (confidence_growth_suite, ideal_hierarchical,
                                        stable_plateau_suite)

# %% [markdown]
# ## Hierarchical decoding
#
# All 64 positions sit at confidence 0.7: below the high threshold, above the
# low one. Each forward commits one position per clean run of masks, so the
# number of commits roughly doubles every step.

# %%
model, prompt = ideal_hierarchical(n=64)
res = generate(model, prompt, GenerationConfig(gen_len=64, block_size=64, decoder="hierarchical"))
print("forwards:", res.forwards)
print("commits per forward:", [len(c) for _, c in res.per_step_commits])

# %%
thr = generate(model, prompt, GenerationConfig(gen_len=64, block_size=64, threshold=0.8))
print("threshold decoding needs", thr.forwards, "forwards on the same trace")

# %% [markdown]
# ## Credit decoding
#
# Confidence in a stable argmax rises slowly. Credit accumulates a decayed
# history of that confidence and adds it to the logits as a log prior, so
# tokens cross the threshold earlier.

# %%
suite = confidence_growth_suite(n_seqs=8)
for dec in ("threshold", "credit"):
    cfg = GenerationConfig(gen_len=32, block_size=32, decoder=dec, threshold=0.8)
    print(f"{dec:9s} mean TPF {mean(tpf(generate(m, p, cfg)) for m, p in suite):.2f}")

# %% [markdown]
# ## Iteration smoothing
#
# Masked positions receive the previous step's expected embedding instead of
# the bare mask embedding. The feedback model responds to that embedding by
# favouring the tokens it already leaned towards.

# %%
plateau = stable_plateau_suite(n_seqs=8)
for flag in (False, True):
    cfg = GenerationConfig(gen_len=32, block_size=16, threshold=0.8, smooth_enabled=flag)
    print(f"smoothing={flag!s:5s} mean TPF {mean(tpf(generate(m, p, cfg)) for m, p in plateau):.2f}")
