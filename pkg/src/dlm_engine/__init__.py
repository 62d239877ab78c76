"""Blockwise inference engine for masked-diffusion language models."""
from .core import (BlockRange, ConfigError, EngineError, GenerationConfig, GenerationResult,
                   LogitsMatrix, StateError, TokenBuffer, new_generation_state, undecided_mask)
from .decode import (CommitSet, CreditTable, credit_decode, credit_fuse, credit_reset, credit_update,
                     hierarchical_decode, new_credit_table, threshold_decode)
from .engine import EngineSession, StepRecord, check_early_termination, generate
from .iteration import (BlockIterator, SmoothState, alpha_schedule, smooth_embeddings,
                        threshold_schedule)
from .kvcache import KVCache, RefreshPolicy, refresh_region, should_update
from .model import (EmbeddingOverride, ScriptedModel, ToyModel, ToyModelParams, load_script,
                    save_script, scripted_forward)

__version__ = "0.1.0"
