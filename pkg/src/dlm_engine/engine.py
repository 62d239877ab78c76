"""Blockwise generation loop tying model, iterator, decoder and cache policy."""
from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from . import decode, kvcache
from .core import (BlockRange, ConfigError, GenerationConfig, GenerationResult, StateError,
                   TokenBuffer, new_generation_state, tokens_before_eos, undecided_mask)
from .iteration import (BlockIterator, SmoothState, alpha_schedule, smooth_embeddings,
                        threshold_schedule)


@dataclass
class StepRecord:
    step: int
    block: tuple
    step_in_block: int
    committed: list
    tokens: list
    threshold: float
    region_size: int
    cache_updated: bool
    logits_hash: str
    stale: int = 0
    max_age: int = 0
    deviation: Optional[float] = None
    eos_stop: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


# the reserved mask id is never a decoding candidate
MASK_SCORE = -1e30


def _hash_scores(scores: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(scores, dtype=np.float64).tobytes()).hexdigest()[:16]


def check_early_termination(tokens: TokenBuffer, block: BlockRange) -> bool:
    """True iff an EOS was committed at a generated position up to ``block.end``."""
    return bool(np.any(tokens.ids[tokens.prompt_len:block.end] == tokens.eos_id))


def first_eos(tokens: TokenBuffer) -> int:
    """Absolute position of the first generated EOS, or ``len(tokens)`` if none."""
    hits = np.flatnonzero(tokens.ids[tokens.prompt_len:] == tokens.eos_id)
    return tokens.prompt_len + int(hits[0]) if hits.size else len(tokens)


class EngineSession:
    """One sequence's generation state; drive it with :meth:`run` or step by step.

    ``recorder`` is called as ``recorder(region, scores)`` after every forward.
    """

    def __init__(self, model, prompt, config: GenerationConfig,
                 recorder: Optional[Callable] = None):
        config.validate()
        self.model = model
        self.config = config
        self.recorder = recorder
        self.tokens = new_generation_state(prompt, config.gen_len, model.mask_id, model.eos_id)
        length = len(self.tokens)
        if length > model.max_len:
            raise ConfigError(f"prompt + gen_len = {length} exceeds model max_len {model.max_len}")
        if np.any(self.tokens.ids >= model.vocab_size):
            raise ConfigError("prompt token id outside the model vocabulary")
        self.policy = kvcache.RefreshPolicy.from_config(config)
        self.cache = model.new_cache(length) if self.policy.uses_cache else None
        self.blocks = BlockIterator(self.tokens.prompt_len, config.gen_len, config.block_size)
        self.block: Optional[BlockRange] = None
        self.step_in_block = 0
        self.forwards = 0
        self.last_change = 0
        self.credits: Optional[decode.CreditTable] = None
        target = config.static_threshold if config.sched_target is None else config.sched_target
        self.smooth = SmoothState(config.smooth_alpha_init, config.smooth_alpha_growth,
                                  config.smooth_alpha_preset, target, config.sched_decay_steps)
        self.per_step_commits: list = []
        self.steps: list = []
        self.finished = False
        self.early_terminated = False

    @property
    def smoothing(self) -> bool:
        return self.config.smooth_enabled

    @property
    def scheduled(self) -> bool:
        # the threshold schedule is part of smoothing and idles with it at alpha_preset=0
        return self.config.smooth_enabled and self.config.smooth_alpha_preset > 0

    def block_done(self) -> bool:
        return self.block is None or not undecided_mask(self.tokens, self.block).any()

    def begin_block(self) -> Optional[BlockRange]:
        """Advance to the next block and reset per-block state; None when finished."""
        if self.finished or not self.blocks.has_next():
            self.finished = True
            return None
        self.block = self.blocks.next_block()
        self.step_in_block = 0
        self.smooth.reset()
        if self.config.decoder == "credit":
            self.credits = decode.new_credit_table(self.block, self.model.vocab_size,
                                                   self.config.credit_beta, self.config.credit_gamma,
                                                   self.config.credit_alpha)
        return self.block

    def current_threshold(self) -> float:
        if self.scheduled:
            return threshold_schedule(self.smooth, self.step_in_block)
        return self.config.static_threshold

    def _decode(self, logits, undecided, threshold):
        cfg = self.config
        if cfg.decoder == "threshold":
            return decode.threshold_decode(logits, undecided, threshold)
        if cfg.decoder == "hierarchical":
            return decode.hierarchical_decode(logits, undecided, self.block, high=threshold,
                                              low=min(cfg.hier_lower_bound, threshold))
        commits, self.credits = decode.credit_decode(logits, undecided, self.credits, threshold)
        return commits

    def step_once(self) -> StepRecord:
        """One cache-update / forward / decode / commit cycle on the active block."""
        if self.finished or self.block is None or self.block_done():
            raise StateError("no active block with undecided positions")
        block, step = self.block, self.forwards
        length = len(self.tokens)
        overrides = self.smooth.last_expected_embeddings

        updated = False
        if self.cache is not None and kvcache.should_update(self.policy, self.step_in_block, block):
            self.model.compute_kv_full(self.tokens, overrides, self.cache, step=step)
            updated = True
        region = kvcache.refresh_region(self.policy, block, self.step_in_block, length)
        stale = max_age = 0
        if self.cache is not None:
            outside = np.setdiff1d(np.arange(length), region, assume_unique=True)
            stale = int(np.count_nonzero(self.cache.fresh_at[outside] < self.last_change))
            max_age = int(step - self.cache.fresh_at[outside].min()) if outside.size else 0

        logits = self.model.forward(self.tokens, overrides, self.cache, region, step=step)
        self.forwards += 1
        if self.recorder is not None:
            self.recorder(logits.region, logits.scores)

        block_logits = logits.restrict(block.positions())
        block_logits.scores[:, self.tokens.mask_id] = MASK_SCORE
        deviation = None
        if self.config.measure_deviation and hasattr(self.model, "oracle_forward"):
            ref = self.model.oracle_forward(self.tokens, overrides, block.positions())
            keep = np.arange(ref.vocab_size) != self.tokens.mask_id
            deviation = float(np.max(np.abs(block_logits.scores[:, keep] - ref.scores[:, keep])))

        undecided = undecided_mask(self.tokens, block)
        threshold = self.current_threshold()
        commits = self._decode(block_logits, undecided, threshold)
        self.tokens.commit(commits.positions, commits.tokens)
        if len(commits):
            self.last_change = self.forwards

        eos_stop = False
        if self.config.early_termination and check_early_termination(self.tokens, block):
            # everything after the first EOS is EOS; masks before it still get decoded
            self.tokens.fill(first_eos(self.tokens) + 1, self.tokens.eos_id)
            self.early_terminated = True
            eos_stop = self.finished = self.block_done()

        if self.smoothing and self.model.embedding_matrix is not None:
            still = logits.region[self.tokens.ids[logits.region] == self.tokens.mask_id]
            W = self.model.embedding_matrix
            self.smooth.last_expected_embeddings = smooth_embeddings(
                logits, still, W, W[self.tokens.mask_id], alpha_schedule(self.smooth, self.step_in_block))
        self.smooth.step_in_block += 1
        self.step_in_block += 1

        record = StepRecord(
            step=step, block=(block.start, block.end), step_in_block=self.step_in_block - 1,
            committed=commits.positions.tolist(), tokens=commits.tokens.tolist(),
            threshold=float(threshold), region_size=int(region.size), cache_updated=updated,
            logits_hash=_hash_scores(logits.scores), stale=stale, max_age=max_age,
            deviation=deviation, eos_stop=bool(eos_stop),
        )
        self.steps.append(record)
        self.per_step_commits.append((step, tuple(record.committed)))
        if not self.finished and self.block_done():
            kvcache.finalize_block(self.model, self.cache, self.tokens, step=self.forwards)
        return record

    def run(self) -> None:
        while self.begin_block() is not None:
            while not self.finished and not self.block_done():
                self.step_once()

    def result(self, wall_time: float = 0.0) -> GenerationResult:
        return GenerationResult(
            final_ids=self.tokens.ids.copy(),
            prompt_len=self.tokens.prompt_len,
            tokens_before_eos=tokens_before_eos(self.tokens),
            forwards=self.forwards,
            wall_time=wall_time,
            per_step_commits=list(self.per_step_commits),
            steps=list(self.steps),
            early_terminated=self.early_terminated,
        )


def generate(model, prompt, config: GenerationConfig, recorder: Optional[Callable] = None) -> GenerationResult:
    """Run blockwise generation for one prompt and return its result.

    A scripted model is rewound first so every call replays from its first step.
    """
    reset = getattr(model, "reset", None)
    if reset is not None:
        reset()
    session = EngineSession(model, prompt, config, recorder=recorder)
    t0 = time.perf_counter()
    session.run()
    wall = time.perf_counter() - t0
    result = session.result(wall)
    if np.any(result.final_ids == model.mask_id):
        raise StateError("generation finished with undecided positions")
    return result
