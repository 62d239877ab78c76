"""Diffusion iteration manager: blockwise scheduling and iteration smoothing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BlockRange, ConfigError, EngineError, LogitsMatrix, softmax
from .model import EmbeddingOverride


class IteratorExhausted(EngineError):
    pass


@dataclass
class BlockIterator:
    """Left-to-right, non-overlapping blocks of width ``block_size``."""

    prompt_len: int
    gen_len: int
    block_size: int
    next_block_index: int = 0

    def __post_init__(self):
        if self.block_size < 1 or self.gen_len < 1:
            raise ConfigError("block_size and gen_len must be positive")
        if self.gen_len % self.block_size:
            raise ConfigError("gen_len must be a multiple of block_size")

    @property
    def n_blocks(self) -> int:
        return self.gen_len // self.block_size

    def has_next(self) -> bool:
        return self.next_block_index < self.n_blocks

    def next_block(self) -> BlockRange:
        if not self.has_next():
            raise IteratorExhausted("no blocks left")
        start = self.prompt_len + self.next_block_index * self.block_size
        self.next_block_index += 1
        return BlockRange(start, start + self.block_size)

    def remaining(self) -> list:
        out = []
        for b in range(self.next_block_index, self.n_blocks):
            start = self.prompt_len + b * self.block_size
            out.append(BlockRange(start, start + self.block_size))
        return out


def has_next(it: BlockIterator) -> bool:
    return it.has_next()


def next_block(it: BlockIterator) -> BlockRange:
    return it.next_block()


@dataclass
class SmoothState:
    """Per-block smoothing state; counters and embeddings reset at block entry."""

    alpha_init: float = 0.1
    alpha_growth: float = 0.05
    alpha_preset: float = 0.3
    sched_target: float = 0.8
    decay_steps: int = 4
    step_in_block: int = 0
    last_expected_embeddings: EmbeddingOverride = field(default_factory=EmbeddingOverride)

    def reset(self) -> None:
        self.step_in_block = 0
        self.last_expected_embeddings = EmbeddingOverride()


def alpha_schedule(state: SmoothState, t: int) -> float:
    """Mixing weight ``min(alpha_init + alpha_growth * t, alpha_preset)``."""
    if t < 0:
        raise ConfigError("step must be >= 0")
    return min(state.alpha_init + state.alpha_growth * t, state.alpha_preset)


def threshold_schedule(state: SmoothState, t: int) -> float:
    """Decode threshold decaying linearly from 1.0 to ``sched_target``.

    Reaches the target after ``decay_steps`` forwards and stays there.
    """
    if t < 0:
        raise ConfigError("step must be >= 0")
    if t >= state.decay_steps:
        return state.sched_target
    return 1.0 - (1.0 - state.sched_target) * (t / state.decay_steps)


def expected_embeddings(scores: np.ndarray, W_emb: np.ndarray) -> np.ndarray:
    """Probability-weighted average of embedding rows, one per logits row."""
    return softmax(scores) @ W_emb


def smooth_embeddings(logits: LogitsMatrix, masked_positions, W_emb: np.ndarray,
                      e_mask: np.ndarray, alpha: float) -> EmbeddingOverride:
    masked_positions = np.asarray(masked_positions, dtype=np.int64)
    if masked_positions.size == 0:
        return EmbeddingOverride()
    rows = logits.row_index(masked_positions)
    delta = expected_embeddings(logits.scores[rows], W_emb)
    e_mask = np.asarray(e_mask, dtype=np.float64)
    return EmbeddingOverride({
        int(pos): e_mask + alpha * delta[k] for k, pos in enumerate(masked_positions)
    })
