"""Shared domain types and sequence-state bookkeeping."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DECODERS = ("threshold", "hierarchical", "credit")
CACHE_POLICIES = ("none", "block", "dual", "vicinity")


class EngineError(Exception):
    """Base class for errors raised by the engine and its components."""


class ConfigError(EngineError, ValueError):
    pass


class StateError(EngineError, RuntimeError):
    pass


@dataclass
class TokenBuffer:
    """Token ids of one sequence; undecided positions hold ``mask_id``.

    Positions ``[0, prompt_len)`` are the fixed prompt. Only the owning engine
    session mutates ``ids``, and only through :meth:`commit` / :meth:`fill`.
    """

    ids: np.ndarray
    mask_id: int
    eos_id: int
    prompt_len: int

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def gen_len(self) -> int:
        return len(self) - self.prompt_len

    def is_masked(self) -> np.ndarray:
        return self.ids == self.mask_id

    def commit(self, positions, tokens) -> None:
        positions = np.asarray(positions, dtype=np.int64)
        tokens = np.asarray(tokens, dtype=np.int64)
        if positions.size == 0:
            return
        if np.any(positions < self.prompt_len) or np.any(positions >= len(self)):
            raise StateError("commit outside the generation region")
        if np.any(self.ids[positions] != self.mask_id):
            raise StateError("commit to an already decided position")
        if np.any(tokens == self.mask_id):
            raise StateError("cannot commit the mask token")
        self.ids[positions] = tokens

    def fill(self, start: int, token: int) -> np.ndarray:
        """Write ``token`` into every masked position at or after ``start``."""
        idx = np.flatnonzero(self.ids == self.mask_id)
        idx = idx[idx >= start]
        self.ids[idx] = token
        return idx

    def copy(self) -> "TokenBuffer":
        return dataclasses.replace(self, ids=self.ids.copy())


@dataclass(frozen=True)
class BlockRange:
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ConfigError(f"invalid block range [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def positions(self) -> np.ndarray:
        return np.arange(self.start, self.end, dtype=np.int64)


@dataclass
class LogitsMatrix:
    """Unnormalized scores for the rows of a queried region."""

    region: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.region = np.asarray(self.region, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.shape[0] != self.region.shape[0]:
            raise ValueError(
                f"scores shape {self.scores.shape} does not match region of {self.region.shape[0]} rows"
            )

    @property
    def vocab_size(self) -> int:
        return int(self.scores.shape[1])

    def row_index(self, positions) -> np.ndarray:
        """Row indices of ``positions``; raises if any position has no row."""
        positions = np.asarray(positions, dtype=np.int64)
        order = np.argsort(self.region, kind="stable")
        sorted_region = self.region[order]
        where = np.searchsorted(sorted_region, positions)
        where = np.clip(where, 0, max(len(sorted_region) - 1, 0))
        if len(sorted_region) == 0 or np.any(sorted_region[where] != positions):
            missing = sorted(set(positions.tolist()) - set(self.region.tolist()))
            raise EngineError(f"no logits row for positions {missing[:8]}")
        return order[where]

    def restrict(self, positions) -> "LogitsMatrix":
        positions = np.asarray(positions, dtype=np.int64)
        return LogitsMatrix(positions, self.scores[self.row_index(positions)])


def softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax at temperature 1."""
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def top_confidence(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmax token and its softmax probability for every row."""
    p = softmax(scores)
    top = np.argmax(p, axis=-1)
    return top, np.take_along_axis(p, top[:, None], axis=-1)[:, 0]


@dataclass
class GenerationConfig:
    """All knobs of one generation run.

    ``sched_target=None`` means the decode-threshold schedule decays toward the
    decoder's static threshold (``threshold``, or ``hier_decode_threshold`` for
    the hierarchical decoder).
    """

    gen_len: int = 64
    block_size: int = 32
    decoder: str = "threshold"
    cache: str = "none"
    threshold: float = 0.8
    hier_decode_threshold: float = 0.92
    hier_lower_bound: float = 0.62
    credit_alpha: float = 1.0
    credit_beta: float = 0.9
    credit_gamma: float = 0.5
    smooth_enabled: bool = False
    smooth_alpha_init: float = 0.1
    smooth_alpha_growth: float = 0.05
    smooth_alpha_preset: float = 0.3
    sched_target: Optional[float] = None
    sched_decay_steps: int = 4
    prefix_look: int = 16
    after_look: int = 16
    warmup_times: int = 4
    early_termination: bool = True
    measure_deviation: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        if self.gen_len < 1:
            raise ConfigError("gen_len must be >= 1")
        if self.gen_len % self.block_size:
            raise ConfigError(
                f"gen_len={self.gen_len} is not a multiple of block_size={self.block_size}"
            )
        if self.decoder not in DECODERS:
            raise ConfigError(f"unknown decoder {self.decoder!r}; expected one of {DECODERS}")
        if self.cache not in CACHE_POLICIES:
            raise ConfigError(f"unknown cache policy {self.cache!r}; expected one of {CACHE_POLICIES}")
        for name in ("threshold", "hier_decode_threshold", "hier_lower_bound"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name}={value} outside [0, 1]")
        if self.sched_target is not None and not 0.0 <= self.sched_target <= 1.0:
            raise ConfigError(f"sched_target={self.sched_target} outside [0, 1]")
        if self.hier_lower_bound > self.hier_decode_threshold:
            raise ConfigError("hier_lower_bound must not exceed hier_decode_threshold")
        for name in ("credit_beta", "credit_gamma"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name}={value} outside (0, 1)")
        if self.credit_alpha < 0:
            raise ConfigError("credit_alpha must be >= 0")
        if min(self.smooth_alpha_init, self.smooth_alpha_growth, self.smooth_alpha_preset) < 0:
            raise ConfigError("smoothing weights must be >= 0")
        if self.sched_decay_steps < 0:
            raise ConfigError("sched_decay_steps must be >= 0")
        if min(self.prefix_look, self.after_look, self.warmup_times) < 0:
            raise ConfigError("prefix_look, after_look and warmup_times must be >= 0")

    @property
    def static_threshold(self) -> float:
        if self.decoder == "hierarchical":
            return self.hier_decode_threshold
        return self.threshold

    def replace(self, **changes) -> "GenerationConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class GenerationResult:
    final_ids: np.ndarray
    prompt_len: int
    tokens_before_eos: int
    forwards: int
    wall_time: float
    per_step_commits: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    early_terminated: bool = False

    @property
    def generated(self) -> np.ndarray:
        return self.final_ids[self.prompt_len:]


def new_generation_state(prompt: Sequence[int], gen_len: int, mask_id: int, eos_id: int) -> TokenBuffer:
    prompt = np.asarray(prompt, dtype=np.int64).reshape(-1)
    if prompt.size == 0:
        raise ConfigError("prompt must be nonempty")
    if gen_len <= 0:
        raise ConfigError("gen_len must be positive")
    if mask_id == eos_id:
        raise ConfigError("mask_id and eos_id must differ")
    if np.any(prompt == mask_id):
        raise ConfigError("prompt contains the mask token")
    if np.any(prompt < 0):
        raise ConfigError("token ids must be non-negative")
    ids = np.concatenate([prompt, np.full(gen_len, mask_id, dtype=np.int64)])
    return TokenBuffer(ids=ids, mask_id=int(mask_id), eos_id=int(eos_id), prompt_len=int(prompt.size))


def undecided_mask(buf: TokenBuffer, block: BlockRange) -> np.ndarray:
    if block.end > len(buf):
        raise EngineError(f"range [{block.start}, {block.end}) exceeds buffer length {len(buf)}")
    return buf.ids[block.start:block.end] == buf.mask_id


def tokens_before_eos(buf: TokenBuffer) -> int:
    """Generated tokens strictly before the first EOS (all of them if none)."""
    gen = buf.ids[buf.prompt_len:]
    hits = np.flatnonzero(gen == buf.eos_id)
    return int(hits[0]) if hits.size else int(gen.size)
