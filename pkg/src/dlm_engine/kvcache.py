"""KV-cache storage and refresh policies (none, block, dual, vicinity).

Each policy answers two questions per forward: whether to rebuild the whole
cache first (``should_update``) and which positions the forward recomputes
(``refresh_region``). Positions outside the region are read from the cache.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CACHE_POLICIES, BlockRange, ConfigError, EngineError


class CacheError(EngineError):
    pass


class KVCache:
    """Per-layer keys/values of shape ``(L, n_heads, d_head)``.

    ``fresh_at[i]`` is the engine step at which position ``i`` was last
    recomputed; ``-1`` marks an unpopulated slot.
    """

    def __init__(self, length: int, n_layers: int = 0, n_heads: int = 1, d_head: int = 1):
        self.length = int(length)
        self.keys = [np.zeros((length, n_heads, d_head)) for _ in range(n_layers)]
        self.values = [np.zeros((length, n_heads, d_head)) for _ in range(n_layers)]
        self.fresh_at = np.full(length, -1, dtype=np.int64)

    @property
    def n_layers(self) -> int:
        return len(self.keys)

    def populated(self, positions=None) -> bool:
        sel = self.fresh_at if positions is None else self.fresh_at[np.asarray(positions, dtype=np.int64)]
        return bool(np.all(sel >= 0))

    def store(self, layer: int, positions, keys, values) -> None:
        self.keys[layer][positions] = keys
        self.values[layer][positions] = values

    def mark_fresh(self, positions, step: int) -> None:
        self.fresh_at[np.asarray(positions, dtype=np.int64)] = step

    def stale_positions(self, since_step: int) -> np.ndarray:
        """Positions not recomputed since ``since_step`` (the last token change)."""
        return np.flatnonzero(self.fresh_at < since_step)

    def staleness(self, since_step: int, step: int) -> dict:
        stale = self.stale_positions(since_step)
        return {
            "stale": int(stale.size),
            "max_age": int(step - self.fresh_at.min()) if self.length else 0,
        }

    def snapshot(self) -> tuple:
        return (
            [k.copy() for k in self.keys],
            [v.copy() for v in self.values],
            self.fresh_at.copy(),
        )

    def equals(self, other: "KVCache") -> bool:
        return (
            self.length == other.length
            and self.n_layers == other.n_layers
            and all(np.array_equal(a, b) for a, b in zip(self.keys, other.keys))
            and all(np.array_equal(a, b) for a, b in zip(self.values, other.values))
            and np.array_equal(self.fresh_at, other.fresh_at)
        )


def create(length: int, n_layers: int = 0, n_heads: int = 1, d_head: int = 1,
           max_len: Optional[int] = None) -> KVCache:
    if length < 1:
        raise CacheError("cache length must be positive")
    if max_len is not None and length > max_len:
        raise CacheError(f"cache length {length} exceeds model max_len {max_len}")
    return KVCache(length, n_layers, n_heads, d_head)


@dataclass(frozen=True)
class RefreshPolicy:
    kind: str = "none"
    prefix_look: int = 16
    after_look: int = 16
    warmup_times: int = 4

    def __post_init__(self):
        if self.kind not in CACHE_POLICIES:
            raise ConfigError(f"unknown cache policy {self.kind!r}")
        if min(self.prefix_look, self.after_look, self.warmup_times) < 0:
            raise ConfigError("looks and warmup_times must be >= 0")

    @property
    def uses_cache(self) -> bool:
        return self.kind != "none"

    @classmethod
    def from_config(cls, config) -> "RefreshPolicy":
        return cls(config.cache, config.prefix_look, config.after_look, config.warmup_times)


def refresh_region(policy: RefreshPolicy, block: BlockRange, step_in_block: int, length: int) -> np.ndarray:
    """Positions whose K/V the next forward recomputes (and queries)."""
    if block.end > length:
        raise CacheError("block exceeds sequence length")
    if policy.kind == "none":
        return np.arange(length, dtype=np.int64)
    if policy.kind == "block":
        # prefix cache: the block and everything after it are recomputed
        return np.arange(block.start, length, dtype=np.int64)
    if policy.kind == "dual":
        return block.positions()
    if step_in_block < policy.warmup_times:
        return np.arange(length, dtype=np.int64)
    lo = max(0, block.start - policy.prefix_look)
    hi = min(length, block.end + policy.after_look)
    return np.arange(lo, hi, dtype=np.int64)


def should_update(policy: RefreshPolicy, step_in_block: int, block: BlockRange) -> bool:
    """Whether the cache is rebuilt from the current tokens before this forward.

    Caching policies rebuild at block entry and otherwise hold the cache
    static; vicinity's warmup is served by a full-width refresh region rather
    than a separate rebuild.
    """
    if policy.kind == "none":
        return True
    return step_in_block == 0


def finalize_block(model, cache: Optional[KVCache], tokens, step: int) -> None:
    """Full recompute once a block is decoded, so no entry is left stale."""
    if cache is None:
        return
    model.compute_kv_full(tokens, None, cache, step=step)
