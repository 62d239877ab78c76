"""Tokens-per-forward and tokens-per-second.

Both count generated tokens strictly before the first EOS; the EOS itself and
positions filled by early termination are excluded.
"""
from __future__ import annotations

import math
from typing import Iterable

from ..core import EngineError, GenerationResult


class MetricError(EngineError, ValueError):
    pass


def tpf(result: GenerationResult) -> float:
    if result.forwards <= 0:
        raise MetricError("tokens-per-forward undefined for zero forwards")
    return result.tokens_before_eos / result.forwards


def tps(result: GenerationResult) -> float:
    if result.wall_time <= 0:
        raise MetricError("tokens-per-second undefined for zero wall time")
    return result.tokens_before_eos / result.wall_time


def mean(values: Iterable[float]) -> float:
    """Exactly rounded arithmetic mean, hence independent of input order."""
    values = list(values)
    if not values:
        raise MetricError("mean of an empty collection")
    return math.fsum(values) / len(values)
