"""Parallel decoding strategies.

Every decoder takes region logits plus an ``undecided`` mask aligned with the
logits rows and returns the positions to commit. Decisions are greedy
(argmax tokens) and deterministic. The threshold and credit rules are written
as element-wise comparisons and reductions only; the progress fallback is an
argmax reduction folded into the commit mask, not a branch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import BlockRange, EngineError, LogitsMatrix, top_confidence


class DecodeError(EngineError):
    pass


@dataclass
class Confidence:
    top: np.ndarray
    prob: np.ndarray


@dataclass
class CommitSet:
    positions: np.ndarray
    tokens: np.ndarray

    def __len__(self):
        return int(self.positions.size)

    def __iter__(self):
        return iter(zip(self.positions.tolist(), self.tokens.tolist()))

    def pairs(self) -> list:
        return list(self)


def confidence(logits: LogitsMatrix) -> Confidence:
    top, prob = top_confidence(logits.scores)
    return Confidence(top, prob)


def _check(logits: LogitsMatrix, undecided) -> np.ndarray:
    undecided = np.asarray(undecided, dtype=bool)
    if undecided.shape != logits.region.shape:
        raise DecodeError(
            f"undecided mask of length {undecided.size} does not align with {logits.region.size} logits rows"
        )
    if not undecided.any():
        raise DecodeError("decoder invoked with no undecided positions")
    return undecided


def _commit(logits: LogitsMatrix, mask: np.ndarray, top: np.ndarray) -> CommitSet:
    return CommitSet(logits.region[mask], top[mask].astype(np.int64))


def threshold_decode(logits: LogitsMatrix, undecided, threshold: float,
                     fallback: bool = True) -> CommitSet:
    """Commit every undecided argmax with confidence >= ``threshold``.

    If nothing qualifies the single most confident undecided position is
    committed, so each call makes progress.
    """
    undecided = _check(logits, undecided)
    top, prob = top_confidence(logits.scores)
    eligible = undecided & (prob >= threshold)
    best = np.argmax(np.where(undecided, prob, -np.inf))
    rescue = (np.arange(prob.size) == best) & ~eligible.any() & bool(fallback)
    return _commit(logits, eligible | rescue, top)


def _center_pick(idx: np.ndarray, prob: np.ndarray, a: int, b: int) -> int:
    vals = prob[idx]
    cand = idx[vals == vals.max()]
    # distance to the run centre (a + b - 1) / 2, doubled to stay integral
    return int(cand[np.argmin(np.abs(2 * cand - (a + b - 1)))])


def hierarchical_decode(logits: LogitsMatrix, undecided, span: Optional[BlockRange] = None,
                        high: float = 0.92, low: float = 0.62,
                        fallback: bool = True) -> CommitSet:
    """Divide-and-conquer commit rule over the undecided positions of a span.

    1. Commit every undecided position with confidence >= ``high``.
    2. Recurse over the span: a sub-span whose undecided extent still contains
       decided or just-committed positions is halved at the midpoint of that
       extent; a clean run of masks commits its most confident position
       (nearest the run centre on ties, then lowest index) if it clears ``low``.
    3. If still nothing is committed, commit the global argmax.
    """
    undecided = _check(logits, undecided)
    if low > high:
        raise DecodeError("low threshold exceeds high threshold")
    if span is not None:
        if not np.array_equal(logits.region, span.positions()):
            raise DecodeError("logits rows must cover exactly the span")
    top, prob = top_confidence(logits.scores)
    commit = undecided & (prob >= high)

    stack = [(0, prob.size)]
    while stack:
        lo, hi = stack.pop()
        free = np.flatnonzero(undecided[lo:hi] & ~commit[lo:hi]) + lo
        if free.size == 0:
            continue
        a, b = int(free[0]), int(free[-1]) + 1
        if free.size < b - a:
            mid = (a + b) // 2
            stack.append((mid, b))
            stack.append((a, mid))
            continue
        pick = _center_pick(free, prob, a, b)
        if prob[pick] >= low:
            commit[pick] = True

    if fallback and not commit.any():
        commit[np.argmax(np.where(undecided, prob, -np.inf))] = True
    return _commit(logits, commit, top)


@dataclass
class CreditTable:
    """Block-scoped accumulated confidence ``C[i, v]`` (rows follow the block)."""

    block: BlockRange
    scores: np.ndarray
    beta: float = 0.9
    gamma: float = 0.5
    alpha: float = 1.0

    def rows_for(self, positions) -> np.ndarray:
        positions = np.asarray(positions, dtype=np.int64)
        if np.any(positions < self.block.start) or np.any(positions >= self.block.end):
            raise DecodeError("credit lookup outside the active block")
        return positions - self.block.start


def new_credit_table(block: BlockRange, vocab: int, beta: float = 0.9, gamma: float = 0.5,
                     alpha: float = 1.0) -> CreditTable:
    if not (0 < beta < 1 and 0 < gamma < 1):
        raise DecodeError("beta and gamma must lie in (0, 1)")
    return CreditTable(block, np.zeros((len(block), vocab)), beta, gamma, alpha)


def credit_update(credits: CreditTable, logits: LogitsMatrix, undecided) -> CreditTable:
    """Decay every undecided row by beta, then add ``p*^gamma`` at its argmax.

    ``undecided`` is aligned with the credit block.
    """
    undecided = np.asarray(undecided, dtype=bool)
    if undecided.shape != (len(credits.block),):
        raise DecodeError("undecided mask must align with the credit block")
    pos = credits.block.positions()[undecided]
    scores = credits.scores.copy()
    if pos.size:
        top, prob = top_confidence(logits.scores[logits.row_index(pos)])
        rows = credits.rows_for(pos)
        scores[rows] *= credits.beta
        scores[rows, top] += prob ** credits.gamma
    return CreditTable(credits.block, scores, credits.beta, credits.gamma, credits.alpha)


def credit_fuse(logits: LogitsMatrix, credits: CreditTable, alpha: Optional[float] = None) -> LogitsMatrix:
    """Add ``alpha * log(1 + C)`` to the logits of rows inside the credit block."""
    alpha = credits.alpha if alpha is None else alpha
    if alpha < 0:
        raise DecodeError("alpha must be >= 0")
    if np.any(credits.scores < 0):
        raise DecodeError("credit table has negative entries")
    inside = (logits.region >= credits.block.start) & (logits.region < credits.block.end)
    fused = logits.scores.copy()
    rows = logits.region[inside] - credits.block.start
    fused[inside] = logits.scores[inside] + alpha * np.log1p(credits.scores[rows])
    return LogitsMatrix(logits.region, fused)


def credit_reset(credits: CreditTable, block: Optional[BlockRange] = None) -> CreditTable:
    block = credits.block if block is None else block
    return CreditTable(block, np.zeros((len(block), credits.scores.shape[1])),
                       credits.beta, credits.gamma, credits.alpha)


def credit_decode(logits: LogitsMatrix, undecided, credits: CreditTable, threshold: float,
                  fallback: bool = True) -> tuple[CommitSet, CreditTable]:
    """Credit update, log-domain fusion, then the threshold rule on the fused scores.

    ``logits`` must be restricted to the credit block.
    """
    if not np.array_equal(logits.region, credits.block.positions()):
        raise DecodeError("credit decoding expects logits over exactly the active block")
    credits = credit_update(credits, logits, undecided)
    fused = credit_fuse(logits, credits)
    return threshold_decode(fused, undecided, threshold, fallback=fallback), credits
