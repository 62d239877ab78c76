"""Constructed scripted workloads with known decoder behaviour.

Each builder returns a :class:`~dlm_engine.model.ScriptedModel` (or a small
model wrapping one) plus the prompt that goes with it. Scores are written in
the log-probability domain; the mask column gets ``MASK_SCORE`` so the
probabilities the decoders see are exactly the designed ones.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..core import LogitsMatrix
from ..model import ScriptedModel, _as_override
from .. import kvcache

MASK_SCORE = -1e30


def _vocab_ids(vocab: int, mask_id: int, eos_id: int) -> np.ndarray:
    return np.array([v for v in range(vocab) if v not in (mask_id, eos_id)], dtype=np.int64)


def prob_rows(tokens, conf, vocab: int, mask_id: int) -> np.ndarray:
    """Log-probability rows with ``conf[i]`` on ``tokens[i]``, the rest spread evenly.

    The mask column is excluded from the spread.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    conf = np.broadcast_to(np.asarray(conf, dtype=np.float64), tokens.shape)
    rest = (1.0 - conf) / (vocab - 2)
    out = np.log(np.repeat(rest[:, None], vocab, axis=1))
    out[np.arange(tokens.size), tokens] = np.log(conf)
    out[:, mask_id] = MASK_SCORE
    return out


def _token_pattern(n: int, vocab: int, mask_id: int, eos_id: int, rng) -> np.ndarray:
    ids = _vocab_ids(vocab, mask_id, eos_id)
    return rng.choice(ids, size=n)


def ideal_hierarchical(n: int = 64, prompt_len: int = 1, conf: float = 0.7, vocab: int = 8,
                       n_steps: Optional[int] = None) -> tuple[ScriptedModel, list]:
    """Every generated position holds one stable argmax at confidence ``conf``.

    With ``low <= conf < high`` the high-threshold pass never fires, so
    hierarchical decoding commits one position per clean masked run per
    forward and the span closes in a logarithmic number of forwards.
    """
    mask_id, eos_id = vocab - 1, vocab - 2
    length = prompt_len + n
    rng = np.random.default_rng(0)
    tokens = _token_pattern(length, vocab, mask_id, eos_id, rng)
    step = prob_rows(tokens, conf, vocab, mask_id)
    steps = np.repeat(step[None], n if n_steps is None else n_steps, axis=0)
    prompt = tokens[:prompt_len].tolist()
    return ScriptedModel(steps, mask_id, eos_id, meta={"workload": "ideal-hierarchical"}), prompt


def random_trace(rng, length: int, vocab: int, n_steps: int, mask_id: int, eos_id: int,
                 scale: float = 3.0) -> ScriptedModel:
    """Gaussian scores of random sharpness; the mask column is left in on purpose."""
    sharp = rng.uniform(0.2, scale, size=(n_steps, length, 1))
    steps = rng.standard_normal((n_steps, length, vocab)) * sharp
    return ScriptedModel(steps, mask_id, eos_id, meta={"workload": "random"})


def eos_suite(n_seqs: int = 6, prompt_len: int = 2, gen_len: int = 64,
              vocab: int = 16, seed: int = 0) -> list:
    """Scripted sequences that place EOS somewhere inside the first half.

    Returns a list of ``(model, prompt, eos_index)``; ``eos_index`` is the
    generated offset of the EOS token.
    """
    mask_id, eos_id = vocab - 1, vocab - 2
    rng = np.random.default_rng(seed)
    length = prompt_len + gen_len
    out = []
    for k in range(n_seqs):
        tokens = _token_pattern(length, vocab, mask_id, eos_id, rng)
        eos_at = int(rng.integers(4, gen_len // 2))
        tokens[prompt_len + eos_at] = eos_id
        conf = rng.uniform(0.5, 0.99, size=length)
        step = prob_rows(tokens, conf, vocab, mask_id)
        steps = np.repeat(step[None], gen_len, axis=0)
        model = ScriptedModel(steps, mask_id, eos_id, meta={"workload": "eos", "eos_at": eos_at})
        out.append((model, tokens[:prompt_len].tolist(), eos_at))
    return out


def confidence_growth_suite(n_seqs: int = 8, prompt_len: int = 2, gen_len: int = 32,
                            vocab: int = 16, seed: int = 0) -> list:
    """Stable argmaxes whose confidence rises by a fixed step per forward.

    Position ``i`` starts at ``c0[i]`` and gains ``rate`` per forward, capped
    at 0.99. Under-threshold tokens never change, which is the regime where
    accumulated credit pays off. Returns ``(model, prompt)`` pairs.
    """
    mask_id, eos_id = vocab - 1, vocab - 2
    rng = np.random.default_rng(seed)
    length = prompt_len + gen_len
    out = []
    for _ in range(n_seqs):
        tokens = _token_pattern(length, vocab, mask_id, eos_id, rng)
        c0 = rng.uniform(0.3, 0.85, size=length)
        rate = rng.uniform(0.01, 0.04)
        steps = np.stack([prob_rows(tokens, np.minimum(c0 + rate * k, 0.99), vocab, mask_id)
                          for k in range(gen_len)])
        model = ScriptedModel(steps, mask_id, eos_id, meta={"workload": "confidence-growth"})
        out.append((model, tokens[:prompt_len].tolist()))
    return out


class FeedbackModel:
    """Scripted base scores plus a response to the input embeddings.

    For every overridden position the row gains
    ``kappa * (override - e_mask) @ W_emb.T``; rows of ``W_emb`` are
    orthonormal, so an expected embedding ``e_mask + a * p @ W_emb`` lifts each
    token's score by ``kappa * a * p[v]``. Without overrides the scores are the
    base script, which makes smoothing's effect isolatable.
    """

    def __init__(self, base: ScriptedModel, kappa: float = 20.0, d_model: Optional[int] = None,
                 seed: int = 0):
        self.base = base
        self.kappa = kappa
        self.mask_id = base.mask_id
        self.eos_id = base.eos_id
        self.vocab_size = base.vocab_size
        self.max_len = base.max_len
        d = d_model or 2 * base.vocab_size
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((d, base.vocab_size)))
        self.embedding_matrix = q.T.copy()

    def reset(self) -> None:
        self.base.reset()

    def new_cache(self, length: int) -> kvcache.KVCache:
        return self.base.new_cache(length)

    def compute_kv_full(self, tokens, overrides, cache, step: int = 0) -> None:
        self.base.compute_kv_full(tokens, overrides, cache, step)

    def forward(self, tokens, overrides=None, cache=None, region=None, step=None) -> LogitsMatrix:
        out = self.base.forward(tokens, None, cache, region, step)
        scores = out.scores.copy()
        ov = _as_override(overrides)
        W = self.embedding_matrix
        e_mask = W[self.mask_id]
        row = {int(p): k for k, p in enumerate(out.region)}
        for pos, vec in ov.entries.items():
            if pos in row:
                scores[row[pos]] += self.kappa * ((np.asarray(vec) - e_mask) @ W.T)
        return LogitsMatrix(out.region, scores)


def stable_plateau_suite(n_seqs: int = 8, prompt_len: int = 2, gen_len: int = 32,
                         vocab: int = 16, seed: int = 0, kappa: float = 20.0) -> list:
    """Constant sub-threshold-heavy scores behind a :class:`FeedbackModel`.

    Confidences are drawn once and repeated every forward, so every
    under-threshold argmax is stable. Returns ``(model, prompt)`` pairs.
    """
    mask_id, eos_id = vocab - 1, vocab - 2
    rng = np.random.default_rng(seed)
    length = prompt_len + gen_len
    out = []
    for k in range(n_seqs):
        tokens = _token_pattern(length, vocab, mask_id, eos_id, rng)
        conf = rng.uniform(0.4, 0.9, size=length)
        step = prob_rows(tokens, conf, vocab, mask_id)
        base = ScriptedModel(np.repeat(step[None], gen_len, axis=0), mask_id, eos_id,
                             meta={"workload": "stable-plateau"})
        out.append((FeedbackModel(base, kappa=kappa, seed=seed + k), tokens[:prompt_len].tolist()))
    return out


def log2_ceil(n: int) -> int:
    return math.ceil(math.log2(n)) if n > 1 else 0
