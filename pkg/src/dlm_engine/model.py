"""Diffusion model implementations.

``ToyModel`` is a small seeded bidirectional transformer that supports
region-restricted forwards against a :class:`~dlm_engine.kvcache.KVCache`.
``ScriptedModel`` replays pre-recorded logits and exists to make decoder
behaviour exactly controllable in tests.

Both expose the same duck-typed surface used by the engine::

    vocab_size, max_len, mask_id, eos_id, embedding_matrix
    new_cache(length)
    forward(tokens, overrides=None, cache=None, region=None, step=None)
    compute_kv_full(tokens, overrides, cache, step=0)
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kvcache
from .core import EngineError, LogitsMatrix, TokenBuffer

SCRIPT_FORMAT = "dlm-scripted-logits"
SCRIPT_VERSION = 1


class ModelError(EngineError):
    pass


class ScriptFormatError(ModelError):
    """Schema violation in a scripted-logits file; ``path`` locates it."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class EmbeddingOverride:
    """Replacement input embeddings for masked positions, keyed by position."""

    entries: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, pos):
        return pos in self.entries

    def positions(self) -> np.ndarray:
        return np.array(sorted(self.entries), dtype=np.int64)


def _as_override(overrides) -> EmbeddingOverride:
    if overrides is None:
        return EmbeddingOverride()
    if isinstance(overrides, EmbeddingOverride):
        return overrides
    return EmbeddingOverride(dict(overrides))


def _check_region(region, length: int) -> np.ndarray:
    if region is None:
        return np.arange(length, dtype=np.int64)
    region = np.asarray(region, dtype=np.int64).reshape(-1)
    if region.size == 0:
        raise ModelError("forward region must be nonempty")
    if region.min() < 0 or region.max() >= length:
        raise ModelError(f"forward region outside sequence of length {length}")
    if np.unique(region).size != region.size:
        raise ModelError("forward region has duplicate positions")
    return region


# ---------------------------------------------------------------------------
# Toy transformer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyModelParams:
    vocab: int = 64
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 256
    seed: int = 0
    mask_id: Optional[int] = None
    eos_id: Optional[int] = None
    logit_scale: float = 1.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ModelError("d_model must be divisible by n_heads")
        if self.vocab < 3:
            raise ModelError("vocab must hold at least the mask, EOS and one text token")


def _layer_norm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


class ToyModel:
    """Seeded pre-LayerNorm transformer with full (non-causal) attention.

    Weights are standard normal scaled by ``1/sqrt(d_model)``; the input
    embedding and output projection are drawn independently (no weight tying).
    ``mask_id`` defaults to ``vocab - 1`` and ``eos_id`` to ``vocab - 2``.
    """

    def __init__(self, params: ToyModelParams = ToyModelParams()):
        self.params = params
        p = params
        self.vocab_size = p.vocab
        self.max_len = p.max_len
        self.mask_id = p.vocab - 1 if p.mask_id is None else p.mask_id
        self.eos_id = p.vocab - 2 if p.eos_id is None else p.eos_id
        self.d_head = p.d_model // p.n_heads

        rng = np.random.default_rng(p.seed)
        scale = 1.0 / math.sqrt(p.d_model)

        def draw(*shape):
            return rng.standard_normal(shape) * scale

        self.W_emb = draw(p.vocab, p.d_model)
        self.W_pos = draw(p.max_len, p.d_model)
        self.layers = []
        for _ in range(p.n_layers):
            self.layers.append({
                "wq": draw(p.d_model, p.d_model),
                "wk": draw(p.d_model, p.d_model),
                "wv": draw(p.d_model, p.d_model),
                "wo": draw(p.d_model, p.d_model),
                "w1": draw(p.d_model, 4 * p.d_model),
                "w2": draw(4 * p.d_model, p.d_model),
            })
        self.W_out = draw(p.d_model, p.vocab)

    @property
    def embedding_matrix(self) -> np.ndarray:
        return self.W_emb

    @property
    def mask_embedding(self) -> np.ndarray:
        return self.W_emb[self.mask_id]

    def new_cache(self, length: int) -> kvcache.KVCache:
        return kvcache.create(length, self.params.n_layers, self.params.n_heads,
                              self.d_head, max_len=self.max_len)

    def embed(self, tokens: TokenBuffer, overrides=None) -> np.ndarray:
        ov = _as_override(overrides)
        length = len(tokens)
        if length > self.max_len:
            raise ModelError(f"sequence length {length} exceeds max_len {self.max_len}")
        rows = self.W_emb[tokens.ids]
        for pos, vec in ov.entries.items():
            if not 0 <= pos < length:
                raise ModelError(f"override position {pos} outside sequence")
            if tokens.ids[pos] != tokens.mask_id:
                raise ModelError(f"override at decided position {pos}")
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.params.d_model,):
                raise ModelError(f"override at {pos} has shape {vec.shape}")
            rows[pos] = vec
        return rows + self.W_pos[:length]

    def forward(self, tokens: TokenBuffer, overrides=None, cache: Optional[kvcache.KVCache] = None,
                region=None, step: Optional[int] = None) -> LogitsMatrix:
        length = len(tokens)
        region = _check_region(region, length)
        if cache is None:
            # no cache to read from: run densely and restrict
            full = self._run(tokens, overrides, None, np.arange(length, dtype=np.int64))
            if region.size == length and np.array_equal(region, np.arange(length)):
                return LogitsMatrix(region, full)
            return LogitsMatrix(region, full[region])
        if cache.length != length:
            raise kvcache.CacheError(f"cache length {cache.length} != sequence length {length}")
        outside = np.setdiff1d(np.arange(length), region, assume_unique=True)
        if not cache.populated(outside):
            raise kvcache.CacheError("cache has no entry for a position outside the forward region")
        scores = self._run(tokens, overrides, cache, region)
        if step is not None:
            cache.mark_fresh(region, step)
        return LogitsMatrix(region, scores)

    def compute_kv_full(self, tokens: TokenBuffer, overrides, cache: kvcache.KVCache, step: int = 0) -> None:
        if cache.length != len(tokens):
            raise kvcache.CacheError(f"cache length {cache.length} != sequence length {len(tokens)}")
        self._run(tokens, overrides, cache, np.arange(len(tokens), dtype=np.int64))
        cache.mark_fresh(np.arange(len(tokens)), step)

    def oracle_forward(self, tokens: TokenBuffer, overrides=None, region=None) -> LogitsMatrix:
        """Dense no-cache forward; never touches any cache."""
        return self.forward(tokens, overrides, None, region)

    def _run(self, tokens, overrides, cache, region) -> np.ndarray:
        p = self.params
        length = len(tokens)
        n, heads, dh = region.size, p.n_heads, self.d_head
        x = self.embed(tokens, overrides)[region]
        for li, w in enumerate(self.layers):
            h = _layer_norm(x)
            q = (h @ w["wq"]).reshape(n, heads, dh)
            k = (h @ w["wk"]).reshape(n, heads, dh)
            v = (h @ w["wv"]).reshape(n, heads, dh)
            keys = np.empty((length, heads, dh))
            vals = np.empty((length, heads, dh))
            if cache is not None:
                keys[:] = cache.keys[li]
                vals[:] = cache.values[li]
            keys[region] = k
            vals[region] = v
            att = np.matmul(q.transpose(1, 0, 2), keys.transpose(1, 2, 0)) / math.sqrt(dh)
            att = np.exp(att - att.max(axis=-1, keepdims=True))
            att /= att.sum(axis=-1, keepdims=True)
            mixed = np.matmul(att, vals.transpose(1, 0, 2)).transpose(1, 0, 2).reshape(n, p.d_model)
            x = x + mixed @ w["wo"]
            x = x + _gelu(_layer_norm(x) @ w["w1"]) @ w["w2"]
            if cache is not None:
                cache.store(li, region, k, v)
        return (_layer_norm(x) @ self.W_out) * p.logit_scale


# ---------------------------------------------------------------------------
# Scripted model
# ---------------------------------------------------------------------------


class ScriptedModel:
    """Returns ``steps[k]`` restricted to the queried region on forward call k.

    Overrides are ignored and caches only receive freshness bookkeeping.
    """

    embedding_matrix = None

    def __init__(self, steps, mask_id: int, eos_id: int, meta: Optional[dict] = None):
        arr = np.asarray(steps, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] == 0:
            raise ModelError("scripted steps must be a nonempty (n_steps, L, V) array")
        if not np.all(np.isfinite(arr)):
            raise ModelError("scripted scores must be finite")
        self.steps = arr
        self.mask_id = int(mask_id)
        self.eos_id = int(eos_id)
        self.meta = dict(meta or {})
        self.cursor = 0

    @property
    def n_steps(self) -> int:
        return int(self.steps.shape[0])

    @property
    def seq_len(self) -> int:
        return int(self.steps.shape[1])

    @property
    def vocab_size(self) -> int:
        return int(self.steps.shape[2])

    @property
    def max_len(self) -> int:
        return self.seq_len

    def reset(self) -> None:
        self.cursor = 0

    def new_cache(self, length: int) -> kvcache.KVCache:
        return kvcache.create(length, max_len=self.max_len)

    def forward(self, tokens=None, overrides=None, cache=None, region=None, step=None) -> LogitsMatrix:
        if self.cursor >= self.n_steps:
            raise ModelError(f"scripted model exhausted after {self.n_steps} forwards")
        if tokens is not None and len(tokens) != self.seq_len:
            raise ModelError(f"sequence length {len(tokens)} != scripted length {self.seq_len}")
        region = _check_region(region, self.seq_len)
        scores = self.steps[self.cursor][region]
        self.cursor += 1
        if cache is not None and step is not None:
            cache.mark_fresh(region, step)
        return LogitsMatrix(region, scores)

    def compute_kv_full(self, tokens, overrides, cache, step: int = 0) -> None:
        if cache.length != self.seq_len:
            raise kvcache.CacheError(f"cache length {cache.length} != scripted length {self.seq_len}")
        cache.mark_fresh(np.arange(cache.length), step)


def scripted_forward(model: ScriptedModel, region) -> LogitsMatrix:
    return model.forward(None, region=region)


# ---------------------------------------------------------------------------
# Scripted-logits file format
# ---------------------------------------------------------------------------


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise ScriptFormatError(path, message)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _parse_step(rec, path: str, seq_len: int, vocab: int) -> np.ndarray:
    _require(isinstance(rec, dict), path, "step record must be an object")
    forms = [k for k in ("dense", "rows", "entries") if k in rec]
    _require(len(forms) == 1, path, "step needs exactly one of 'dense', 'rows', 'entries'")
    default = rec.get("default", 0.0)
    _require(_is_number(default), f"{path}.default", "must be a finite number")
    form = forms[0]
    if form == "dense":
        dense = rec["dense"]
        _require(isinstance(dense, list) and len(dense) == seq_len, f"{path}.dense",
                 f"expected {seq_len} rows")
        for i, row in enumerate(dense):
            _require(isinstance(row, list) and len(row) == vocab and all(map(_is_number, row)),
                     f"{path}.dense[{i}]", f"expected {vocab} finite numbers")
        return np.asarray(dense, dtype=np.float64)
    out = np.full((seq_len, vocab), float(default))
    if form == "rows":
        rows = rec["rows"]
        _require(isinstance(rows, dict), f"{path}.rows", "must be an object")
        pos, scores = rows.get("positions"), rows.get("scores")
        _require(isinstance(pos, list) and isinstance(scores, list) and len(pos) == len(scores),
                 f"{path}.rows", "'positions' and 'scores' must be lists of equal length")
        for i, (q, row) in enumerate(zip(pos, scores)):
            _require(isinstance(q, int) and 0 <= q < seq_len, f"{path}.rows.positions[{i}]",
                     f"position must be an integer in [0, {seq_len})")
            _require(isinstance(row, list) and len(row) == vocab and all(map(_is_number, row)),
                     f"{path}.rows.scores[{i}]", f"expected {vocab} finite numbers")
            out[q] = row
        return out
    entries = rec["entries"]
    _require(isinstance(entries, list), f"{path}.entries", "must be a list")
    for i, ent in enumerate(entries):
        ok = (isinstance(ent, list) and len(ent) == 3 and isinstance(ent[0], int)
              and isinstance(ent[1], int) and _is_number(ent[2])
              and 0 <= ent[0] < seq_len and 0 <= ent[1] < vocab)
        _require(ok, f"{path}.entries[{i}]", "expected [position, token, score] within bounds")
        out[ent[0], ent[1]] = ent[2]
    return out


def script_from_dict(doc) -> ScriptedModel:
    _require(isinstance(doc, dict), "$", "document must be an object")
    _require(doc.get("format") == SCRIPT_FORMAT, "$.format", f"expected {SCRIPT_FORMAT!r}")
    _require(doc.get("version") == SCRIPT_VERSION, "$.version", f"unsupported version {doc.get('version')!r}")
    for key in ("seq_len", "vocab_size", "mask_id", "eos_id"):
        _require(isinstance(doc.get(key), int) and not isinstance(doc.get(key), bool),
                 f"$.{key}", "must be an integer")
    seq_len, vocab = doc["seq_len"], doc["vocab_size"]
    _require(seq_len > 0, "$.seq_len", "must be positive")
    _require(vocab > 0, "$.vocab_size", "must be positive")
    for key in ("mask_id", "eos_id"):
        _require(0 <= doc[key] < vocab, f"$.{key}", "must lie in [0, vocab_size)")
    steps = doc.get("steps")
    _require(isinstance(steps, list) and steps, "$.steps", "must be a nonempty list")
    arr = np.stack([_parse_step(rec, f"$.steps[{i}]", seq_len, vocab) for i, rec in enumerate(steps)])
    meta = doc.get("meta", {})
    _require(isinstance(meta, dict), "$.meta", "must be an object")
    return ScriptedModel(arr, doc["mask_id"], doc["eos_id"], meta=meta)


def load_script(path) -> ScriptedModel:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScriptFormatError(f"{os.fspath(path)}:{exc.lineno}:{exc.colno}", exc.msg) from exc
    return script_from_dict(doc)


def script_to_dict(steps, mask_id: int, eos_id: int, meta: Optional[dict] = None,
                   regions=None, default: float = 0.0) -> dict:
    """Serialize steps; with ``regions``, only those rows are written per step."""
    steps = [np.asarray(s, dtype=np.float64) for s in steps]
    seq_len, vocab = steps[0].shape
    records = []
    for i, s in enumerate(steps):
        if regions is None:
            records.append({"dense": s.tolist()})
        else:
            pos = [int(q) for q in regions[i]]
            records.append({"default": default, "rows": {"positions": pos, "scores": s[pos].tolist()}})
    doc = {
        "format": SCRIPT_FORMAT,
        "version": SCRIPT_VERSION,
        "seq_len": int(seq_len),
        "vocab_size": int(vocab),
        "mask_id": int(mask_id),
        "eos_id": int(eos_id),
        "steps": records,
    }
    if meta:
        doc["meta"] = meta
    return doc


def save_script(path, model: ScriptedModel) -> None:
    doc = script_to_dict(model.steps, model.mask_id, model.eos_id, meta=model.meta)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
