"""Trace capture and replay.

A trace is a scripted-logits file (see :mod:`dlm_engine.model`) holding the
rows each forward actually queried, plus a ``meta`` block with the prompt,
config and commit log of the captured run. Replaying it through the same
decoder and cache configuration reproduces the commit log exactly.
"""
from __future__ import annotations

import json

import numpy as np

from ..core import GenerationConfig
from ..engine import generate
from ..model import ScriptedModel, ScriptFormatError, load_script, script_to_dict


class TraceRecorder:
    """Engine ``recorder`` hook that keeps every forward's region logits."""

    def __init__(self, length: int, vocab: int):
        self.length = length
        self.vocab = vocab
        self.regions: list = []
        self.steps: list = []

    def __call__(self, region, scores) -> None:
        full = np.zeros((self.length, self.vocab))
        full[region] = scores
        self.regions.append(np.asarray(region).copy())
        self.steps.append(full)

    def to_dict(self, mask_id: int, eos_id: int, meta=None) -> dict:
        return script_to_dict(self.steps, mask_id, eos_id, meta=meta, regions=self.regions)


def capture_trace(model, prompt, config: GenerationConfig, path=None):
    """Run ``generate`` while recording logits; returns ``(result, trace_doc)``."""
    recorder = TraceRecorder(len(prompt) + config.gen_len, model.vocab_size)
    result = generate(model, prompt, config, recorder=recorder)
    meta = {
        "prompt": [int(t) for t in prompt],
        "config": config.to_dict(),
        "per_step_commits": [[s, list(pos)] for s, pos in result.per_step_commits],
    }
    doc = recorder.to_dict(model.mask_id, model.eos_id, meta=meta)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
    return result, doc


def replay_trace(path) -> ScriptedModel:
    model = load_script(path)
    commits = model.meta.get("per_step_commits")
    if commits is not None and not isinstance(commits, list):
        raise ScriptFormatError("$.meta.per_step_commits", "must be a list")
    return model
