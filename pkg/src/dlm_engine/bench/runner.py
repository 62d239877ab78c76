"""Benchmark suites and run reports.

Suite file (JSON Lines, ``dlm-suite`` v1): one object per line,
``{"id": ..., "prompt": [int, ...], "reference": ...}`` with ``reference``
optional. Blank lines and lines starting with ``#`` are skipped; an optional
first line ``{"schema": "dlm-suite", "version": 1}`` declares the schema.

Report file (JSON, ``dlm-run-report`` v1): config echo, one row per sequence
and an aggregate block. Fields listed in ``TIMING_FIELDS`` depend on the
machine; everything else is deterministic for a fixed suite, model and config.
"""
from __future__ import annotations

import copy
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import EngineError, GenerationConfig
from ..engine import generate
from .metrics import mean, tpf, tps

SUITE_SCHEMA = "dlm-suite"
REPORT_SCHEMA = "dlm-run-report"
SCHEMA_VERSION = 1
TIMING_FIELDS = frozenset({"t", "tps", "mean_tps"})


class SuiteFormatError(EngineError, ValueError):
    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


@dataclass
class SuiteItem:
    id: object
    prompt: list
    reference: object = None


def parse_suite(text: str, source: str = "<suite>") -> list:
    items = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        loc = f"{source}:{lineno}"
        try:
            rec = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise SuiteFormatError(f"{loc}:{exc.colno}", exc.msg) from exc
        if not isinstance(rec, dict):
            raise SuiteFormatError(loc, "record must be a JSON object")
        if "schema" in rec:
            if items or rec.get("schema") != SUITE_SCHEMA or rec.get("version") != SCHEMA_VERSION:
                raise SuiteFormatError(loc, f"expected header {SUITE_SCHEMA!r} version {SCHEMA_VERSION} on the first line")
            continue
        if "id" not in rec or "prompt" not in rec:
            raise SuiteFormatError(loc, "record needs 'id' and 'prompt'")
        prompt = rec["prompt"]
        if (not isinstance(prompt, list) or not prompt
                or not all(isinstance(t, int) and not isinstance(t, bool) and t >= 0 for t in prompt)):
            raise SuiteFormatError(loc, "'prompt' must be a nonempty list of non-negative integers")
        key = json.dumps(rec["id"], sort_keys=True)
        if key in seen:
            raise SuiteFormatError(loc, f"duplicate id {rec['id']!r}")
        seen.add(key)
        items.append(SuiteItem(rec["id"], prompt, rec.get("reference")))
    if not items:
        raise SuiteFormatError(source, "suite is empty")
    return items


def load_suite(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_suite(fh.read(), os.fspath(path))


def write_suite(path, items) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": SUITE_SCHEMA, "version": SCHEMA_VERSION}) + "\n")
        for it in items:
            rec = {"id": it.id, "prompt": list(it.prompt)}
            if it.reference is not None:
                rec["reference"] = it.reference
            fh.write(json.dumps(rec) + "\n")


def result_row(item: SuiteItem, res) -> dict:
    row = {"id": item.id, "prompt_len": len(item.prompt)}
    if item.reference is not None:
        row["reference"] = item.reference
    stale = [s.stale for s in res.steps]
    devs = [s.deviation for s in res.steps if s.deviation is not None]
    row.update({
        "T": res.tokens_before_eos,
        "F": res.forwards,
        "t": res.wall_time,
        "tpf": tpf(res),
        "tps": tps(res),
        "early_terminated": res.early_terminated,
        "generated": res.generated.tolist(),
        "staleness": {
            "mean_stale": mean(stale),
            "max_stale": max(stale),
            "max_age": max(s.max_age for s in res.steps),
            "max_deviation": max(devs) if devs else None,
        },
        "error": None,
    })
    return row


def _run_one(model, item: SuiteItem, config: GenerationConfig) -> dict:
    try:
        return result_row(item, generate(model, item.prompt, config))
    except EngineError as exc:
        row = {"id": item.id, "prompt_len": len(item.prompt)}
        if item.reference is not None:
            row["reference"] = item.reference
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row


def aggregate(rows: list) -> dict:
    ok = [r for r in rows if r.get("error") is None]
    agg = {"N": len(ok), "failed": len(rows) - len(ok)}
    if ok:
        agg["mean_tpf"] = mean(r["tpf"] for r in ok)
        agg["mean_tps"] = mean(r["tps"] for r in ok)
        agg["staleness"] = {
            "mean_stale": mean(r["staleness"]["mean_stale"] for r in ok),
            "max_stale": max(r["staleness"]["max_stale"] for r in ok),
        }
        devs = [r["staleness"]["max_deviation"] for r in ok if r["staleness"]["max_deviation"] is not None]
        agg["staleness"]["max_deviation"] = max(devs) if devs else None
    return agg


def make_report(rows: list, config: GenerationConfig, model_desc: str) -> dict:
    return {
        "schema": REPORT_SCHEMA,
        "version": SCHEMA_VERSION,
        "model": model_desc,
        "config": config.to_dict(),
        "sequences": rows,
        "aggregate": aggregate(rows),
    }


def run_benchmark(suite, config: GenerationConfig, model, workers: int = 1,
                  model_desc: Optional[str] = None, report_path=None) -> dict:
    """Generate for every suite prompt and assemble a report.

    ``suite`` is a path or a list of :class:`SuiteItem`. Sequence failures are
    recorded in their row and excluded from the aggregates.
    """
    items = load_suite(suite) if isinstance(suite, (str, os.PathLike)) else list(suite)
    if not items:
        raise SuiteFormatError("<suite>", "suite is empty")
    config.validate()
    if workers > 1:
        # scripted models carry a replay cursor, so each task gets its own copy
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda it: _run_one(copy.copy(model), it, config), items))
    else:
        rows = [_run_one(model, it, config) for it in items]
    report = make_report(rows, config, model_desc or type(model).__name__)
    if report_path is not None:
        write_report(report_path, report)
    return report


def strip_timing(obj):
    """Copy of a report with machine-dependent timing fields removed."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_FIELDS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_json_default)


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_report(report) + "\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")
