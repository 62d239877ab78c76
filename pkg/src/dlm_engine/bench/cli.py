"""Command-line interface: ``generate`` for one prompt, ``bench`` for a suite.

Every generation flag can also come from ``--config FILE`` (a JSON object
whose keys mirror the long flag names, with dashes or underscores); explicit
flags win over the file.
"""
from __future__ import annotations

import argparse
import json
import sys

from ..core import CACHE_POLICIES, DECODERS, EngineError, GenerationConfig
from ..engine import generate
from ..model import ToyModel, ToyModelParams, load_script
from .metrics import tpf, tps
from .runner import SuiteItem, dumps_report, make_report, result_row, run_benchmark, write_report
from .trace import capture_trace

# flag dest -> GenerationConfig field
CONFIG_FLAGS = {
    "gen_len": "gen_len",
    "block_size": "block_size",
    "decoder": "decoder",
    "cache": "cache",
    "threshold": "threshold",
    "hier_hi": "hier_decode_threshold",
    "hier_lo": "hier_lower_bound",
    "credit_alpha": "credit_alpha",
    "credit_beta": "credit_beta",
    "credit_gamma": "credit_gamma",
    "smooth": "smooth_enabled",
    "alpha_init": "smooth_alpha_init",
    "alpha_growth": "smooth_alpha_growth",
    "alpha_preset": "smooth_alpha_preset",
    "sched_target": "sched_target",
    "sched_decay_steps": "sched_decay_steps",
    "prefix_look": "prefix_look",
    "after_look": "after_look",
    "warmup_times": "warmup_times",
    "early_termination": "early_termination",
    "measure_deviation": "measure_deviation",
    "seed": "seed",
}
TOY_FLAGS = ("vocab", "d_model", "n_layers", "n_heads", "max_len", "logit_scale")
OTHER_KEYS = {"model", "report", "trace", "workers", "prompt", "suite"} | set(TOY_FLAGS)


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--model", default=S, help="'toy' (seeded transformer) or 'scripted:PATH'")
    p.add_argument("--gen-len", type=int, default=S)
    p.add_argument("--block-size", type=int, default=S)
    p.add_argument("--decoder", choices=DECODERS, default=S)
    p.add_argument("--cache", choices=CACHE_POLICIES, default=S)
    p.add_argument("--threshold", type=float, default=S)
    p.add_argument("--hier-hi", type=float, default=S)
    p.add_argument("--hier-lo", type=float, default=S)
    p.add_argument("--credit-alpha", type=float, default=S)
    p.add_argument("--credit-beta", type=float, default=S)
    p.add_argument("--credit-gamma", type=float, default=S)
    p.add_argument("--smooth", action=argparse.BooleanOptionalAction, default=S)
    p.add_argument("--alpha-init", type=float, default=S)
    p.add_argument("--alpha-growth", type=float, default=S)
    p.add_argument("--alpha-preset", type=float, default=S)
    p.add_argument("--sched-target", type=float, default=S)
    p.add_argument("--sched-decay-steps", type=int, default=S)
    p.add_argument("--prefix-look", type=int, default=S)
    p.add_argument("--after-look", type=int, default=S)
    p.add_argument("--warmup-times", type=int, default=S)
    p.add_argument("--early-termination", action=argparse.BooleanOptionalAction, default=S)
    p.add_argument("--measure-deviation", action=argparse.BooleanOptionalAction, default=S)
    p.add_argument("--seed", type=int, default=S)
    for name in TOY_FLAGS:
        kind = float if name == "logit_scale" else int
        p.add_argument("--" + name.replace("_", "-"), type=kind, default=S,
                       help="toy model hyperparameter")
    p.add_argument("--report", default=S, help="write a run report (JSON) here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlm-engine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate", help="generate for one prompt")
    gen.add_argument("--prompt", default=argparse.SUPPRESS,
                     help="comma-separated token ids, e.g. 5,7,9")
    gen.add_argument("--trace", default=argparse.SUPPRESS, help="capture a replayable trace here")
    _add_common(gen)
    bench = sub.add_parser("bench", help="run a benchmark suite")
    bench.add_argument("suite", nargs="?", default=argparse.SUPPRESS, help="suite file (JSON Lines)")
    bench.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    _add_common(bench)
    return parser


def _load_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise EngineError(f"{path}: config file must hold a JSON object")
    out = {}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in CONFIG_FLAGS and dest not in OTHER_KEYS:
            raise EngineError(f"{path}: unknown config key {key!r}")
        out[dest] = value
    return out


def resolve(args: argparse.Namespace) -> tuple:
    """Merge defaults, config file and flags into (GenerationConfig, other options)."""
    values = _load_config_file(args.config) if args.config else {}
    values.update({k: v for k, v in vars(args).items() if k not in ("config", "command")})
    cfg = {CONFIG_FLAGS[k]: v for k, v in values.items() if k in CONFIG_FLAGS}
    other = {k: v for k, v in values.items() if k not in CONFIG_FLAGS}
    return GenerationConfig(**cfg), other


def make_model(name: str, config: GenerationConfig, other: dict):
    if name == "toy":
        toy = {k: other[k] for k in TOY_FLAGS if k in other}
        return ToyModel(ToyModelParams(seed=config.seed, **toy)), f"toy:seed={config.seed}"
    if name.startswith("scripted:"):
        path = name.split(":", 1)[1]
        return load_script(path), name
    raise EngineError(f"unknown model {name!r}; use 'toy' or 'scripted:PATH'")


def _parse_prompt(text) -> list:
    if isinstance(text, list):
        return [int(t) for t in text]
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise EngineError(f"bad --prompt {text!r}: expected comma-separated integers") from exc


def cmd_generate(config, other) -> int:
    model, desc = make_model(other.get("model", "toy"), config, other)
    prompt = _parse_prompt(other.get("prompt", "1"))
    if "trace" in other:
        result, _ = capture_trace(model, prompt, config, path=other["trace"])
    else:
        result = generate(model, prompt, config)
    out = {
        "generated": result.generated.tolist(),
        "T": result.tokens_before_eos,
        "F": result.forwards,
        "t": result.wall_time,
        "tpf": tpf(result),
        "tps": tps(result),
        "early_terminated": result.early_terminated,
        "per_step_commits": [[s, list(p)] for s, p in result.per_step_commits],
    }
    print(json.dumps(out))
    if "report" in other:
        row = result_row(SuiteItem("prompt", prompt), result)
        write_report(other["report"], make_report([row], config, desc))
    return 0


def cmd_bench(config, other) -> int:
    if "suite" not in other:
        raise EngineError("bench needs a suite file")
    model, desc = make_model(other.get("model", "toy"), config, other)
    report = run_benchmark(other["suite"], config, model, workers=int(other.get("workers", 1)),
                           model_desc=desc, report_path=other.get("report"))
    if "report" not in other:
        print(dumps_report(report))
    else:
        agg = report["aggregate"]
        print(json.dumps({k: agg.get(k) for k in ("N", "failed", "mean_tpf", "mean_tps")}))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config, other = resolve(args)
        if args.command == "generate":
            return cmd_generate(config, other)
        return cmd_bench(config, other)
    except (EngineError, OSError, ValueError, TypeError) as exc:
        print(f"dlm-engine: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
