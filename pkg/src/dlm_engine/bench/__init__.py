"""Metrics, benchmark runner, trace capture/replay and the CLI."""
from .metrics import MetricError, mean, tpf, tps
from .runner import (SuiteFormatError, SuiteItem, aggregate, dumps_report, load_suite, make_report,
                     parse_suite, result_row, run_benchmark, strip_timing, write_report, write_suite)
from .trace import TraceRecorder, capture_trace, replay_trace
