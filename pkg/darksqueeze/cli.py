"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 numerical-validity failure.
A sweep exits 0 when at least one grid point ran and 2 when every point
raised.
"""
import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from darksqueeze.core.algebra import AlgebraError
from darksqueeze.core.config import settings
from darksqueeze.core.params import ModelError, TruncationError, derive_couplings
from darksqueeze.core.run_config import (
    ConfigError,
    RunConfig,
    SweepSpec,
    describe_error,
    execute_run,
    load_run_config,
)
from darksqueeze.services.dynamics import (
    SERIES_COLUMNS,
    DynamicsError,
    ProtocolError,
)
from darksqueeze.services.oracle import Verdict, run_suite
from darksqueeze.utils.analysis import AnalysisError, cooperativity, error_budget
from darksqueeze.utils.output import OutputError, write_csv, write_jsonl

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVALID = 2

SUMMARY_COLUMNS = [
    "final_fidelity", "leakage", "max_leakage", "min_gap_kHz",
    "n_a_final", "n_b_final", "valid", "breach_time_us", "breach_reason",
]


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _fmt(value: Optional[float], unit: str = "") -> str:
    if value is None:
        return "n/a (above threshold)"
    return f"{value:.4f} {unit}".rstrip()


def cmd_derive(config: RunConfig) -> int:
    """Prints the derived couplings at the ramp end, with μ at both ends."""
    params, schedule, _, level = config.resolve()
    start = derive_couplings(params, 0.0)
    c = derive_couplings(params, schedule.omega2_max)
    rows = [
        ("eta_e", _fmt(c.eta_e, "2π·kHz")),
        ("eta_g", _fmt(c.eta_g, "2π·kHz")),
        ("xi_e", _fmt(c.xi_e, "2π·kHz")),
        ("xi_g", _fmt(c.xi_g, "2π·kHz")),
        ("lambda1", _fmt(c.lambda1, "2π·kHz")),
        ("lambda2", _fmt(c.lambda2, "2π·kHz")),
        ("mu_max", _fmt(start.mu, "2π·kHz")),
        ("mu_min", _fmt(c.mu, "2π·kHz")),
        ("r", _fmt(c.r)),
        ("theta", _fmt(c.theta(level.branch), "rad")),
        ("delta_a", _fmt(c.delta_a, "2π·kHz")),
        ("delta_b", _fmt(c.delta_b, "2π·kHz")),
        ("large_detuning_ok", "yes" if c.large_detuning_ok else "no"),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name.ljust(width)} = {value}")
    if c.degenerate:
        print("warning: delta_a = delta_b = 0, dark state is degenerate")
    return EXIT_OK


def cmd_budget(config: RunConfig) -> int:
    params, schedule, _, _ = config.resolve()
    try:
        budget = error_budget(params, schedule)
    except AnalysisError as e:
        return _fail(str(e), EXIT_CONFIG)
    for name, value in budget.to_dict().items():
        print(f"{name.ljust(12)} = {value:.6g}")
    coop = cooperativity(params)
    if math.isfinite(coop):
        print(f"{'cooperativity'.ljust(12)} = {coop:.6g}")
    write_csv(config.output or "budget.csv", pd.DataFrame([budget.to_dict()]))
    return EXIT_OK


def _summary_line(summary: Dict[str, Any]) -> str:
    parts = [
        f"final_fidelity={summary['final_fidelity']:.6f}",
        f"leakage={summary['leakage']:.6g}",
        f"min_gap_kHz={summary['min_gap_kHz']:.6g}",
        f"valid={'yes' if summary['valid'] else 'no'}",
    ]
    if not summary["valid"]:
        parts.append(f"breach at t={summary['breach_time_us']:.6g} us ({summary['breach_reason']})")
    return " ".join(parts)


def cmd_evolve(config: RunConfig) -> int:
    """Runs one protocol, writes the time series as CSV and prints a summary line."""
    result = execute_run(config)
    output = config.output or "evolve.csv"
    write_csv(output, result.time_series.to_frame(), SERIES_COLUMNS)
    summary = result.summary()
    print(_summary_line(summary))
    return EXIT_OK if result.valid else EXIT_INVALID


def _sweep_point(config: RunConfig) -> Dict[str, Any]:
    try:
        summary = execute_run(config).summary()
        summary["error"] = None
    except Exception as e:
        logger.error(f"Sweep point failed: {str(e)}", exc_info=True)
        summary = {name: math.nan for name in SUMMARY_COLUMNS}
        summary.update({"valid": False, "breach_reason": None, "breach_time_us": None, "error": str(e)})
    return summary


def cmd_sweep(spec: SweepSpec, output: Optional[str] = None) -> int:
    """One summary row per grid point, in grid order.

    A point that raises gets NaN metrics and its message in ``error``; a
    point that finishes outside its numerical validity is a normal row with
    ``valid`` false. Returns EXIT_OK unless every point raised, in which
    case EXIT_INVALID (2).
    """
    points = spec.points()
    workers = settings.threads or None
    logger.info(f"Sweeping {spec.parameter} over {len(points)} points")
    if workers == 1 or len(points) == 1:
        summaries = [_sweep_point(p) for p in points]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_sweep_point, points))

    rows = [{spec.parameter: value, **summary} for value, summary in zip(spec.values, summaries)]
    columns = [spec.parameter] + SUMMARY_COLUMNS + ["error"]
    write_csv(output or spec.base.output or "sweep.csv", pd.DataFrame(rows), columns)
    failed = sum(1 for s in summaries if s["error"] is not None)
    print(f"{len(points) - failed}/{len(points)} points completed")
    return EXIT_INVALID if failed == len(points) else EXIT_OK


def cmd_oracle(config: RunConfig, negative_control: bool = False) -> int:
    """Runs the oracle suite for the configured level and prints one verdict per check."""
    params, schedule, evolve, level = config.resolve()
    reports = run_suite(params, schedule, evolve, level, (config.cavity_dim, config.b_dim), negative_control)
    unexpected = 0
    for report in reports:
        label = report.verdict.value.upper()
        if report.expected_failure:
            ok = report.verdict == Verdict.FAIL
            label = f"{label} (expected)" if ok else f"{label} (expected fail)"
            unexpected += 0 if ok else 1
        elif report.verdict == Verdict.FAIL:
            unexpected += 1
        detail = report.reason or ", ".join(f"{k}={v:.3g}" for k, v in report.deviations.items())
        print(f"{label:<22} {report.check}: {detail}")
    write_jsonl(config.output or "oracle.jsonl", (r.to_dict() for r in reports))
    return EXIT_INVALID if unexpected else EXIT_OK


def cmd_serve(host: Optional[str], port: Optional[int]) -> int:
    import uvicorn

    uvicorn.run("darksqueeze.main:app", host=host or settings.api_host, port=port or settings.api_port)
    return EXIT_OK


def _parse_values(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"sweep values must be numbers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darksqueeze", description="Dark-state squeezing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("config", nargs="?", help="key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        return p

    with_config(sub.add_parser("derive", help="print derived couplings"))
    with_config(sub.add_parser("budget", help="print the leakage and decoherence budget"))
    with_config(sub.add_parser("evolve", help="run one protocol and write its time series"))
    sweep = with_config(sub.add_parser("sweep", help="run a protocol over a parameter grid"))
    sweep.add_argument("--parameter", required=True)
    sweep.add_argument("--values", required=True, help="comma-separated grid")
    sweep.add_argument("--output")
    oracle = with_config(sub.add_parser("oracle", help="cross-level validation suite"))
    oracle.add_argument("--negative-control", action="store_true")
    serve = sub.add_parser("serve", help="run the HTTP API")
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "serve":
        return cmd_serve(args.host, args.port)
    config = load_run_config(args.config, args.overrides)
    if args.command == "derive":
        return cmd_derive(config)
    if args.command == "budget":
        return cmd_budget(config)
    if args.command == "evolve":
        return cmd_evolve(config)
    if args.command == "sweep":
        try:
            spec = SweepSpec(parameter=args.parameter, values=_parse_values(args.values), base=config)
        except ValidationError as e:
            raise ConfigError(describe_error(e))
        return cmd_sweep(spec, args.output)
    return cmd_oracle(config, args.negative_control)


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=getattr(logging, str(settings.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as e:
        return _fail(str(e), EXIT_CONFIG)
    except TruncationError as e:
        return _fail(f"truncation: {e}", EXIT_INVALID)
    except ProtocolError as e:
        return _fail(str(e), EXIT_CONFIG)
    except (ModelError, AnalysisError) as e:
        return _fail(str(e), EXIT_CONFIG)
    except (DynamicsError, AlgebraError, OutputError) as e:
        return _fail(str(e), EXIT_INVALID)


if __name__ == "__main__":
    sys.exit(main())
