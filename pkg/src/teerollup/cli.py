"""Command-line entry point.

Exit codes:
    0  success
    1  verify-trace found invariant violations
    2  invalid scenario configuration
    3  invariant breach during a run (trace still written)
    4  trace file unreadable or failed its integrity check
"""

from __future__ import annotations

import argparse
import os
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path

from . import config
from .chain import UNCALIBRATED_METHODS, GasTable, gas_to_usd
from .sim.checks import verify_records
from .sim.harness import run_scenario
from .sim.metrics import compute_report, report_csv, report_json
from .sim.trace import TraceIntegrityError, load

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_CONFIG = 2
EXIT_BREACH = 3
EXIT_INTEGRITY = 4

OUT_ENV = "TEEROLLUP_OUT"
TABLE_ORDER = ("Deposit", "UpdateState", "StartChallenge", "ResolveChallenge", "SettleRollup", "SettleWithdraw")


def cmd_run(args: argparse.Namespace) -> int:
    try:
        path = config.resolve(args.scenario)
        cfg = config.load(path, seed=args.seed, unsafe_exceed_f=args.unsafe_exceed_f)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or os.environ.get(OUT_ENV, "runs")) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.jsonl"
    result = run_scenario(cfg, trace_path, archive_dir=out if args.archive else None)
    (out / "report.json").write_text(report_json(result.report))
    (out / "report.csv").write_text(report_csv(result.report))
    r = result.report
    print(f"{cfg.name} seed={cfg.seed}: {r['finalized_txs']}/{r['submitted_txs']} txs finalized, "
          f"{r['heights']} heights, amortized UpdateState gas {r['amortized_update_gas_per_tx']}")
    print(f"  contract {r['settlement']['contract_state']}, escrow {r['settlement']['escrow_end']}, "
          f"payouts {r['settlement']['payouts']}")
    print(f"  wrote {out}/report.json, report.csv, trace.jsonl")
    if result.breach:
        print(f"invariant breach: {result.breach} (see {trace_path})", file=sys.stderr)
        return EXIT_BREACH
    return EXIT_OK


def cmd_verify_trace(args: argparse.Namespace) -> int:
    try:
        records = load(args.trace)
    except TraceIntegrityError as exc:
        print(f"trace integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    try:
        violations = verify_records(records)
        compute_report(records)
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        print(f"trace is malformed: {exc!r}", file=sys.stderr)
        return EXIT_INTEGRITY
    if not violations:
        print(f"{args.trace}: all checks passed ({len(records)} records)")
        return EXIT_OK
    safety = [v for v in violations if v.check == "safety"]
    if safety:
        print(f"SAFETY VIOLATION: {len(safety)} accepted state(s) deviate from oracle re-execution")
    for v in violations:
        print(f"  {v}")
    return EXIT_VIOLATIONS


def parse_prices(values: list[str] | None) -> tuple[Decimal, Decimal]:
    if not values:
        return Decimal("19.26"), Decimal("3376.77")
    try:
        gwei, usd = (Decimal(v) for v in values)
    except InvalidOperation:
        raise ValueError("prices must be decimal numbers") from None
    if gwei < 0 or usd < 0:
        raise ValueError("prices must be non-negative")
    return gwei, usd


def render_gas_table(table: GasTable) -> str:
    lines = [f"gas price {table.gas_price_gwei} Gwei, token {table.token_usd} USD", ""]
    lines.append(f"{'method':<18}{'gas':>10}{'USD':>10}")
    for m in TABLE_ORDER:
        lines.append(f"{m:<18}{table[m]:>10,}{gas_to_usd(table[m], table):>10}")
    lines.append("")
    lines.append(f"{'uncalibrated':<18}{'gas':>10}{'USD':>10}")
    for m in ("Transfer",) + UNCALIBRATED_METHODS:
        lines.append(f"{m:<18}{table[m]:>10,}{gas_to_usd(table[m], table):>10}")
    return "\n".join(lines)


def cmd_gas_table(args: argparse.Namespace) -> int:
    try:
        gwei, usd = parse_prices(args.prices)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(render_gas_table(GasTable(gas_price_gwei=gwei, token_usd=usd)))
    return EXIT_OK


def cmd_list(args: argparse.Namespace) -> int:
    for name in config.canned():
        cfg = config.load(config.SCENARIO_DIR / f"{name}.toml", unsafe_exceed_f=True)
        print(f"{name:<24}{cfg.description}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teerollup", description="TEE rollup simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or canned scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./runs)")
    r.add_argument("--unsafe-exceed-f", action="store_true", help="allow more than f compromised enclaves")
    r.add_argument("--archive", action="store_true", help="write per-DAP metadata archives")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("verify-trace", help="re-check every invariant on a trace")
    v.add_argument("trace")
    v.set_defaults(fn=cmd_verify_trace)

    g = sub.add_parser("gas-table", help="print per-method gas and USD cost")
    g.add_argument("--prices", nargs=2, metavar=("GWEI", "TOKEN_USD"))
    g.set_defaults(fn=cmd_gas_table)

    ls = sub.add_parser("list-scenarios", help="list canned scenarios")
    ls.set_defaults(fn=cmd_list)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
