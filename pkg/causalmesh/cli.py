"""
Command-line entry points.

    python -m causalmesh simulate --servers 3 --seed 7 --workload micro3fn --out run/
    python -m causalmesh check run/trace.jsonl --snapshots run/snapshots.json
    python -m causalmesh anomaly-rate --servers 1,2,4,8
    python -m causalmesh window --servers 2-8 --delay 10
    python -m causalmesh abort-rate --capacities 1-4
    python -m causalmesh serve --index 0 --peers 127.0.0.1:7000,127.0.0.1:7001,127.0.0.1:7002
    python -m causalmesh client --peers ... --scenario roaming --out client.jsonl

``check`` exits 0 when the trace is clean, 1 when it has violations and 2
when an input file is malformed.
"""

import argparse
import asyncio
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import TypeAdapter, ValidationError

from causalmesh.config import setup_logging
from causalmesh.errors import ConfigurationError, TraceFormatError
from causalmesh.schemas.config import (
    FaultSpec,
    PeerList,
    PropagationMode,
    ServerConfig,
    WorkloadSpec,
    workload_preset,
)
from causalmesh.schemas.trace import RunResult, dump_trace, load_snapshots, load_trace
from causalmesh.services.checker.report import check_run, check_trace, write_report
from causalmesh.services.sim.experiments import (
    ABORT_HEADER,
    ANOMALY_HEADER,
    MODES,
    WINDOW_HEADER,
    abort_rates,
    anomaly_rates,
    mode_config,
    visibility_stats,
    visibility_window,
)
from causalmesh.services.sim.scenarios import ScenarioScript, load_scenario, run_script, scenario_names
from causalmesh.services.sim.simulator import sim_run
from causalmesh.services.store.versioned_store import VersionedStore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_BAD_INPUT = 2


# ============================================================================
# ARGUMENT HELPERS
# ============================================================================

def parse_servers(text: str) -> List[int]:
    """'1,2,4,8' or '2-8'."""
    values: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, _, hi = part.partition("-")
            values.extend(range(int(lo), int(hi) + 1))
        else:
            values.append(int(part))
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"bad count list {text!r}")
    return values


def load_workload(name_or_path: str, requests: Optional[int], seed: int, tcc: bool) -> WorkloadSpec:
    overrides = {"seed": seed, "tcc": tcc}
    if requests is not None:
        overrides["requests"] = requests
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        spec = WorkloadSpec.model_validate_json(path.read_text(encoding="utf-8"))
        return spec.model_copy(update=overrides).check()
    return workload_preset(name_or_path, **overrides)


def load_faults(path: Optional[str]) -> List[FaultSpec]:
    if not path:
        return []
    return TypeAdapter(List[FaultSpec]).validate_json(Path(path).read_text(encoding="utf-8"))


def write_csv(header: Sequence[str], rows: Sequence[Sequence[str]], out: Optional[str]) -> None:
    stream = open(out, "w", newline="", encoding="utf-8") if out else sys.stdout
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if out:
            stream.close()


def write_run(result: RunResult, out: Path, summary_extra: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    dump_trace(result.trace, out / "trace.jsonl")
    records = [*result.snapshots, *([result.final] if result.final is not None else [])]
    (out / "snapshots.json").write_text(
        json.dumps([r.model_dump(mode="json") for r in records], sort_keys=True, separators=(",", ":")),
        encoding="utf-8",
    )
    aborts = sum(w.aborts for w in result.workflows)
    summary = {
        "servers": result.n,
        "events": len(result.trace),
        "workflows": len(result.workflows),
        "failed": sum(1 for w in result.workflows if w.status == "failed"),
        "aborts": aborts,
        "stats": result.stats,
        "visibility": visibility_stats(result.trace),
        "fatal": result.fatal,
        **summary_extra,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_simulate(args: argparse.Namespace) -> int:
    overrides = {"n": args.servers, "seed": args.seed, "faults": load_faults(args.faults)}
    if args.snapshot_every:
        overrides["snapshot_every"] = args.snapshot_every
    if args.scenario:
        script = load_scenario(args.scenario, **_scenario_overrides(args))
        result = run_script(script)
    else:
        config = mode_config(args.mode, **overrides).check()
        workload = load_workload(args.workload, args.requests, args.seed, config.tcc)
        result = sim_run(config, workload)
    if result.fatal:
        logger.warning("run stopped early: %s", result.fatal)
    write_run(result, Path(args.out), {"mode": args.mode, "scenario": args.scenario, "seed": args.seed})
    print(f"wrote {len(result.trace)} events to {args.out}")
    if args.check:
        report = check_run(result)
        print(report.summary())
        return EXIT_OK if report.clean else EXIT_VIOLATIONS
    return EXIT_OK


def _scenario_overrides(args: argparse.Namespace) -> dict:
    """Scenario scripts fix their own cluster; only mode and seed carry over."""
    base = mode_config(args.mode, seed=args.seed)
    return {
        "mode": base.propagation_mode,
        "seed": args.seed,
        "tcc": base.tcc,
        "baseline_mode": base.baseline_mode,
    }


def cmd_check(args: argparse.Namespace) -> int:
    try:
        trace = load_trace(args.trace)
        records = load_snapshots(args.snapshots) if args.snapshots else []
    except TraceFormatError as e:
        print(f"malformed input: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    final = next((r for r in reversed(records) if r.reason == "final"), None)
    snapshots = [r for r in records if r is not final]
    report = check_trace(trace, snapshots, final, minimize_witness=not args.no_minimize)
    if args.report:
        write_report(report, args.report)
    print(report.summary())
    return EXIT_OK if report.clean else EXIT_VIOLATIONS


def cmd_anomaly_rate(args: argparse.Namespace) -> int:
    rows = anomaly_rates(args.servers, args.modes.split(","), args.requests, args.seed, args.key_pool)
    write_csv(ANOMALY_HEADER, [r.cells() for r in rows], args.out)
    return EXIT_OK


def cmd_window(args: argparse.Namespace) -> int:
    rows = visibility_window(args.servers, args.delay, args.trials, args.seed)
    write_csv(WINDOW_HEADER, [r.cells() for r in rows], args.out)
    return EXIT_OK


def cmd_abort_rate(args: argparse.Namespace) -> int:
    rows = abort_rates(args.capacities, args.readers)
    write_csv(ABORT_HEADER, [r.cells() for r in rows], args.out)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from causalmesh.services.network.runner import serve

    peers = PeerList.parse(args.peers)
    config = ServerConfig(
        tcc=args.tcc, ring_capacity=args.ring_capacity, tail_disseminate=args.tail_disseminate
    ).check()
    store = VersionedStore(log_path=args.store_log)
    try:
        asyncio.run(serve(args.index, peers, config, store, args.debug_port))
    except ConnectionError as e:
        logger.error("S%d: %s", args.index, e)
        return 1
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_client(args: argparse.Namespace) -> int:
    from causalmesh.services.network.runner import run_client

    peers = PeerList.parse(args.peers)
    if args.script:
        script = ScenarioScript.model_validate_json(Path(args.script).read_text(encoding="utf-8"))
    else:
        script = load_scenario(args.scenario, mode=PropagationMode.TWO_ROUND, tcc=args.tcc)
    trace = run_client(script, peers, args.settle)
    dump_trace(trace, args.out)
    print(f"wrote {len(trace)} events to {args.out}")
    return EXIT_OK


# ============================================================================
# PARSER
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalmesh", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Run a workload or scenario in the simulator")
    p.add_argument("--servers", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workload", default="micro3fn", help="Preset name or WorkloadSpec JSON file")
    p.add_argument("--requests", type=int, default=None, help="Override the workflow count")
    p.add_argument("--mode", choices=MODES, default="causalmesh")
    p.add_argument("--faults", default=None, help="JSON list of link stalls")
    p.add_argument("--scenario", choices=scenario_names(), default=None)
    p.add_argument("--snapshot-every", type=int, default=0)
    p.add_argument("--check", action="store_true", help="Also check the run; exit 1 on violations")
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="Check a trace and its snapshots")
    p.add_argument("trace")
    p.add_argument("--snapshots", default=None)
    p.add_argument("--report", default=None, help="Write the JSON report here")
    p.add_argument("--no-minimize", action="store_true", help="Keep full violation witnesses")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("anomaly-rate", help="CSV of write-then-read anomaly rates")
    p.add_argument("--servers", type=parse_servers, default=[1, 2, 4, 8])
    p.add_argument("--modes", default="baseline,causalmesh")
    p.add_argument("--requests", type=int, default=200)
    p.add_argument("--key-pool", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_anomaly_rate)

    p = sub.add_parser("window", help="CSV of write visibility hops and latency")
    p.add_argument("--servers", type=parse_servers, default=list(range(2, 9)))
    p.add_argument("--delay", type=int, default=10, help="Per-hop delay")
    p.add_argument("--trials", type=int, default=1, help="More than one samples delays in [1, delay]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_window)

    p = sub.add_parser("abort-rate", help="CSV of TCC read abort rates per ring capacity")
    p.add_argument("--capacities", type=parse_servers, default=[1, 2, 3, 4])
    p.add_argument("--readers", type=int, default=8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_abort_rate)

    p = sub.add_parser("serve", help="Run one server of a TCP cluster")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--peers", required=True, help="host:port,... indexed by position")
    p.add_argument("--tcc", action="store_true")
    p.add_argument("--ring-capacity", type=int, default=1)
    p.add_argument("--tail-disseminate", action="store_true")
    p.add_argument("--store-log", default=None)
    p.add_argument("--debug-port", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("client", help="Drive a scenario script against a TCP cluster")
    p.add_argument("--peers", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--script", help="ScenarioScript JSON file")
    group.add_argument("--scenario", choices=scenario_names())
    p.add_argument("--tcc", action="store_true")
    p.add_argument("--settle", type=float, default=0.2, help="Seconds to wait on await/drain steps")
    p.add_argument("--out", default="client_trace.jsonl")
    p.set_defaults(func=cmd_client)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(logging.INFO if args.verbose else None)
    try:
        return args.func(args)
    except (ConfigurationError, ValidationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
