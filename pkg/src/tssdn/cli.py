"""Command-line entry point: `tssdn simulate|bounds|separation|attack|trace`.

Exit codes: 0 success, 1 usage error, 2 input-validation error, 3 runtime
invariant violation.  Set TSSDN_VERBOSE=1 (or 2) for progress logging."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .attacksim import (
    AccessControl,
    AttackScenario,
    HostScan,
    MalformedTrace,
    MulticastPolicy,
    PortScan,
    Replay,
    SynFlood,
    load_fixture,
    parse_trace,
    replay_trace,
    reports_csv,
    run_attack,
    trace_to_csv,
)
from .bounds import MissingSlot, Overlap
from .controller import AclError
from .netmodel import MatrixError, ns_to_us_text, parse_comm_matrix
from .runner import RunConfig, RunResult, bound_table, run_scenario
from .scenario import ScenarioError, load_scenario, reference_scenario_path
from .secsep import (
    STRATEGIES,
    EmbeddingStrategy,
    aggregation_model,
    aggregation_report,
    classification_report,
    derive_network_flows,
    separation_metrics,
    separation_report,
)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2, 3
INPUT_ERRORS = (ScenarioError, MatrixError, AclError, MalformedTrace, MissingSlot, Overlap, OSError, ValueError)

log = logging.getLogger("tssdn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default; usage is 1 here
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _configure_logging() -> None:
    level = {"0": logging.WARNING, "1": logging.INFO, "2": logging.DEBUG}.get(os.environ.get("TSSDN_VERBOSE", "0"), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _scenario_path(arg: str) -> Path:
    return reference_scenario_path() if arg == "reference" else Path(arg)


# --- simulate ---------------------------------------------------------------------------


def _run_one(args: tuple[str, RunConfig]) -> tuple[int, str, str, str, str, list[str], Optional[int]]:
    path, cfg = args
    result: RunResult = run_scenario(load_scenario(_scenario_path(path)), cfg)
    return cfg.seed, result.trace.to_csv(), result.latency_csv(), result.bound_csv(), result.txn_log, result.problems, result.sr_duration_ns


def _prefix_seed(seed: int, text: str, first: bool) -> str:
    lines = text.splitlines()
    body = [f"{seed},{line}" for line in lines[1:]]
    head = [f"seed,{lines[0]}"] if first and lines else []
    return "\n".join(head + body) + ("\n" if head or body else "")


def cmd_simulate(ns: argparse.Namespace) -> int:
    scenario = load_scenario(_scenario_path(ns.scenario))
    seeds = [ns.seed + i for i in range(ns.seeds)] if ns.seeds else [ns.seed]
    configs = [
        RunConfig(variant=ns.variant, update=ns.update, seed=s, sr_at_s=ns.sr_at, gates=not ns.no_gates, t_end_s=ns.t_end)
        for s in seeds
    ]
    jobs = [(ns.scenario, c) for c in configs]
    log.info("simulating %s: %d run(s)", scenario.name, len(jobs))
    if len(jobs) > 1 and ns.jobs != 1:
        with ProcessPoolExecutor(max_workers=ns.jobs or None) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    out = Path(ns.out)
    problems: list[str] = []
    latency, bounds_csv, sr_rows = [], [], []
    for i, (seed, trace, lat, bnd, txn, probs, sr) in enumerate(results):
        if not ns.no_trace:
            _write(out, "trace.csv" if len(results) == 1 else f"trace_seed{seed}.csv", trace)
        if len(results) == 1:
            latency.append(lat)
            bounds_csv.append(bnd)
        else:
            latency.append(_prefix_seed(seed, lat, i == 0))
            bounds_csv.append(_prefix_seed(seed, bnd, i == 0))
        if txn and i == 0:
            _write(out, "transactions.csv", txn)
        sr_rows.append((seed, "" if sr is None else ns_to_us_text(sr)))
        problems += [f"seed {seed}: {p}" for p in probs]
    _write(out, "latency.csv", "".join(latency))
    _write(out, "bounds.csv", "".join(bounds_csv))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("seed", "sr_duration_us"))
    writer.writerows(sr_rows)
    _write(out, "sr.csv", buf.getvalue())
    violations = [row for row in csv.DictReader(io.StringIO(bounds_csv[0] if len(results) == 1 else "".join(bounds_csv))) if row["ok"] == "false"]
    print(f"{scenario.name}: {len(results)} run(s), variant={ns.variant}, update={ns.update}; outputs in {out}")
    for row in violations:
        print(f"  bound exceeded: {row['flow']} {row['config']} measured {row['measured_max_us']} us > {row['bound_us']} us")
    for p in problems:
        print(f"  schedule problem: {p}", file=sys.stderr)
    return EXIT_INVARIANT if problems else EXIT_OK


# --- bounds -----------------------------------------------------------------------------


def cmd_bounds(ns: argparse.Namespace) -> int:
    scenario = load_scenario(_scenario_path(ns.scenario))
    rows = bound_table(scenario, ns.variant)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(("flow", "config", "bound_us"))
    writer.writerows(rows)
    return EXIT_OK


# --- separation ----------------------------------------------------------------------------


def cmd_separation(ns: argparse.Namespace) -> int:
    matrix = parse_comm_matrix(ns.matrix)
    strategies = STRATEGIES if ns.strategy == "all" else (EmbeddingStrategy(ns.strategy),)
    out = Path(ns.out)
    _write(out, "separation.csv", separation_report(matrix, strategies))
    _write(out, "classification.csv", classification_report(matrix, strategies))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("strategy", "dest_zcs", "nf_count"))
    for s in strategies:
        for dests, n in separation_metrics(derive_network_flows(matrix, s)).dest_histogram.items():
            writer.writerow((s.value, dests, n))
    _write(out, "histogram.csv", buf.getvalue())
    results = []
    for s in strategies:
        for interval in ns.intervals if s.hidden else [0]:
            results.append(aggregation_model(matrix, interval, s))
    _write(out, "aggregation.csv", aggregation_report(results))
    sys.stdout.write(separation_report(matrix, strategies))
    return EXIT_OK


# --- attack --------------------------------------------------------------------------------


def cmd_attack(ns: argparse.Namespace) -> int:
    fixture = load_fixture(None if ns.scenario == "reference" else ns.scenario)
    if ns.attack == "host-scan":
        kind = HostScan()
    elif ns.attack == "port-scan":
        kind = PortScan(src_port=ns.src_port)
    elif ns.attack == "syn-flood":
        kind = SynFlood(count=ns.count)
    else:
        if not ns.trace:
            raise UsageError("replay needs --trace (write one with `tssdn trace`)")
        trace = parse_trace(Path(ns.trace).read_text())
        kind = Replay(tuple(trace), EmbeddingStrategy(ns.embedding))
    acl = fixture.acl_without_arp() if ns.arp == "deny" else fixture.acl
    scenario = AttackScenario(fixture, kind, AccessControl(ns.acl), MulticastPolicy(ns.policy), acl=acl)
    report = run_attack(scenario, seed=ns.seed)
    text = reports_csv([report])
    if ns.out:
        _write(Path(ns.out), f"attack_{report.attack}_{ns.acl}.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_trace(ns: argparse.Namespace) -> int:
    fixture = load_fixture(None if ns.scenario == "reference" else ns.scenario)
    text = trace_to_csv(replay_trace(fixture, EmbeddingStrategy(ns.embedding)))
    if ns.out:
        Path(ns.out).parent.mkdir(parents=True, exist_ok=True)
        Path(ns.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tssdn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a scenario and write trace, latency and bound CSVs")
    s.add_argument("scenario", help="scenario YAML, or 'reference' for the bundled one")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--seeds", type=int, default=0, help="sweep N seeds starting at --seed")
    s.add_argument("--jobs", type=int, default=0, help="worker processes for a sweep (0: all cores)")
    s.add_argument("--variant", choices=("tsn", "tssdn"), default="tssdn")
    s.add_argument("--update", choices=("sync", "ordered", "split"), default="sync")
    s.add_argument("--sr-at", type=float, default=None, help="override the reservation time (s)")
    s.add_argument("--t-end", type=float, default=None, help="override the simulated duration (s)")
    s.add_argument("--no-gates", action="store_true", help="tsn variant: keep every gate open")
    s.add_argument("--no-trace", action="store_true", help="skip the per-event trace CSV")
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bounds", help="print analytic latency bounds per flow and configuration")
    b.add_argument("scenario")
    b.add_argument("--variant", choices=("tsn", "tssdn"), default="tssdn")
    b.set_defaults(func=cmd_bounds)

    m = sub.add_parser("separation", help="network-flow separation, classification and aggregation reports")
    m.add_argument("matrix", help="communication matrix CSV")
    m.add_argument("--strategy", choices=("all", "message", "topic", "domain"), default="all")
    m.add_argument("--intervals", type=int, nargs="+", default=[0, 1000, 10000], help="aggregation intervals (us)")
    m.add_argument("--out", default="out")
    m.set_defaults(func=cmd_separation)

    a = sub.add_parser("attack", help="run one attack against the attack fixture")
    a.add_argument("scenario", help="attack fixture YAML, or 'reference' for the bundled one")
    a.add_argument("--attack", choices=("host-scan", "port-scan", "syn-flood", "replay"), required=True)
    a.add_argument("--acl", choices=("on", "off"), default="off")
    a.add_argument("--arp", choices=("allow", "deny"), default="allow")
    a.add_argument("--policy", choices=("drop", "broadcast"), default="drop", help="unknown multicast handling with --acl off")
    a.add_argument("--count", type=int, default=1000, help="SYNs in a flood")
    a.add_argument("--src-port", type=int, default=None, help="fixed probe source port for port scans")
    a.add_argument("--trace", help="replay trace CSV")
    a.add_argument("--embedding", choices=("message", "topic", "domain"), default="domain", help="embedding of the replay trace")
    a.add_argument("--seed", type=int, default=1)
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_attack)

    t = sub.add_parser("trace", help="write the fixture's recorded zone traffic as a replay trace")
    t.add_argument("scenario", help="attack fixture YAML, or 'reference'")
    t.add_argument("--embedding", choices=("message", "topic", "domain"), default="domain")
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_trace)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        return ns.func(ns)
    except UsageError as exc:
        print(f"tssdn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except INPUT_ERRORS as exc:
        print(f"tssdn: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
