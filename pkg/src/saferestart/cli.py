"""Command-line entry point.

Exit status: 0 on success, 1 on operational errors (I/O, bad input data,
unknown service, corrupt journal), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from .errors import SafeRestartError
from .harness import load_campaign, run_campaign, summarize_latencies
from .isa import parse_transaction
from .kernel.microkernel import Microkernel
from .kernel.policy import CapabilitySet, KernelPolicy
from .kernel.wal import FileJournal, Outcome, txn_histories
from .recovery_groups import InferenceThresholds, infer_recovery_group, parallelism_profile
from .sim.scenario import load_scenario
from .synth import preferential_attachment
from .trace_model import (
    CallGraph,
    ServiceRef,
    TimeWindow,
    build_call_graph,
    connectivity_stats,
    ingest_spans,
    percentile,
    upstream_indices,
)


class UsageError(Exception):
    pass


def _emit(args: argparse.Namespace, obj: dict, human: str) -> None:
    if args.json:
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(human)


def _window(text: str | None) -> TimeWindow | None:
    if text is None:
        return None
    start, sep, end = text.partition(":")
    try:
        return TimeWindow(int(start), int(end))
    except ValueError as exc:
        raise UsageError(f"--window must be start:end in microseconds with start < end ({exc})") from None


def _load_graph(args: argparse.Namespace) -> tuple[CallGraph, dict]:
    with open(args.traces, "rb") as fh:
        result = ingest_spans(fh, args.format)
    graph = build_call_graph(result.spans, _window(args.window))
    rep = result.report
    return graph, {"rows_read": rep.rows_read, "rows_skipped": rep.rows_skipped,
                   "self_calls_dropped": rep.self_calls_dropped, "spans": len(result.spans)}


def _thresholds(args: argparse.Namespace) -> InferenceThresholds:
    base = InferenceThresholds()
    if args.thresholds:
        base = InferenceThresholds.from_json(Path(args.thresholds).read_text())
    overrides = {k: getattr(args, k) for k in ("drain_threshold", "max_group_size", "max_batch_size")
                 if getattr(args, k) is not None}
    if overrides:
        merged = {"drain_threshold": base.drain_threshold, "max_group_size": base.max_group_size,
                  "max_batch_size": base.max_batch_size, **overrides}
        base = InferenceThresholds(**merged)
    return base


def _dist(values: Sequence[float]) -> dict[str, float]:
    if not values:
        return {"median": 0, "p90": 0, "p99": 0, "max": 0}
    return {"median": percentile(values, 50), "p90": percentile(values, 90),
            "p99": percentile(values, 99), "max": max(values)}


def _extreme(pair: tuple[ServiceRef, int] | None, key: str) -> dict | None:
    return None if pair is None else {"service": str(pair[0]), key: pair[1]}


def _human_extreme(pair: tuple[ServiceRef, int] | None) -> str:
    return "-" if pair is None else f"{pair[1]} ({pair[0]})"


# -- subcommands -----------------------------------------------------------------


def cmd_stats(args: argparse.Namespace) -> int:
    graph, ingest = _load_graph(args)
    n = len(graph)
    radii = [len(upstream_indices(graph, i)) for i in range(n)]
    conn = connectivity_stats(graph)
    obj: dict[str, Any] = {
        "services": n,
        "edges": len(graph.edges),
        "ingest": ingest,
        "blast_radius": _dist(radii),
        "max_fan_in": _extreme(conn.max_fan_in, "fan_in"),
        "max_fan_out": _extreme(conn.max_fan_out, "fan_out"),
        "top_fan_in": [{"service": str(s), "fan_in": k} for s, k in conn.top_fan_in(args.top)],
        "top_fan_out": [{"service": str(s), "fan_out": k} for s, k in conn.top_fan_out(args.top)],
    }
    if args.groups:
        th = _thresholds(args)
        sizes, parallel, capped = [], 0, 0
        for s in graph.sorted_services():
            g = infer_recovery_group(graph, s, th)
            sizes.append(len(g.restart_set))
            parallel += parallelism_profile(g).admits_parallelism
            capped += g.truncated
        obj["recovery_groups"] = {
            "size": _dist(sizes),
            "admits_parallelism_fraction": parallel / n if n else 0.0,
            "truncated_fraction": capped / n if n else 0.0,
        }
    br = obj["blast_radius"]
    lines = [
        f"services: {n}  edges: {len(graph.edges)}  spans: {ingest['spans']}",
        f"rows read: {ingest['rows_read']}  skipped: {ingest['rows_skipped']}  "
        f"self-calls dropped: {ingest['self_calls_dropped']}",
        f"blast radius  median {br['median']}  p90 {br['p90']}  p99 {br['p99']}  max {br['max']}",
        f"max fan-in {_human_extreme(conn.max_fan_in)}  max fan-out {_human_extreme(conn.max_fan_out)}",
        "top fan-in:  " + ", ".join(f"{s} ({k})" for s, k in conn.top_fan_in(args.top)),
        "top fan-out: " + ", ".join(f"{s} ({k})" for s, k in conn.top_fan_out(args.top)),
    ]
    if args.groups:
        rg = obj["recovery_groups"]
        lines.append(f"group size  median {rg['size']['median']}  p90 {rg['size']['p90']}  "
                     f"p99 {rg['size']['p99']}  parallel {rg['admits_parallelism_fraction']:.1%}  "
                     f"capped {rg['truncated_fraction']:.1%}")
    _emit(args, obj, "\n".join(lines))
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    graph, _ = _load_graph(args)
    group = infer_recovery_group(graph, ServiceRef.parse(args.service), _thresholds(args))
    # the group document is JSON either way
    print(group.to_json(indent=2, sort_keys=True))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    if min(args.nodes, args.samples) <= 0 or args.edges < 0:
        raise UsageError("--nodes and --samples must be positive, --edges non-negative")
    graph = preferential_attachment(args.nodes, args.edges, args.seed)
    th = _thresholds(args)
    rng = random.Random(args.seed)
    services = graph.sorted_services()
    times, sizes = [], []
    for _ in range(args.samples):
        s = rng.choice(services)
        t0 = time.perf_counter()
        g = infer_recovery_group(graph, s, th)
        times.append((time.perf_counter() - t0) * 1000)
        sizes.append(len(g.restart_set))
    lat = summarize_latencies(times)
    obj = {"nodes": len(graph), "edges": len(graph.edges), "samples": args.samples, "seed": args.seed,
           "latency_ms": lat, "group_size": _dist(sizes)}
    _emit(args, obj, (
        f"graph: {len(graph)} services, {len(graph.edges)} edges; {args.samples} inferences\n"
        f"latency ms  median {lat['median_ms']:.3f}  p90 {lat['p90_ms']:.3f}  "
        f"p99 {lat['p99_ms']:.3f}  max {lat['max_ms']:.3f}\n"
        f"group size  median {obj['group_size']['median']}  p90 {obj['group_size']['p90']}  "
        f"p99 {obj['group_size']['p99']}"))
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    scenarios, config = load_campaign(args.campaign)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    report = run_campaign(scenarios, config)
    if args.out:
        with open(args.out, "w") as fh:
            for rec in report.incidents:
                fh.write(json.dumps(rec.to_json_obj(), sort_keys=True) + "\n")
    obj = report.to_json_obj()
    lo, hi = report.ci
    med = report.ttr_medians()
    _emit(args, obj, (
        f"policy {report.policy.value}: {report.harmed}/{report.n} harmed "
        f"= {report.harm_rate:.0%}  95% CI [{lo:.0%}, {hi:.0%}]\n"
        f"committed transactions {obj['committed_transactions']}, "
        f"harmful {obj['harmful_committed_transactions']}\n"
        "median TTR ms  " + "  ".join(f"{k[:-3]} {v:.0f}" for k, v in med.items() if v is not None)))
    return 0


def _rematerialize(journal: FileJournal, sim) -> None:
    """Re-apply journaled effects to a fresh cluster model before recovery."""
    for hist in txn_histories(journal.entries()).values():
        if hist.start is None or hist.outcome in (Outcome.ROLLED_BACK, Outcome.ABORTED):
            continue
        txn = parse_transaction(hist.start.transaction)
        for e in hist.completed:
            sim.apply(txn.actions[e.action_index], e.token)


def cmd_replay_wal(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    sim = scenario.new_cluster()
    with FileJournal(args.wal) as journal:
        _rematerialize(journal, sim)
        kernel = Microkernel(sim, journal, CapabilitySet.allow_all(),
                             KernelPolicy(), clock=lambda: sim.now, sleep=sim.sleep)
        resolved = kernel.recover()
    obj = {"in_flight": len(resolved),
           "resolved": [{"txn_id": t, "outcome": o.value} for t, o in sorted(resolved.items())]}
    if not resolved:
        human = "no in-flight transactions"
    else:
        human = "\n".join(f"{t}: {o.value}" for t, o in sorted(resolved.items()))
    _emit(args, obj, human)
    return 0


# -- parser ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors exit with 2
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _add_trace_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--traces", required=True, help="span file")
    p.add_argument("--format", default="jsonl", choices=["jsonl", "alibaba-csv"])
    p.add_argument("--window", help="start:end in microseconds (half-open)")


def _add_threshold_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--thresholds", help="JSON file with drain_threshold, max_group_size, max_batch_size")
    p.add_argument("--drain-threshold", type=int)
    p.add_argument("--max-group-size", type=int)
    p.add_argument("--max-batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="saferestart", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="call-graph and blast-radius statistics")
    _add_trace_args(p)
    _add_threshold_args(p)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--groups", action="store_true", help="also infer a group for every service")
    p.add_argument("--json", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("infer", help="print the recovery group of one service")
    _add_trace_args(p)
    _add_threshold_args(p)
    p.add_argument("--service", required=True, help="ns/name")
    p.add_argument("--json", action="store_true", help="accepted for symmetry; output is always JSON")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="inference latency on a synthetic scale-free graph")
    p.add_argument("--nodes", type=int, default=5459)
    p.add_argument("--edges", type=int, default=11690)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    _add_threshold_args(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="run a harm campaign on the simulated cluster")
    p.add_argument("--campaign", required=True, help="campaign JSON file")
    p.add_argument("--out", help="write incident records as JSON Lines")
    p.add_argument("--seed", type=int, help="override the campaign seed")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay-wal", help="resolve in-flight transactions from a journal")
    p.add_argument("--wal", required=True)
    p.add_argument("--scenario", required=True, help="scenario JSON describing the cluster")
    p.add_argument("--json", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_replay_wal)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"saferestart: error: {exc}", file=sys.stderr)
        return 2
    except (SafeRestartError, OSError, ValueError, KeyError) as exc:
        print(f"saferestart: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
