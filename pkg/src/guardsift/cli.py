"""Command-line entry point: reproducible batch pipelines.

Subcommands: generate, ingest, sanitize, segment, conflux, transform,
featurize, eval. Every run is deterministic given its --seed; stage
failures exit 1 with the failing stage named on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import conflux as cfx
from . import features, metrics, transforms
from .errors import GuardsiftError, ParseError
from .ingest import parse_client_log, parse_guard_log, parse_visit_log, filter_relay_channels
from .parallel import parallel_map
from .sanitize import SanitizeConfig, group_visits, sanitize
from .segment import extract_monitored_window, segment_nonmonitored
from .simulate import ScenarioConfig, generate_dataset, run_rtt_advantage_sweep
from .trace import ConfluxSet, Trace, read_dataset, write_dataset

SEC = 1_000_000_000


def _write_report(path: str | None, payload: dict) -> None:
    if path:
        Path(path).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def _load_inputs(args) -> tuple:
    """Resolve guard/client/visits paths from --in or explicit flags."""
    guard = getattr(args, "guard", None)
    visits = getattr(args, "visits", None)
    client = getattr(args, "client", None)
    in_dir = getattr(args, "in_dir", None)
    if in_dir:
        base = Path(in_dir)
        guard = guard or (base / "guard.csv" if (base / "guard.csv").exists() else None)
        visits = visits or (base / "visits.csv" if (base / "visits.csv").exists() else None)
        client = client or (base / "client.csv" if (base / "client.csv").exists() else None)
    if guard is None:
        raise GuardsiftError("no guard log given (use --in or --guard)")
    return guard, client, visits


def cmd_generate(args) -> int:
    config = ScenarioConfig.from_json(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        config.seed = args.seed
    out_dir = Path(args.out)
    if args.rtt_sweep:
        deltas = [float(x) for x in args.rtt_sweep.split(",")]
        rows = run_rtt_advantage_sweep(config, deltas, args.sweep_visits)
        out_dir.mkdir(parents=True, exist_ok=True)
        sweep_csv = out_dir / "rtt_sweep.csv"
        header = list(rows[0].keys())
        lines = [",".join(header)]
        lines += [",".join(f"{row[k]:.6f}" if isinstance(row[k], float) else str(row[k]) for k in header) for row in rows]
        sweep_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
        _write_report(args.report, {"command": "generate", "sweep": rows})
        return 0
    paths = generate_dataset(config, out_dir, jobs=args.jobs)
    _write_report(
        args.report,
        {
            "command": "generate",
            "out": str(paths.out_dir),
            "files": [paths.guard_csv.name, paths.client_csv.name, paths.visits_csv.name, paths.truth_json.name],
        },
    )
    return 0


def cmd_ingest(args) -> int:
    guard, client, visits = _load_inputs(args)
    parsed = parse_guard_log(guard, args.tag)
    kept, dropped = filter_relay_channels(parsed.channels)
    summary = {
        "command": "ingest",
        "channels": len(parsed.channels),
        "relay_channels_dropped": dropped,
        "channels_kept": len(kept),
        "circuits": sum(ch.circuit_count for ch in kept),
        "cells": parsed.cell_count,
        "duplicates_dropped": parsed.duplicate_count,
    }
    if client and visits:
        client_log = parse_client_log(client, visits)
        summary["client_circuits"] = len(client_log.circuit_map())
        summary["visit_rows"] = len(client_log.visits)
    print(json.dumps(summary, indent=2, sort_keys=True))
    _write_report(args.report, summary)
    return 0


def _sanitize_circuit_path(args, guard, visits_path) -> tuple[list, dict]:
    parsed = parse_guard_log(guard, args.tag)
    kept, dropped_relay = filter_relay_channels(parsed.channels)
    visits = parse_visit_log(visits_path) if visits_path else None
    config = SanitizeConfig.from_json(args.config) if args.config else SanitizeConfig()
    result = sanitize(kept, config, args.phase, visits)
    report = asdict(result.report)
    report["relay_channels_dropped"] = dropped_relay
    report["duplicates_dropped"] = parsed.duplicate_count
    return result.traces, report


def _segment_time_path(args, guard, visits_path) -> tuple[list, dict]:
    parsed = parse_guard_log(guard, args.tag)
    kept, dropped_relay = filter_relay_channels(parsed.channels)
    config = SanitizeConfig.from_json(args.config) if args.config else SanitizeConfig()
    window_ns = int(args.window_s * SEC)
    traces = []
    monitored_channels = set()
    n_windows_failed = 0
    if visits_path:
        visits = parse_visit_log(visits_path)
        circuit_to_channel = {}
        for channel in kept:
            for circuit_id in channel.circuits:
                circuit_to_channel[circuit_id] = channel.channel_id
        by_id = {ch.channel_id: ch for ch in kept}
        for group in group_visits(visits, circuit_to_channel, config.visit_span_ns):
            channel_id = None
            for row in group.rows:
                if row.circuit_id in circuit_to_channel:
                    channel_id = circuit_to_channel[row.circuit_id]
                    break
            if channel_id is None:
                continue
            monitored_channels.add(channel_id)
            start = group.start_ts
            try:
                traces.append(
                    extract_monitored_window(
                        by_id[channel_id], start, start + window_ns, config, group.page_domain
                    )
                )
            except GuardsiftError:
                n_windows_failed += 1
    for channel in kept:
        if channel.channel_id in monitored_channels:
            continue
        traces.extend(segment_nonmonitored(channel, config))
    report = {
        "segmentation": "time",
        "relay_channels_dropped": dropped_relay,
        "monitored_windows": sum(1 for t in traces if t.label is not None),
        "windows_failed": n_windows_failed,
        "traces": len(traces),
    }
    return traces, report


def cmd_sanitize(args) -> int:
    guard, _, visits_path = _load_inputs(args)
    if args.segmentation == "time":
        traces, report = _segment_time_path(args, guard, visits_path)
    else:
        traces, report = _sanitize_circuit_path(args, guard, visits_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_dataset(traces, args.seed, out_dir / "traces.ndjson")
    report["command"] = "sanitize"
    report["traces_written"] = len(traces)
    _write_report(args.report or str(out_dir / "report.json"), report)
    return 0


def cmd_segment(args) -> int:
    guard, _, visits_path = _load_inputs(args)
    traces, report = _segment_time_path(args, guard, visits_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_dataset(traces, args.seed, out_dir / "traces.ndjson")
    report["command"] = "segment"
    _write_report(args.report or str(out_dir / "report.json"), report)
    return 0


def cmd_conflux(args) -> int:
    guard, client, visits_path = _load_inputs(args)
    if client is None or visits_path is None:
        raise GuardsiftError("conflux analysis needs --client and --visits")
    parsed = parse_guard_log(guard, args.tag)
    client_log = parse_client_log(client, visits_path)
    client_circuits = client_log.circuit_map()
    guard_circuits = {}
    for channel in parsed.channels:
        guard_circuits.update(channel.circuits)
    rows = []
    agree = total_truth = 0
    for idx, visit in enumerate(client_log.visits):
        meta = visit.conflux_meta
        if meta is None:
            continue
        leg_a_id, leg_b_id = meta.leg_ids
        if leg_a_id not in client_circuits or leg_b_id not in client_circuits:
            continue
        guard_leg_id = leg_a_id if leg_a_id in guard_circuits else leg_b_id
        if guard_leg_id not in guard_circuits:
            continue
        conflux_set = ConfluxSet(client_circuits[leg_a_id], client_circuits[leg_b_id])
        guard_cells = guard_circuits[guard_leg_id].timing_cells()[5:]
        if not guard_cells:
            continue
        base = guard_cells[0][0]
        guard_trace = Trace(tuple((ts - base, d) for ts, d in guard_cells), phase="post")
        try:
            analysis = cfx.analyze_set(f"set{idx:05d}", conflux_set, guard_trace, guard_leg_id)
        except GuardsiftError:
            continue
        rows.append(analysis)
        if analysis.fs_truth is not None:
            total_truth += 1
            agree += analysis.fs_detected == analysis.fs_truth
    cfx.write_analysis_csv(rows, args.out)
    summary = {
        "command": "conflux",
        "sets": len(rows),
        "fs_detected": sum(r.fs_detected for r in rows),
        "fs_truth_available": total_truth,
        "detector_agreement": (agree / total_truth) if total_truth else None,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    _write_report(args.report, summary)
    return 0


def cmd_transform(args) -> int:
    traces = read_dataset(args.in_path)
    out = []
    for idx, trace in enumerate(traces):
        if args.jitter_ms is not None:
            rng = np.random.default_rng(np.random.SeedSequence((args.seed, idx)))
            trace = transforms.inject_jitter(
                trace, args.jitter_ms, rng, int(args.max_duration_s * SEC)
            )
        if args.load_percent is not None:
            trace = transforms.truncate_percent(trace, args.load_percent)
        if args.max_len is not None:
            trace = transforms.truncate_length(trace, args.max_len)
        out.append(trace)
    write_dataset(out, args.seed, args.out)
    _write_report(args.report, {"command": "transform", "traces": len(out)})
    return 0


def _feature_worker(item) -> list:
    kind, cells, length, t_max_s, n_slots = item
    trace = Trace(cells=tuple(cells))
    if kind == "direction":
        return features.direction_sequence(trace, length).tolist()
    if kind == "timing":
        return features.directional_timing(trace, length).tolist()
    return features.build_tam(trace, t_max_s, n_slots).matrix.tolist()


def cmd_featurize(args) -> int:
    traces = read_dataset(args.in_path)
    if not traces:
        raise GuardsiftError("no traces in input")
    t_max_s = args.t_max_s if args.t_max_s is not None else features.default_t_max(traces)
    items = [
        (args.kind, trace.cells, args.length, t_max_s, args.n_slots) for trace in traces
    ]
    rows = parallel_map(_feature_worker, items, args.jobs)
    if args.kind == "direction":
        array = np.array(rows, dtype=np.int8)
        meta = {"kind": args.kind, "length": args.length}
    elif args.kind == "timing":
        array = np.array(rows, dtype=np.float64)
        meta = {"kind": args.kind, "length": args.length}
    else:
        array = np.array(rows, dtype=np.int64)
        meta = {
            "kind": "tam",
            "t_max_s": t_max_s,
            "n_slots": args.n_slots,
            "slot_duration_s": t_max_s / args.n_slots,
        }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    features.write_features(out_dir / "features.bin", array, meta)
    if args.csv:
        features.write_features_csv(out_dir / "features.csv", array.reshape(len(traces), -1))
    with open(out_dir / "labels.csv", "w", encoding="utf-8") as handle:
        handle.write("trace_id,label\n")
        for trace in traces:
            handle.write(f"{trace.trace_id},{trace.label if trace.label else ''}\n")
    _write_report(args.report, {"command": "featurize", "shape": list(array.shape), **meta})
    return 0


def cmd_eval(args) -> int:
    records = metrics.read_scores(args.scores)
    wilson_z = None if args.wilson_z == 0 else args.wilson_z
    if args.curve:
        metrics.write_curve(metrics.sweep(records, args.r, wilson_z), args.curve)
    if args.threshold is not None:
        counts = metrics.tally(records, args.threshold)
        rate = metrics.rates(counts)
        wilson = metrics.WilsonParams(counts.n_fp, counts.n_n, wilson_z) if wilson_z else None
        pi = metrics.r_precision(rate, args.r, wilson)
        payload = {
            "threshold": args.threshold,
            f"pi_{args.r:g}": pi,
            "recall": rate.tpr,
            "fpr": rate.fpr,
            "f1": metrics.f1(pi, rate.tpr),
        }
    elif args.target_fpr is not None:
        point = metrics.operating_point_at_fpr(records, args.target_fpr)
        payload = {
            "threshold": point.threshold,
            "recall": point.recall,
            "fpr": point.fpr,
            "target_fpr": args.target_fpr,
        }
    else:
        point = metrics.select_threshold_max_f1(records, args.r, wilson_z)
        payload = {
            "threshold": point.threshold,
            f"pi_{args.r:g}": point.pi_r,
            "recall": point.recall,
            "fpr": point.fpr,
            "f1": point.f1,
        }
    payload["r"] = args.r
    payload["records"] = len(records)
    print(json.dumps(payload, indent=2, sort_keys=True))
    _write_report(args.report, payload)
    return 0


def _add_io_flags(parser, needs_out=True):
    parser.add_argument("--in", dest="in_dir", help="input directory (guard/client/visits csv)")
    parser.add_argument("--guard", help="guard cell log")
    parser.add_argument("--client", help="client cell log")
    parser.add_argument("--visits", help="client visit log")
    parser.add_argument("--tag", default="guard", help="source tag for parsed channels")
    if needs_out:
        parser.add_argument("--out", required=True)
    parser.add_argument("--report", help="write a JSON report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guardsift",
        description="Guard-side cell-trace pipelines: synthesize, sanitize, analyze, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a dataset with ground truth")
    p.add_argument("--config", help="scenario JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report")
    p.add_argument("--rtt-sweep", help="comma-separated competitor RTT deltas (ms)")
    p.add_argument("--sweep-visits", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="parse logs and report channel statistics")
    _add_io_flags(p, needs_out=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sanitize", help="run the circuit sanitization pipeline")
    _add_io_flags(p)
    p.add_argument("--phase", choices=["pre", "post"], required=True)
    p.add_argument("--config", help="sanitizer thresholds JSON")
    p.add_argument("--seed", type=int, default=0, help="export shuffle seed")
    p.add_argument("--segmentation", choices=["circuit", "time"], default="circuit")
    p.add_argument("--window-s", type=float, default=60.0)
    p.set_defaults(func=cmd_sanitize)

    p = sub.add_parser("segment", help="time-based segmentation without circuit ids")
    _add_io_flags(p)
    p.add_argument("--config", help="sanitizer thresholds JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window-s", type=float, default=60.0, help="monitored window length")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("conflux", help="linked-leg analysis against client ground truth")
    _add_io_flags(p)
    p.set_defaults(func=cmd_conflux)

    p = sub.add_parser("transform", help="perturb an exported trace set")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jitter-ms", type=float, default=None)
    p.add_argument("--max-duration-s", type=float, default=45.0)
    p.add_argument("--load-percent", type=float, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("featurize", help="emit classifier-ready representations")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["direction", "timing", "tam"], default="direction")
    p.add_argument("--length", type=int, default=5000)
    p.add_argument("--t-max-s", type=float, default=None)
    p.add_argument("--n-slots", type=int, default=1800)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("eval", help="open-world metrics over classifier scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--r", type=float, default=10.0)
    p.add_argument("--max-f1", action="store_true", help="pick the F1-maximizing threshold")
    p.add_argument("--target-fpr", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--wilson-z", type=float, default=1.96, help="0 disables the Wilson bound")
    p.add_argument("--curve", help="write the threshold sweep here")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"guardsift {args.command}: parse error: {exc}", file=sys.stderr)
        return 1
    except GuardsiftError as exc:
        print(f"guardsift {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
