"""Command-line entry point: ``amp-sentinel <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, _fastcsv
from .analytics import (
    InsufficientData,
    capacity_impact,
    fit_all,
    mitigation_correlate,
    multi_protocol_victims,
    protocol_stats,
    read_capacity,
    read_mitigation,
    theoretical_max,
    write_regression,
    write_table,
    write_xy,
)
from .correlate import correlate, read_honeypot
from .detector import (
    detect,
    group_daily,
    read_events,
    write_events_csv,
    write_events_jsonl,
    write_reflectors_csv,
)
from .ingest import read_flows
from .model import CONFIG_KEYS, DetectionConfig, format_ip, load_config
from .synth import generate_corpus, load_scenarios

CONFIG_ENV = "AMP_SENTINEL_CONFIG"


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    tool_version: str = __version__
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    metrics: dict = field(default_factory=dict)
    exit_code: int = 0

    def add_input(self, path: Path) -> None:
        self.inputs[str(path)] = "sha256:" + sha256_file(path)

    def add_output(self, path: Path) -> Path:
        self.outputs.append(path.name)
        return path

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        doc = dataclasses.asdict(self)
        doc["outputs"] = sorted(set(self.outputs))
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


# -- argument plumbing --------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("detection config (flags override the config file)")
    g.add_argument("--config", type=Path, help=f"key=value config file (default: ${CONFIG_ENV})")
    for key in CONFIG_KEYS:
        g.add_argument("--" + key.replace("_", "-"), dest=key, type=int, default=None)


def _config(args) -> DetectionConfig:
    path = args.config or (Path(os.environ[CONFIG_ENV]) if os.environ.get(CONFIG_ENV) else None)
    if path is not None and not path.is_file():
        raise CliError(f"config file not found: {path}")
    try:
        return load_config(path, {k: getattr(args, k) for k in CONFIG_KEYS})
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid config: {exc}") from None


def _need(path: Optional[Path], flag: str) -> Path:
    if path is None:
        raise CliError(f"{flag} is required")
    if not path.is_file():
        raise CliError(f"input not found: {path}")
    return path


def _out_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_events(args, manifest: RunManifest):
    path = _need(args.events, "--events")
    manifest.add_input(path)
    refl = getattr(args, "reflectors", None)
    if refl is not None:
        manifest.add_input(_need(refl, "--reflectors"))
    try:
        return read_events(path, refl)
    except (ValueError, KeyError) as exc:
        raise CliError(f"cannot read events from {path}: {exc}") from None


# -- subcommands -------------------------------------------------------------------


def run_detect(args, manifest: RunManifest) -> int:
    flows_path = _need(args.flows, "--flows")
    config = _config(args)
    out = _out_dir(args.out)

    t0 = time.perf_counter()
    _fastcsv.warm_up()
    warm = time.perf_counter() - t0

    t1 = time.perf_counter()
    parsed = read_flows(flows_path)
    t2 = time.perf_counter()
    for err in parsed.errors[:20]:
        print(f"{flows_path}:{err.line}: {err.reason}", file=sys.stderr)
    if len(parsed.errors) > 20:
        print(f"... {len(parsed.errors) - 20} more parse errors", file=sys.stderr)
    if parsed.sampling_rate is not None:
        config = config.replace(sampling_rate=parsed.sampling_rate)
    manifest.config = config.as_dict()
    manifest.metrics.update(
        flows_in=len(parsed.flows), lines=parsed.lines, parse_errors=len(parsed.errors),
        sampling_directive=parsed.sampling_rate,
    )
    if args.strict and parsed.errors:
        manifest.add_input(flows_path)
        manifest.metrics["jit_warmup_s"] = warm
        return 2

    table = parsed.flows.scaled(config.sampling_rate)
    result = detect(table, config, shards=args.shards, workers=args.workers)
    t3 = time.perf_counter()
    write_events_csv(result.events, manifest.add_output(out / "events.csv"))
    write_events_jsonl(result.events, manifest.add_output(out / "events.jsonl"))
    write_reflectors_csv(result.events, manifest.add_output(out / "reflectors.csv"))
    t4 = time.perf_counter()

    manifest.add_input(flows_path)  # digest kept out of the timed section
    att = result.attribution
    elapsed = t4 - t1
    manifest.metrics.update(
        events=len(result.events),
        port0_only_events=len(result.port0_events),
        dropped_non_udp_flows=result.dropped.non_udp_flows,
        dropped_unregistered_flows=result.dropped.unregistered_flows,
        port0_attributed_bytes=att.attributed_bytes,
        port0_ambiguous_bytes=att.ambiguous_bytes,
        port0_orphan_bytes=att.orphan_bytes,
        jit_warmup_s=warm,
        parse_s=t2 - t1,
        detect_s=t3 - t2,
        write_s=t4 - t3,
        processing_s=elapsed,
        throughput_records_per_s=len(parsed.flows) / elapsed if elapsed > 0 else None,
        shards=args.shards,
        workers=args.workers,
    )
    print(f"{len(result.events)} events from {len(parsed.flows)} flows "
          f"({manifest.metrics['throughput_records_per_s']:,.0f} records/s)")
    return 0


def _rate_volume_rows(events):
    return sorted((e.peak_rate_pps / 1e6, e.peak_rate_bps / 1e9) for e in events)


def run_stats(args, manifest: RunManifest) -> int:
    events = _load_events(args, manifest)
    out = _out_dir(args.out)
    rows = protocol_stats(events)
    write_table(rows, manifest.add_output(out / "protocol_table.csv"))
    fits = fit_all(events, args.segment_threshold)
    write_regression(fits, manifest.add_output(out / "regression.csv"))

    by_proto: dict[str, list] = {}
    for e in events:
        by_proto.setdefault(e.protocol.name, []).append(e)
    for name, evs in sorted(by_proto.items()):
        write_xy(manifest.add_output(out / f"rate_volume_{name}.dat"), _rate_volume_rows(evs), ("peak_mpps", "peak_gbps"))

    victims = multi_protocol_victims(events)
    daily = group_daily(events)
    summary = {
        "events": len(events),
        "targets": len({e.dst_ip for e in events}),
        "daily_grouped_events": len(daily),
        "multi_protocol_victims": {"share_ge2": victims.share_ge2, "share_gt2": victims.share_gt2},
        "protocols": {r.protocol: dataclasses.asdict(r) for r in rows},
        "regression": {f.protocol: {"slope_bits_per_packet": f.slope_bits_per_packet, "intercept_bps": f.intercept_bps,
                                    "r_squared": f.r_squared, "segment_count": f.segment_count} for f in fits},
        "port0_surplus_bytes": sum(e.port0_surplus_bytes for e in events),
    }
    if args.reflectors is not None:
        try:
            est = theoretical_max(events, args.horizon_days)
            summary["theoretical_max"] = {
                "total_bps": est.total_bps, "horizon_start_ms": est.horizon_start_ms,
                "horizon_end_ms": est.horizon_end_ms, "per_protocol": est.per_protocol,
            }
        except InsufficientData as exc:
            summary["theoretical_max"] = {"error": str(exc)}
    _write_json(manifest.add_output(out / "summary.json"), summary)
    manifest.metrics.update(events=len(events), protocols=len(rows))
    return 0


def run_capacity(args, manifest: RunManifest) -> int:
    events = _load_events(args, manifest)
    cap_path = _need(args.capacity, "--capacity")
    manifest.add_input(cap_path)
    out = _out_dir(args.out)
    try:
        impact = capacity_impact(events, read_capacity(cap_path))
    except ValueError as exc:
        raise CliError(f"invalid capacity file: {exc}") from None
    _write_json(manifest.add_output(out / "capacity.json"), impact.summary)
    rows = sorted((u.capacity_bps / 1e9, u.event.peak_rate_bps / 1e9, u.utilization) for u in impact.per_event)
    write_xy(manifest.add_output(out / "capacity_utilization.dat"), rows, ("capacity_gbps", "peak_gbps", "utilization"))
    manifest.metrics.update({k: impact.summary[k] for k in ("matched", "unmatched", "over_100_count", "over_50_count")})
    return 0


def run_mitigation(args, manifest: RunManifest) -> int:
    events = _load_events(args, manifest)
    lab_path = _need(args.labels, "--labels")
    manifest.add_input(lab_path)
    out = _out_dir(args.out)
    try:
        report = mitigation_correlate(events, read_mitigation(lab_path), args.slack_ms)
    except ValueError as exc:
        raise CliError(f"invalid mitigation file: {exc}") from None
    per_event = [
        {"dst_ip": format_ip(m.event.dst_ip), "protocol": m.event.protocol.name, "start_ms": m.event.start_ms,
         "mitigated": m.mitigated, "kind": m.kind, "delay_ms": m.delay_ms}
        for m in report.matches
    ]
    _write_json(manifest.add_output(out / "mitigation.json"), {"summary": report.summary, "events": per_event})
    delays = sorted(m.delay_ms for m in report.matches if m.mitigated)
    cdf = [(d / 60_000, (i + 1) / len(delays)) for i, d in enumerate(delays)]
    write_xy(manifest.add_output(out / "delay_cdf.dat"), cdf, ("delay_min", "cdf"))
    manifest.metrics.update(events=len(events), mitigated=report.summary["mitigated"])
    return 0


def run_correlate(args, manifest: RunManifest) -> int:
    events = _load_events(args, manifest)
    hp_path = _need(args.honeypot, "--honeypot")
    manifest.add_input(hp_path)
    out = _out_dir(args.out)
    try:
        honeypot = read_honeypot(hp_path)
    except ValueError as exc:
        raise CliError(f"invalid honeypot file: {exc}") from None
    report = correlate(events, honeypot, args.slack_ms, port_blind=args.port_blind)
    _write_json(manifest.add_output(out / "overlap.json"), dataclasses.asdict(report))
    manifest.metrics.update(event_match_share=report.event_match_share, reverse_share=report.reverse_share)
    return 0


def run_synth(args, manifest: RunManifest) -> int:
    path = _need(args.scenario, "--scenario")
    manifest.add_input(path)
    config = _config(args)
    manifest.config = config.as_dict()
    out = _out_dir(args.out)
    try:
        scenarios = load_scenarios(path)
        flows, truths = generate_corpus(scenarios, args.seed, config)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot generate {path}: {exc}") from None
    flows.write_csv(manifest.add_output(out / "flows.csv"), sampling_rate=None)
    _write_json(manifest.add_output(out / "ground_truth.json"), {
        "seed": args.seed, "config": config.as_dict(), "scenarios": [t.to_dict() for t in truths],
    })
    manifest.metrics.update(seed=args.seed, scenarios=len(scenarios), flows=len(flows),
                            events=sum(len(t.events) for t in truths))
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amp-sentinel", description="UDP amplification attack detection on flow data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect attack events in a flow CSV")
    p.add_argument("--flows", type=Path)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--strict", action="store_true", help="exit 2 if any line fails to parse")
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=run_detect)

    p = sub.add_parser("stats", help="per-protocol table, regression and summary")
    p.add_argument("--events", type=Path)
    p.add_argument("--reflectors", type=Path, help="reflectors.csv sidecar; enables the theoretical maximum")
    p.add_argument("--horizon-days", type=int, default=7)
    p.add_argument("--segment-threshold", type=float, default=0.9)
    p.add_argument("--out", type=Path, default=Path("stats"))
    p.set_defaults(func=run_stats)

    p = sub.add_parser("capacity", help="attack size relative to port capacity")
    p.add_argument("--events", type=Path)
    p.add_argument("--capacity", type=Path)
    p.add_argument("--out", type=Path, default=Path("capacity"))
    p.set_defaults(func=run_capacity)

    p = sub.add_parser("mitigation", help="match events to blackhole/scrub labels")
    p.add_argument("--events", type=Path)
    p.add_argument("--labels", type=Path)
    p.add_argument("--slack-ms", type=int, default=600_000)
    p.add_argument("--out", type=Path, default=Path("mitigation"))
    p.set_defaults(func=run_mitigation)

    p = sub.add_parser("correlate", help="overlap with a honeypot attack feed")
    p.add_argument("--events", type=Path)
    p.add_argument("--honeypot", type=Path)
    p.add_argument("--slack-ms", type=int, default=300_000)
    p.add_argument("--port-blind", action="store_true", help="ignore the protocol port when matching")
    p.add_argument("--out", type=Path, default=Path("correlate"))
    p.set_defaults(func=run_correlate)

    p = sub.add_parser("synth", help="render scenarios into flows and ground truth")
    p.add_argument("--scenario", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("synth"))
    _add_config_flags(p)
    p.set_defaults(func=run_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    manifest = RunManifest(command=args.command)
    start = time.perf_counter()
    try:
        code = args.func(args, manifest)
    except CliError as exc:
        print(f"amp-sentinel {args.command}: {exc}", file=sys.stderr)
        return exc.code
    manifest.exit_code = code
    manifest.wall_clock_s = time.perf_counter() - start
    manifest.write(args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
