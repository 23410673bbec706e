"""Overlap between detected events and an external honeypot attack feed."""

from __future__ import annotations

import bisect
import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

from .detector import AttackEvent
from .model import format_ip, lookup_protocol, parse_ip

DEFAULT_SLACK_MS = 5 * 60_000


@dataclass(frozen=True)
class HoneypotEvent:
    target_ip: int
    start_ms: int
    end_ms: int
    src_port: int
    source: str = ""

    def __post_init__(self):
        if self.start_ms > self.end_ms:
            raise ValueError("honeypot event ends before it starts")


@dataclass
class OverlapReport:
    events: int
    matched_events: int
    event_match_share: float
    targets: int
    matched_targets: int
    target_match_share: float
    honeypot_events: int
    matched_honeypot_events: int
    reverse_share: float
    honeypot_targets: int
    reverse_target_share: float
    per_protocol: dict = field(default_factory=dict)
    port_blind: bool = False
    slack_ms: int = DEFAULT_SLACK_MS


def as_honeypot(events: Iterable[AttackEvent], source: str = "self") -> list[HoneypotEvent]:
    """View detector events as a honeypot feed (for self-correlation)."""
    return [HoneypotEvent(e.dst_ip, e.start_ms, e.end_ms, e.protocol.src_port, source) for e in events]


def _share(a: int, b: int) -> float:
    return a / b if b else 0.0


def correlate(
    events: Sequence[AttackEvent],
    honeypot: Sequence[HoneypotEvent],
    time_slack_ms: int = DEFAULT_SLACK_MS,
    port_blind: bool = False,
) -> OverlapReport:
    """Join events with honeypot events on target, port and widened time overlap.

    Each honeypot interval is widened by ``time_slack_ms`` on both sides
    before testing overlap. ``port_blind`` drops the port requirement.
    """
    index: dict[tuple, list[tuple[int, int, int]]] = defaultdict(list)
    for j, h in enumerate(honeypot):
        key = h.target_ip if port_blind else (h.target_ip, h.src_port)
        index[key].append((h.start_ms - time_slack_ms, h.end_ms + time_slack_ms, j))
    # per key: intervals sorted by start plus a running max of ends for pruning
    prepared = {}
    for key, ivs in index.items():
        ivs.sort()
        starts = [iv[0] for iv in ivs]
        prepared[key] = (starts, ivs)

    hp_hit = [False] * len(honeypot)
    ev_hit = []
    for e in events:
        key = e.dst_ip if port_blind else (e.dst_ip, e.protocol.src_port)
        found = False
        if key in prepared:
            starts, ivs = prepared[key]
            stop = bisect.bisect_right(starts, e.end_ms)
            for lo, hi, j in ivs[:stop]:
                if hi >= e.start_ms:
                    found = True
                    hp_hit[j] = True
        ev_hit.append(found)

    targets = {e.dst_ip for e in events}
    matched_targets = {e.dst_ip for e, hit in zip(events, ev_hit) if hit}
    hp_targets = {h.target_ip for h in honeypot}
    hp_matched_targets = {h.target_ip for h, hit in zip(honeypot, hp_hit) if hit}

    per_proto: dict[str, dict] = {}
    for e, hit in zip(events, ev_hit):
        row = per_proto.setdefault(e.protocol.name, {"events": 0, "matched": 0, "honeypot_events": 0, "honeypot_matched": 0})
        row["events"] += 1
        row["matched"] += hit
    for h, hit in zip(honeypot, hp_hit):
        proto = lookup_protocol(h.src_port)
        name = proto.name if proto else f"port-{h.src_port}"
        row = per_proto.setdefault(name, {"events": 0, "matched": 0, "honeypot_events": 0, "honeypot_matched": 0})
        row["honeypot_events"] += 1
        row["honeypot_matched"] += hit
    for row in per_proto.values():
        row["event_match_share"] = _share(row["matched"], row["events"])
        row["honeypot_share"] = _share(row["honeypot_events"], len(honeypot))

    return OverlapReport(
        events=len(events),
        matched_events=sum(ev_hit),
        event_match_share=_share(sum(ev_hit), len(events)),
        targets=len(targets),
        matched_targets=len(matched_targets),
        target_match_share=_share(len(matched_targets), len(targets)),
        honeypot_events=len(honeypot),
        matched_honeypot_events=sum(hp_hit),
        reverse_share=_share(sum(hp_hit), len(honeypot)),
        honeypot_targets=len(hp_targets),
        reverse_target_share=_share(len(hp_matched_targets), len(hp_targets)),
        per_protocol=dict(sorted(per_proto.items())),
        port_blind=port_blind,
        slack_ms=time_slack_ms,
    )


HONEYPOT_FIELDS = ("target_ip", "start_ms", "end_ms", "src_port", "source")


def read_honeypot(path: Union[str, Path]) -> list[HoneypotEvent]:
    out = []
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and rows[0][0].strip() == "target_ip":
        rows = rows[1:]
    for i, r in enumerate(rows, 1):
        if len(r) < 4:
            raise ValueError(f"{path}: row {i} has {len(r)} fields, expected 5")
        out.append(HoneypotEvent(parse_ip(r[0]), int(r[1]), int(r[2]), int(r[3]), r[4] if len(r) > 4 else ""))
    return out


def write_honeypot(events: Iterable[HoneypotEvent], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HONEYPOT_FIELDS)
        for h in events:
            w.writerow((format_ip(h.target_ip), h.start_ms, h.end_ms, h.src_port, h.source))
