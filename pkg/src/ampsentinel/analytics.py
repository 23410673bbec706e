"""Aggregate analyses over detected attack events."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .detector import AttackEvent
from .prefix import PrefixTable, netmask, parse_prefix

MINUTE_MS = 60_000
DAY_MS = 86_400_000


class InsufficientData(ValueError):
    pass


# -- per-protocol table ---------------------------------------------------------


@dataclass(frozen=True)
class ProtocolStats:
    protocol: str
    max_gbps: float
    avg_gbps: float
    max_mpps: float
    avg_mpps: float
    target_count: int
    attack_count: int
    max_duration_days: float
    avg_duration_min: float
    max_reflectors: int
    avg_reflectors: float
    avg_pkt_size_bytes: float
    pkt_size_std_bytes: float
    # mean of per-event average rates (avg_gbps above averages event peaks)
    avg_mean_gbps: float = 0.0


TABLE_COLUMNS = (
    "protocol", "max_gbps", "avg_gbps", "max_mpps", "avg_mpps", "target_count", "attack_count",
    "max_duration_days", "avg_duration_min", "max_reflectors", "avg_reflectors", "avg_pkt_size_bytes",
    "pkt_size_std_bytes",
)


def pooled_packet_size(events: Sequence[AttackEvent]) -> tuple[float, float]:
    """Packet-weighted mean and std of packet size across events.

    Combines each event's (packets, mean, std) with the law of total variance,
    which equals the flow-level estimator over the union of the events.
    """
    packets = sum(e.total_packets for e in events)
    if not packets:
        return 0.0, 0.0
    mean = sum(e.total_bytes for e in events) / packets
    var = sum(
        e.total_packets * (e.packet_size_std_bytes ** 2 + (e.mean_packet_size_bytes - mean) ** 2) for e in events
    ) / packets
    return mean, math.sqrt(max(var, 0.0))


def protocol_stats(events: Iterable[AttackEvent]) -> list[ProtocolStats]:
    """One row per protocol, ordered by largest attack first."""
    by_proto: dict[str, list[AttackEvent]] = defaultdict(list)
    for e in events:
        by_proto[e.protocol.name].append(e)
    rows = []
    for name, evs in by_proto.items():
        n = len(evs)
        pkt_mean, pkt_std = pooled_packet_size(evs)
        rows.append(ProtocolStats(
            protocol=name,
            max_gbps=max(e.peak_rate_bps for e in evs) / 1e9,
            avg_gbps=sum(e.peak_rate_bps for e in evs) / n / 1e9,
            max_mpps=max(e.peak_rate_pps for e in evs) / 1e6,
            avg_mpps=sum(e.peak_rate_pps for e in evs) / n / 1e6,
            target_count=len({e.dst_ip for e in evs}),
            attack_count=n,
            max_duration_days=max(e.duration_ms for e in evs) / DAY_MS,
            avg_duration_min=sum(e.duration_ms for e in evs) / n / MINUTE_MS,
            max_reflectors=max(e.reflector_count for e in evs),
            avg_reflectors=sum(e.reflector_count for e in evs) / n,
            avg_pkt_size_bytes=pkt_mean,
            pkt_size_std_bytes=pkt_std,
            avg_mean_gbps=sum(e.avg_rate_bps for e in evs) / n / 1e9,
        ))
    rows.sort(key=lambda r: (-r.max_gbps, r.protocol))
    return rows


def write_table(rows: Sequence[ProtocolStats], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([
                r.protocol, f"{r.max_gbps:.3f}", f"{r.avg_gbps:.3f}", f"{r.max_mpps:.3f}", f"{r.avg_mpps:.3f}",
                r.target_count, r.attack_count, f"{r.max_duration_days:.4f}", f"{r.avg_duration_min:.2f}",
                r.max_reflectors, f"{r.avg_reflectors:.1f}", f"{r.avg_pkt_size_bytes:.1f}", f"{r.pkt_size_std_bytes:.1f}",
            ])


# -- multi-protocol victims --------------------------------------------------------


@dataclass
class MultiProtocolVictims:
    share_ge2: float
    share_gt2: float
    per_victim: dict[int, tuple[str, ...]]


def multi_protocol_victims(events: Iterable[AttackEvent]) -> MultiProtocolVictims:
    protos: dict[int, set[str]] = defaultdict(set)
    for e in events:
        if e.protocol.src_port != 0:
            protos[e.dst_ip].add(e.protocol.name)
    n = len(protos)
    if not n:
        return MultiProtocolVictims(0.0, 0.0, {})
    return MultiProtocolVictims(
        share_ge2=sum(1 for p in protos.values() if len(p) >= 2) / n,
        share_gt2=sum(1 for p in protos.values() if len(p) > 2) / n,
        per_victim={ip: tuple(sorted(p)) for ip, p in sorted(protos.items())},
    )


# -- packet rate vs volume -----------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    slope_bits_per_packet: float
    intercept_bps: float
    r_squared: float
    n_events: int
    min_ratio: float
    max_ratio: float


@dataclass(frozen=True)
class RegressionFit:
    protocol: str
    slope_bits_per_packet: float
    intercept_bps: float
    r_squared: float
    segment_count: int
    n_events: int = 0
    segments: tuple = ()


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least squares y = a*x + b; returns (a, b, residual sum of squares)."""
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise InsufficientData("packet rates are all identical; slope undefined")
    a = float(((x - xm) * (y - ym)).sum()) / sxx
    b = float(ym - a * xm)
    ssr = float(((y - (a * x + b)) ** 2).sum())
    return a, b, ssr


def _r2(ssr: float, y: np.ndarray) -> float:
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0.0:
        return 1.0
    return min(1.0, max(0.0, 1.0 - ssr / sst))


def fit_rate_volume(events: Sequence[AttackEvent], segment_threshold: float = 0.9) -> RegressionFit:
    """Regress event peak bit rate on peak packet rate.

    When one line explains less than ``segment_threshold`` of the variance,
    events are split into two groups at the widest gap between their sorted
    bits-per-packet ratios and each group gets its own line.
    """
    if len(events) < 3:
        raise InsufficientData(f"need at least 3 events, got {len(events)}")
    names = {e.protocol.name for e in events}
    protocol = names.pop() if len(names) == 1 else "mixed"
    x = np.array([e.peak_rate_pps for e in events], dtype=np.float64)
    y = np.array([e.peak_rate_bps for e in events], dtype=np.float64)
    a, b, ssr = _ols(x, y)
    r2 = _r2(ssr, y)
    ratio = np.divide(y, x, out=np.zeros_like(y), where=x > 0)
    single = Segment(a, b, r2, len(events), float(ratio.min()), float(ratio.max()))
    if r2 >= segment_threshold:
        return RegressionFit(protocol, a, b, r2, 1, len(events), (single,))
    order = np.argsort(ratio, kind="stable")
    cut = int(np.argmax(np.diff(ratio[order]))) + 1
    groups = (order[:cut], order[cut:])
    if min(len(g) for g in groups) < 2:
        return RegressionFit(protocol, a, b, r2, 1, len(events), (single,))
    segs, total_ssr = [], 0.0
    for g in groups:
        try:
            ga, gb, gssr = _ols(x[g], y[g])
        except InsufficientData:
            return RegressionFit(protocol, a, b, r2, 1, len(events), (single,))
        total_ssr += gssr
        segs.append(Segment(ga, gb, _r2(gssr, y[g]), len(g), float(ratio[g].min()), float(ratio[g].max())))
    main = max(segs, key=lambda s: s.n_events)
    return RegressionFit(protocol, main.slope_bits_per_packet, main.intercept_bps, _r2(total_ssr, y), 2,
                         len(events), tuple(segs))


def fit_all(events: Iterable[AttackEvent], segment_threshold: float = 0.9) -> list[RegressionFit]:
    """Per-protocol fits for every protocol with enough events."""
    by_proto: dict[str, list[AttackEvent]] = defaultdict(list)
    for e in events:
        by_proto[e.protocol.name].append(e)
    fits = []
    for name in sorted(by_proto):
        try:
            fits.append(fit_rate_volume(by_proto[name], segment_threshold))
        except InsufficientData:
            continue
    return fits


def write_regression(fits: Sequence[RegressionFit], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("protocol", "slope", "intercept", "r2", "segments"))
        for f in fits:
            w.writerow((f.protocol, f"{f.slope_bits_per_packet:.6f}", f"{f.intercept_bps:.3f}", f"{f.r_squared:.6f}",
                        f.segment_count))


# -- combined attack ceiling -------------------------------------------------------


@dataclass
class CeilingEstimate:
    total_bps: float
    per_protocol: dict[str, dict] = field(default_factory=dict)
    horizon_start_ms: int = 0
    horizon_end_ms: int = 0


def theoretical_max(
    events: Sequence[AttackEvent], horizon_days: int = 7, horizon_start_ms: Optional[int] = None
) -> CeilingEstimate:
    """Estimate the attack size if every reflector seen in the horizon fired at once.

    Per protocol the output rate of one reflector is the average event rate
    divided by the average reflector count, both weighted by event duration
    (so the figure is total bits over reflector-seconds and does not change
    when an event is split into contiguous pieces). It is multiplied by the
    number of distinct reflector IPs active within the horizon.
    """
    if not events:
        raise InsufficientData("no events")
    horizon_ms = horizon_days * DAY_MS
    first = min(e.start_ms for e in events)
    last = max(e.end_ms for e in events)
    if last - first + 1 < horizon_ms:
        raise InsufficientData(f"events span {(last - first + 1) / DAY_MS:.2f} days, horizon is {horizon_days}")
    if any(e.reflector_count and not e.reflector_ips for e in events):
        raise ValueError("reflector IP sets are required (load the reflector sidecar)")
    h0 = first if horizon_start_ms is None else horizon_start_ms
    h1 = h0 + horizon_ms
    by_proto: dict[str, list[AttackEvent]] = defaultdict(list)
    for e in events:
        by_proto[e.protocol.name].append(e)
    est = CeilingEstimate(0.0, {}, h0, h1)
    for name in sorted(by_proto):
        evs = by_proto[name]
        bits = sum(8 * e.total_bytes for e in evs)
        reflector_seconds = sum(e.reflector_count * e.duration_ms / 1000 for e in evs)
        per_reflector = bits / reflector_seconds if reflector_seconds else 0.0
        census = set()
        for e in evs:
            if e.start_ms < h1 and e.end_ms >= h0:
                census |= e.reflector_ips
        value = per_reflector * len(census)
        est.per_protocol[name] = {
            "per_reflector_bps": per_reflector,
            "unique_reflectors": len(census),
            "estimate_bps": value,
        }
        est.total_bps += value
    return est


# -- port capacity ------------------------------------------------------------------


@dataclass(frozen=True)
class CapacityRecord:
    member_id: str
    dst_prefix: str
    capacity_bps: int

    def __post_init__(self):
        if self.capacity_bps <= 0:
            raise ValueError(f"capacity_bps must be > 0 for {self.member_id} {self.dst_prefix}")


@dataclass(frozen=True)
class EventUtilization:
    event: AttackEvent
    member_id: str
    capacity_bps: int
    utilization: float


@dataclass
class CapacityImpact:
    per_event: list[EventUtilization]
    unmatched: list[AttackEvent]
    summary: dict


def capacity_table(records: Iterable[CapacityRecord]) -> PrefixTable:
    table: PrefixTable = PrefixTable()
    per_member: dict[str, PrefixTable] = defaultdict(PrefixTable)
    for r in records:
        per_member[r.member_id].insert(r.dst_prefix, r)
        table.insert(r.dst_prefix, r)
    for member, t in per_member.items():
        clash = t.overlapping()
        if clash:
            raise ValueError(f"member {member} has overlapping prefixes {clash[0][0]} and {clash[0][1]}")
    return table


def capacity_impact(events: Iterable[AttackEvent], capacity: Iterable[CapacityRecord]) -> CapacityImpact:
    """Peak attack rate relative to the victim network's port capacity."""
    table = capacity_table(capacity)
    per_event, unmatched = [], []
    for e in events:
        rec = table.lookup(e.dst_ip)
        if rec is None:
            unmatched.append(e)
            continue
        per_event.append(EventUtilization(e, rec.member_id, rec.capacity_bps, e.peak_rate_bps / rec.capacity_bps))
    per_net: dict[str, dict] = {}
    for u in per_event:
        s = per_net.setdefault(u.member_id, {"attacks": 0, "over_100": 0, "over_50": 0, "max_utilization": 0.0,
                                             "capacity_bps": u.capacity_bps})
        s["attacks"] += 1
        s["over_100"] += u.utilization > 1.0
        s["over_50"] += u.utilization > 0.5
        s["max_utilization"] = max(s["max_utilization"], u.utilization)
    n = len(per_event)
    over_100 = sum(1 for u in per_event if u.utilization > 1.0)
    over_50 = sum(1 for u in per_event if u.utilization > 0.5)
    nets_100 = sum(1 for s in per_net.values() if s["over_100"])
    nets_50 = sum(1 for s in per_net.values() if s["over_50"])
    summary = {
        "matched": n,
        "unmatched": len(unmatched),
        "over_100_count": over_100,
        "over_50_count": over_50,
        "over_100_share": over_100 / n if n else 0.0,
        "over_50_share": over_50 / n if n else 0.0,
        "networks": len(per_net),
        "networks_over_100": nets_100,
        "networks_over_50": nets_50,
        "networks_over_50_share": nets_50 / len(per_net) if per_net else 0.0,
        "per_network": dict(sorted(per_net.items())),
    }
    return CapacityImpact(per_event, unmatched, summary)


def read_capacity(path: Union[str, Path]) -> list[CapacityRecord]:
    rows = _read_rows(path, ("member_id", "dst_prefix", "capacity_bps"))
    return [CapacityRecord(r[0], r[1], int(r[2])) for r in rows]


# -- mitigation -----------------------------------------------------------------------

MITIGATION_KINDS = ("blackhole", "scrub")


@dataclass(frozen=True)
class MitigationLabel:
    kind: str
    dst_prefix: str
    start_ms: int
    end_ms: Optional[int] = None

    def __post_init__(self):
        if self.kind not in MITIGATION_KINDS:
            raise ValueError(f"unknown mitigation kind {self.kind!r}")
        if self.end_ms is not None and self.end_ms < self.start_ms:
            raise ValueError("mitigation label ends before it starts")

    def active_within(self, lo: int, hi: int) -> bool:
        return self.start_ms <= hi and (self.end_ms is None or self.end_ms >= lo)


@dataclass(frozen=True)
class MitigationMatch:
    event: AttackEvent
    mitigated: bool
    kind: Optional[str] = None
    delay_ms: Optional[int] = None
    label: Optional[MitigationLabel] = None


@dataclass
class MitigationReport:
    matches: list[MitigationMatch]
    summary: dict


DELAY_MARKS_MIN = (4, 10, 30)


def mitigation_correlate(
    events: Iterable[AttackEvent], labels: Iterable[MitigationLabel], slack_ms: int = 10 * MINUTE_MS
) -> MitigationReport:
    """Match events to blackhole/scrub labels on the victim prefix.

    A label matches when it covers the event's target and is active at some
    point in ``[start - slack, end + slack]``. With several matches the
    earliest label wins. ``delay_ms`` is label start minus event start, so a
    negative delay means the rule was already in place.

    The summary keeps pre-installed rules ("prior", delay < 0) apart from the
    rest: ``mean_positive_delay_ms`` averages only the non-negative delays,
    ``mean_signed_delay_ms`` averages all of them.
    """
    by_len: dict[int, dict[int, list[MitigationLabel]]] = defaultdict(lambda: defaultdict(list))
    for lab in labels:
        net, length = parse_prefix(lab.dst_prefix)
        by_len[length][net].append(lab)
    lengths = sorted(by_len, reverse=True)
    matches = []
    for e in events:
        lo, hi = e.start_ms - slack_ms, e.end_ms + slack_ms
        cands = []
        for length in lengths:
            for lab in by_len[length].get(e.dst_ip & netmask(length), ()):
                if lab.active_within(lo, hi):
                    cands.append((lab.start_ms, -length, lab.kind, lab))
        if not cands:
            matches.append(MitigationMatch(e, False))
            continue
        lab = min(cands, key=lambda c: c[:3])[3]
        matches.append(MitigationMatch(e, True, lab.kind, lab.start_ms - e.start_ms, lab))
    return MitigationReport(matches, _mitigation_summary(matches))


def _mitigation_summary(matches: Sequence[MitigationMatch]) -> dict:
    n = len(matches)
    hit = [m for m in matches if m.mitigated]
    delays = [m.delay_ms for m in hit]
    prior = [d for d in delays if d < 0]
    post = [d for d in delays if d >= 0]
    all_protos = Counter(m.event.protocol.name for m in matches)
    by_kind: dict[str, dict] = {}
    for kind in MITIGATION_KINDS:
        ks = [m for m in hit if m.kind == kind]
        kd = [m.delay_ms for m in ks]
        kp = [d for d in kd if d >= 0]
        protos = Counter(m.event.protocol.name for m in ks)
        by_kind[kind] = {
            "count": len(ks),
            "share_of_events": len(ks) / n if n else 0.0,
            "prior_share": sum(1 for d in kd if d < 0) / len(kd) if kd else 0.0,
            "mean_positive_delay_ms": sum(kp) / len(kp) if kp else None,
            "protocol_share": {p: c / len(ks) for p, c in sorted(protos.items())},
        }
    return {
        "events": n,
        "mitigated": len(hit),
        "mitigated_share": len(hit) / n if n else 0.0,
        "by_kind": by_kind,
        "prior_count": len(prior),
        "prior_share": len(prior) / len(hit) if hit else 0.0,
        "mean_positive_delay_ms": sum(post) / len(post) if post else None,
        "mean_signed_delay_ms": sum(delays) / len(delays) if delays else None,
        "delay_cdf": {f"lt_{m}min": (sum(1 for d in delays if d < m * MINUTE_MS) / len(delays) if delays else None)
                      for m in DELAY_MARKS_MIN},
        "protocol_share_all": {p: c / n for p, c in sorted(all_protos.items())},
    }


def read_mitigation(path: Union[str, Path]) -> list[MitigationLabel]:
    rows = _read_rows(path, ("kind", "dst_prefix", "start_ms", "end_ms"))
    return [MitigationLabel(r[0], r[1], int(r[2]), int(r[3]) if len(r) > 3 and r[3].strip() else None) for r in rows]


# -- shared helpers --------------------------------------------------------------------


def _read_rows(path: Union[str, Path], header: tuple[str, ...]) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and [c.strip() for c in rows[0][: len(header)]] == list(header):
        rows = rows[1:]
    for i, r in enumerate(rows):
        if len(r) < len(header) - (1 if header[-1] == "end_ms" else 0):
            raise ValueError(f"{path}: row {i + 1} has {len(r)} fields, expected {len(header)}")
    return rows


def write_xy(path: Union[str, Path], rows: Iterable[tuple], columns: Sequence[str]) -> None:
    """Whitespace-separated data file with a ``#`` header line (gnuplot-ready)."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(columns) + "\n")
        for row in rows:
            fh.write(" ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row) + "\n")
