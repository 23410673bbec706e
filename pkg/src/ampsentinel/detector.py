"""Per-window amplification classifier, event coalescing and port-0 attribution.

A (window, target IP, source port) bucket is an attack observation when at
least ``k`` distinct source IPs send to the target and the bucket's bit rate
is strictly above ``t``. Consecutive observations for the same target and
protocol are coalesced into events.

Integer rates are rounded *up* (``ceil(bits / seconds)``) so that comparing
the integer rate against ``t`` gives the same answer as the exact rational
comparison.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .ingest import DropCounts, FlowTable, WindowKey, drop_counts
from .model import (
    PORT0_INDEX,
    PORT_INDEX,
    REGISTRY,
    AmplificationProtocol,
    DetectionConfig,
    FlowRecord,
    format_ip,
    lookup_protocol,
    parse_ip,
    protocol_by_name,
)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class AttackObservation:
    window_index: int
    dst_ip: int
    protocol: AmplificationProtocol
    reflector_count: int
    rate_bps: int
    rate_pps: float
    reflector_ips: frozenset
    bytes: int
    packets: int
    # sum over member flows of bytes**2 / packets; the packet-weighted second
    # moment of per-flow mean packet size, times total packets
    size_sq_sum: float = 0.0


@dataclass(frozen=True)
class Port0Aggregate:
    """All port-0 traffic towards one target within one window."""

    window_index: int
    dst_ip: int
    bytes: int
    packets: int = 0
    reflector_count: int = 0


@dataclass(frozen=True)
class AttackEvent:
    dst_ip: int
    protocol: AmplificationProtocol
    start_ms: int
    end_ms: int
    peak_rate_bps: int
    peak_rate_pps: float
    avg_rate_bps: int
    total_bytes: int
    total_packets: int
    reflector_count: int
    mean_packet_size_bytes: float
    packet_size_std_bytes: float
    port0_surplus_bytes: int = 0
    reflector_ips: frozenset = field(default=frozenset(), compare=False, repr=False)

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms + 1

    def windows(self, window_seconds: int) -> tuple[int, int]:
        wms = window_seconds * 1000
        return self.start_ms // wms, self.end_ms // wms

    def sort_key(self):
        return (self.dst_ip, self.protocol.name, self.start_ms)


def classify_window(key: WindowKey, flows: Sequence[FlowRecord], config: DetectionConfig) -> Optional[AttackObservation]:
    """Apply the k-reflector / rate threshold rule to one bucket.

    ``flows`` must already be sampling-corrected and share the key's target,
    source port and window. Port-0 buckets come back flagged as ``PORT0``.
    """
    protocol = lookup_protocol(key.src_port)
    if protocol is None:
        return None
    reflectors = frozenset(f.src_ip for f in flows)
    total_bytes = sum(f.bytes for f in flows)
    bits = 8 * total_bytes
    if len(reflectors) < config.k_min_reflectors or bits <= config.t_rate_bps * config.window_seconds:
        return None
    total_packets = sum(f.packets for f in flows)
    size_sq = sum(f.bytes * f.bytes / f.packets for f in flows if f.packets)
    return AttackObservation(
        window_index=key.window_index,
        dst_ip=key.dst_ip,
        protocol=protocol,
        reflector_count=len(reflectors),
        rate_bps=_ceil_div(bits, config.window_seconds),
        rate_pps=total_packets / config.window_seconds,
        reflector_ips=reflectors,
        bytes=total_bytes,
        packets=total_packets,
        size_sq_sum=size_sq,
    )


def _build_event(run: list[AttackObservation], config: DetectionConfig) -> AttackEvent:
    wms = config.window_ms
    total_bytes = sum(o.bytes for o in run)
    total_packets = sum(o.packets for o in run)
    reflectors = frozenset().union(*(o.reflector_ips for o in run))
    mean = total_bytes / total_packets if total_packets else 0.0
    var = sum(o.size_sq_sum for o in run) / total_packets - mean * mean if total_packets else 0.0
    return AttackEvent(
        dst_ip=run[0].dst_ip,
        protocol=run[0].protocol,
        start_ms=run[0].window_index * wms,
        end_ms=(run[-1].window_index + 1) * wms - 1,
        peak_rate_bps=max(o.rate_bps for o in run),
        peak_rate_pps=max(o.rate_pps for o in run),
        avg_rate_bps=_ceil_div(8 * total_bytes, len(run) * config.window_seconds),
        total_bytes=total_bytes,
        total_packets=total_packets,
        reflector_count=len(reflectors),
        mean_packet_size_bytes=mean,
        packet_size_std_bytes=math.sqrt(var) if var > 0 else 0.0,
        reflector_ips=reflectors,
    )


def coalesce_events(observations: Iterable[AttackObservation], config: DetectionConfig = DetectionConfig()) -> list[AttackEvent]:
    """Merge runs of observations per (target, protocol) into events.

    A run ends when more than ``config.hysteresis_windows`` windows are
    missing between two observations; an attack that drops below the
    threshold and comes back is then a new event.
    """
    streams: dict[tuple, list[AttackObservation]] = defaultdict(list)
    for obs in observations:
        streams[(obs.dst_ip, obs.protocol.src_port)].append(obs)
    events = []
    for key in sorted(streams):
        stream = sorted(streams[key], key=lambda o: o.window_index)
        run = [stream[0]]
        for obs in stream[1:]:
            if obs.window_index - run[-1].window_index - 1 > config.hysteresis_windows:
                events.append(_build_event(run, config))
                run = [obs]
            else:
                run.append(obs)
        events.append(_build_event(run, config))
    events.sort(key=AttackEvent.sort_key)
    return events


@dataclass(frozen=True)
class DailyGroupedEvent:
    dst_ip: int
    protocol: AmplificationProtocol
    day: dt.date
    event_count: int
    start_ms: int
    end_ms: int
    peak_rate_bps: int
    total_bytes: int
    total_packets: int
    reflector_count: int


def utc_day(timestamp_ms: int) -> dt.date:
    return dt.datetime.fromtimestamp(timestamp_ms / 1000, tz=dt.timezone.utc).date()


def group_daily(events: Iterable[AttackEvent]) -> list[DailyGroupedEvent]:
    """One record per (target, protocol, UTC day of the event start)."""
    groups: dict[tuple, list[AttackEvent]] = defaultdict(list)
    for e in events:
        groups[(e.dst_ip, e.protocol.name, utc_day(e.start_ms))].append(e)
    out = []
    for (dst, _, day), members in sorted(groups.items()):
        reflectors = frozenset().union(*(e.reflector_ips for e in members))
        out.append(DailyGroupedEvent(
            dst_ip=dst,
            protocol=members[0].protocol,
            day=day,
            event_count=len(members),
            start_ms=min(e.start_ms for e in members),
            end_ms=max(e.end_ms for e in members),
            peak_rate_bps=max(e.peak_rate_bps for e in members),
            total_bytes=sum(e.total_bytes for e in members),
            total_packets=sum(e.total_packets for e in members),
            reflector_count=len(reflectors) if reflectors else max(e.reflector_count for e in members),
        ))
    return out


@dataclass
class Port0Attribution:
    events: list[AttackEvent]
    attributed_bytes: int = 0
    ambiguous_bytes: int = 0
    orphan_bytes: int = 0
    ambiguous_aggregates: list = field(default_factory=list)
    orphan_aggregates: list = field(default_factory=list)

    @property
    def total_bytes(self) -> int:
        return self.attributed_bytes + self.ambiguous_bytes + self.orphan_bytes

    @property
    def pairs(self) -> list[tuple[AttackEvent, int]]:
        return [(e, e.port0_surplus_bytes) for e in self.events]

    def share_with_port0(self) -> float:
        """Fraction of events that received any port-0 surplus."""
        if not self.events:
            return 0.0
        return sum(1 for e in self.events if e.port0_surplus_bytes > 0) / len(self.events)

    def surplus_ratio(self, protocol: Optional[str] = None) -> float:
        """Mean over events with surplus of port-0 bytes / identified bytes."""
        ratios = [e.port0_surplus_bytes / e.total_bytes for e in self.events
                  if e.port0_surplus_bytes > 0 and (protocol is None or e.protocol.name == protocol)]
        return sum(ratios) / len(ratios) if ratios else 0.0


def attribute_port0(events: Sequence[AttackEvent], port0: Iterable, window_seconds: int = 60) -> Port0Attribution:
    """Credit port-0 (fragment) bytes to the single attack active on the target.

    ``port0`` holds per-window port-0 aggregates (anything with
    ``window_index``, ``dst_ip`` and ``bytes``), sub-threshold ones included.
    An aggregate is attributed only when exactly one non-PORT0 event covers
    its window on that target; otherwise it is ambiguous or orphaned.
    """
    by_dst: dict[int, list[tuple[int, int, int]]] = defaultdict(list)
    for idx, e in enumerate(events):
        if e.protocol.src_port == 0:
            continue
        lo, hi = e.windows(window_seconds)
        by_dst[e.dst_ip].append((lo, hi, idx))
    surplus = [0] * len(events)
    result = Port0Attribution(events=[])
    for agg in port0:
        active = [idx for lo, hi, idx in by_dst.get(agg.dst_ip, ()) if lo <= agg.window_index <= hi]
        if len(active) == 1:
            surplus[active[0]] += agg.bytes
            result.attributed_bytes += agg.bytes
        elif active:
            result.ambiguous_bytes += agg.bytes
            result.ambiguous_aggregates.append(agg)
        else:
            result.orphan_bytes += agg.bytes
            result.orphan_aggregates.append(agg)
    result.events = [
        dataclasses.replace(e, port0_surplus_bytes=e.port0_surplus_bytes + s) if s else e
        for e, s in zip(events, surplus)
    ]
    return result


# -- vectorised pipeline -------------------------------------------------------

_WINDOW_BITS = 27


@dataclass
class Buckets:
    """Columnar per-bucket aggregates; row ``i`` is one (window, dst, port)."""

    window_index: np.ndarray
    dst_ip: np.ndarray
    port_index: np.ndarray
    reflector_count: np.ndarray
    bytes: np.ndarray
    packets: np.ndarray
    size_sq_sum: np.ndarray
    # CSR layout of the distinct source IPs of every bucket
    reflector_offsets: np.ndarray
    reflector_ips: np.ndarray

    _ROW_FIELDS = ("window_index", "dst_ip", "port_index", "reflector_count", "bytes", "packets", "size_sq_sum")

    @classmethod
    def empty(cls) -> "Buckets":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, z, z, np.zeros(0), np.zeros(1, dtype=np.int64), z)

    def __len__(self) -> int:
        return len(self.window_index)

    def reflectors(self, i: int) -> np.ndarray:
        return self.reflector_ips[self.reflector_offsets[i]:self.reflector_offsets[i + 1]]

    def take(self, idx: np.ndarray) -> "Buckets":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        lens = self.reflector_count[idx]
        offsets = np.zeros(len(idx) + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        shift = np.repeat(self.reflector_offsets[idx] - offsets[:-1], lens)
        gather = shift + np.arange(offsets[-1], dtype=np.int64)
        rows = {f: getattr(self, f)[idx] for f in self._ROW_FIELDS}
        return Buckets(**rows, reflector_offsets=offsets, reflector_ips=self.reflector_ips[gather])

    @classmethod
    def concat(cls, parts: Sequence["Buckets"]) -> "Buckets":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        rows = {f: np.concatenate([getattr(p, f) for p in parts]) for f in cls._ROW_FIELDS}
        lens = rows["reflector_count"]
        offsets = np.zeros(len(lens) + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        ips = np.concatenate([p.reflector_ips for p in parts])
        return cls(**rows, reflector_offsets=offsets, reflector_ips=ips)

    def canonical(self) -> "Buckets":
        return self.take(np.lexsort((self.window_index, self.port_index, self.dst_ip)))


def aggregate_buckets(table: FlowTable, config: DetectionConfig) -> Buckets:
    """Group flows by window key; ``table`` must hold only retained flows."""
    n = len(table)
    if n == 0:
        return Buckets.empty()
    win = table.timestamp_ms // config.window_ms
    pidx = PORT_INDEX[table.src_port].astype(np.int64)
    wrel = win - int(win.min())
    if int(wrel.max()) < (1 << _WINDOW_BITS):
        key = (wrel << 36) | (table.dst_ip << 4) | pidx
        order = np.argsort(key, kind="stable")
        skey = key[order]
        change = skey[1:] != skey[:-1]
    else:
        order = np.lexsort((pidx, table.dst_ip, wrel))
        cols = np.stack([wrel[order], table.dst_ip[order], pidx[order]])
        change = np.any(cols[:, 1:] != cols[:, :-1], axis=0)
    starts = np.flatnonzero(np.concatenate(([True], change)))
    first = order[starts]
    nbytes = table.bytes[order]
    npk = table.packets[order]
    sq = np.zeros(n)
    nz = npk > 0
    sq[nz] = nbytes[nz].astype(np.float64) ** 2 / npk[nz]
    ngroups = len(starts)
    gid = np.repeat(np.arange(ngroups, dtype=np.int64), np.diff(np.append(starts, n)))
    pairs = np.unique((gid << 32) | table.src_ip[order])
    refl_count = np.bincount(pairs >> 32, minlength=ngroups)
    offsets = np.zeros(ngroups + 1, dtype=np.int64)
    np.cumsum(refl_count, out=offsets[1:])
    return Buckets(
        window_index=win[first],
        dst_ip=table.dst_ip[first],
        port_index=pidx[first],
        reflector_count=refl_count,
        bytes=np.add.reduceat(nbytes, starts),
        packets=np.add.reduceat(npk, starts),
        size_sq_sum=np.add.reduceat(sq, starts),
        reflector_offsets=offsets,
        reflector_ips=pairs & 0xFFFFFFFF,
    )


def classify_buckets(b: Buckets, config: DetectionConfig) -> np.ndarray:
    """Vector form of :func:`classify_window`; ``bytes*8 > t*W`` without overflow."""
    byte_floor = (config.t_rate_bps * config.window_seconds) // 8
    return (b.reflector_count >= config.k_min_reflectors) & (b.bytes > byte_floor)


def observations_from(b: Buckets, config: DetectionConfig) -> list[AttackObservation]:
    w = config.window_seconds
    offs = b.reflector_offsets.tolist()
    out = []
    for i, (win, dst, p, rc, nb, npk, sq) in enumerate(zip(*(getattr(b, f).tolist() for f in Buckets._ROW_FIELDS))):
        out.append(AttackObservation(
            window_index=win,
            dst_ip=dst,
            protocol=REGISTRY[p],
            reflector_count=rc,
            rate_bps=_ceil_div(8 * nb, w),
            rate_pps=npk / w,
            reflector_ips=frozenset(b.reflector_ips[offs[i]:offs[i + 1]].tolist()),
            bytes=nb,
            packets=npk,
            size_sq_sum=sq,
        ))
    return out


def coalesce_buckets(obs: Buckets, config: DetectionConfig) -> list[AttackEvent]:
    """Columnar :func:`coalesce_events`; ``obs`` must be in canonical order."""
    n = len(obs)
    if n == 0:
        return []
    dst, port, win = obs.dst_ip, obs.port_index, obs.window_index
    brk = np.ones(n, dtype=bool)
    brk[1:] = (dst[1:] != dst[:-1]) | (port[1:] != port[:-1]) | (win[1:] - win[:-1] - 1 > config.hysteresis_windows)
    starts = np.flatnonzero(brk)
    ends = np.append(starts[1:], n) - 1
    eid = np.cumsum(brk) - 1
    tot_bytes = np.add.reduceat(obs.bytes, starts)
    tot_pk = np.add.reduceat(obs.packets, starts)
    tot_sq = np.add.reduceat(obs.size_sq_sum, starts)
    max_bytes = np.maximum.reduceat(obs.bytes, starts)
    max_pk = np.maximum.reduceat(obs.packets, starts)
    nwin = ends - starts + 1
    pairs = np.unique((np.repeat(eid, obs.reflector_count) << 32) | obs.reflector_ips)
    union = np.bincount(pairs >> 32, minlength=len(starts))
    ips = (pairs & 0xFFFFFFFF).tolist()
    offs = np.concatenate(([0], np.cumsum(union))).tolist()
    w, wms = config.window_seconds, config.window_ms
    events = []
    rows = zip(
        dst[starts].tolist(), port[starts].tolist(), win[starts].tolist(), win[ends].tolist(),
        tot_bytes.tolist(), tot_pk.tolist(), tot_sq.tolist(), max_bytes.tolist(), max_pk.tolist(),
        nwin.tolist(), union.tolist(),
    )
    for i, (d, p, sw, ew, tb, tp, sq, mb, mp, nw, nu) in enumerate(rows):
        mean = tb / tp if tp else 0.0
        var = sq / tp - mean * mean if tp else 0.0
        events.append(AttackEvent(
            dst_ip=d,
            protocol=REGISTRY[p],
            start_ms=sw * wms,
            end_ms=(ew + 1) * wms - 1,
            peak_rate_bps=_ceil_div(8 * mb, w),
            peak_rate_pps=mp / w,
            avg_rate_bps=_ceil_div(8 * tb, nw * w),
            total_bytes=tb,
            total_packets=tp,
            reflector_count=nu,
            mean_packet_size_bytes=mean,
            packet_size_std_bytes=math.sqrt(var) if var > 0 else 0.0,
            reflector_ips=frozenset(ips[offs[i]:offs[i + 1]]),
        ))
    return events


def attribute_port0_buckets(events: Sequence[AttackEvent], port0: Buckets, window_seconds: int) -> Port0Attribution:
    """Columnar :func:`attribute_port0` over port-0 bucket aggregates."""
    result = Port0Attribution(events=list(events))
    if len(port0) == 0:
        return result
    real = [i for i, e in enumerate(events) if e.protocol.src_port != 0]
    if not real:
        result.orphan_bytes = int(port0.bytes.sum())
        return result
    wms = window_seconds * 1000
    ev_dst = np.array([events[i].dst_ip for i in real], dtype=np.int64)
    ev_lo = np.array([events[i].start_ms // wms for i in real], dtype=np.int64)
    ev_hi = np.array([events[i].end_ms // wms for i in real], dtype=np.int64)
    span = ev_hi - ev_lo + 1
    # expand every event into the (dst, window) cells it covers
    cell_ev = np.repeat(np.arange(len(real)), span)
    cell_win = np.repeat(ev_lo - np.concatenate(([0], np.cumsum(span)[:-1])), span) + np.arange(span.sum())
    cell_dst = ev_dst[cell_ev]
    order = np.lexsort((cell_win, cell_dst))
    cd, cw, ce = cell_dst[order], cell_win[order], cell_ev[order]
    new = np.ones(len(cd), dtype=bool)
    new[1:] = (cd[1:] != cd[:-1]) | (cw[1:] != cw[:-1])
    ustart = np.flatnonzero(new)
    ucount = np.diff(np.append(ustart, len(cd)))
    udst, uwin, uev = cd[ustart], cw[ustart], ce[ustart]
    # locate each port-0 aggregate among the unique covered cells
    pos = np.searchsorted(udst * (1 << 40) + uwin, port0.dst_ip * (1 << 40) + port0.window_index)
    pos_c = np.minimum(pos, len(udst) - 1)
    hit = (pos < len(udst)) & (udst[pos_c] == port0.dst_ip) & (uwin[pos_c] == port0.window_index)
    cover = np.where(hit, ucount[pos_c], 0)
    unique = cover == 1
    surplus = np.zeros(len(real), dtype=np.int64)
    np.add.at(surplus, uev[pos_c[unique]], port0.bytes[unique])
    result.attributed_bytes = int(port0.bytes[unique].sum())
    result.ambiguous_bytes = int(port0.bytes[cover > 1].sum())
    result.orphan_bytes = int(port0.bytes[cover == 0].sum())
    out = list(events)
    for j, s in zip(real, surplus.tolist()):
        if s:
            out[j] = dataclasses.replace(out[j], port0_surplus_bytes=out[j].port0_surplus_bytes + s)
    result.events = out
    return result


@dataclass
class Detection:
    events: list[AttackEvent]
    port0_events: list[AttackEvent]
    observations: Buckets
    port0: Buckets
    attribution: Port0Attribution
    dropped: DropCounts
    flows_in: int

    def observation_list(self, config: DetectionConfig) -> list[AttackObservation]:
        return observations_from(self.observations, config)

    def port0_aggregates(self) -> list[Port0Aggregate]:
        p = self.port0
        return [Port0Aggregate(*row) for row in zip(
            p.window_index.tolist(), p.dst_ip.tolist(), p.bytes.tolist(), p.packets.tolist(), p.reflector_count.tolist())]


def shard_of(dst_ip: np.ndarray, shards: int) -> np.ndarray:
    return ((dst_ip * 2654435761) & 0xFFFFFFFF) % shards


def _observe(table: FlowTable, config: DetectionConfig) -> tuple[Buckets, Buckets]:
    b = aggregate_buckets(table, config)
    return b.take(classify_buckets(b, config)), b.take(b.port_index == PORT0_INDEX)


def detect(table: FlowTable, config: DetectionConfig = DetectionConfig(), shards: int = 1, workers: int = 1) -> Detection:
    """Window, classify, coalesce and attribute a sampling-corrected table.

    Work is split into ``shards`` disjoint target-IP partitions. Results are
    put in canonical order, so shard and worker counts never change output.
    """
    keep, dropped = drop_counts(table)
    kept = table[keep]
    if shards <= 1:
        parts = [_observe(kept, config)]
    else:
        sid = shard_of(kept.dst_ip, shards)
        tables = [kept[sid == s] for s in range(shards)]
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(lambda t: _observe(t, config), tables))
        else:
            parts = [_observe(t, config) for t in tables]
    obs = Buckets.concat([o for o, _ in parts]).canonical()
    port0 = Buckets.concat([p for _, p in parts]).canonical()
    is_p0 = obs.port_index == PORT0_INDEX
    events = coalesce_buckets(obs.take(~is_p0), config)
    port0_events = coalesce_buckets(obs.take(is_p0), config)
    attribution = attribute_port0_buckets(events, port0, config.window_seconds)
    return Detection(
        events=canonical(attribution.events),
        port0_events=canonical(port0_events),
        observations=obs,
        port0=port0,
        attribution=attribution,
        dropped=dropped,
        flows_in=len(table),
    )


# -- event files -------------------------------------------------------------

EVENT_FIELDS = (
    "dst_ip", "protocol", "start_ms", "end_ms", "peak_bps", "avg_bps", "peak_pps", "total_bytes",
    "total_packets", "reflector_count", "mean_pkt_size", "pkt_size_std", "port0_surplus_bytes",
)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def event_row(e: AttackEvent) -> dict:
    return {
        "dst_ip": format_ip(e.dst_ip),
        "protocol": e.protocol.name,
        "start_ms": e.start_ms,
        "end_ms": e.end_ms,
        "peak_bps": e.peak_rate_bps,
        "avg_bps": e.avg_rate_bps,
        "peak_pps": _fmt(e.peak_rate_pps),
        "total_bytes": e.total_bytes,
        "total_packets": e.total_packets,
        "reflector_count": e.reflector_count,
        "mean_pkt_size": _fmt(e.mean_packet_size_bytes),
        "pkt_size_std": _fmt(e.packet_size_std_bytes),
        "port0_surplus_bytes": e.port0_surplus_bytes,
    }


def canonical(events: Iterable[AttackEvent]) -> list[AttackEvent]:
    return sorted(events, key=AttackEvent.sort_key)


def write_events_csv(events: Iterable[AttackEvent], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVENT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for e in canonical(events):
            writer.writerow(event_row(e))


def write_events_jsonl(events: Iterable[AttackEvent], path: Union[str, Path]) -> None:
    float_fields = {"peak_pps", "mean_pkt_size", "pkt_size_std"}
    with open(path, "w") as fh:
        for e in canonical(events):
            row = event_row(e)
            for k in float_fields:
                row[k] = float(row[k])
            fh.write(json.dumps(row) + "\n")


def write_reflectors_csv(events: Iterable[AttackEvent], path: Union[str, Path]) -> None:
    """Sidecar listing every event's reflector IPs (needed for reflector census)."""
    with open(path, "w", newline="") as fh:
        fh.write("dst_ip,protocol,start_ms,reflector_ip\n")
        for e in canonical(events):
            prefix = f"{format_ip(e.dst_ip)},{e.protocol.name},{e.start_ms},"
            fh.write("".join(prefix + format_ip(ip) + "\n" for ip in sorted(e.reflector_ips)))


def _event_from_row(row: dict) -> AttackEvent:
    return AttackEvent(
        dst_ip=parse_ip(row["dst_ip"]),
        protocol=protocol_by_name(row["protocol"]),
        start_ms=int(row["start_ms"]),
        end_ms=int(row["end_ms"]),
        peak_rate_bps=int(row["peak_bps"]),
        peak_rate_pps=float(row["peak_pps"]),
        avg_rate_bps=int(row["avg_bps"]),
        total_bytes=int(row["total_bytes"]),
        total_packets=int(row["total_packets"]),
        reflector_count=int(row["reflector_count"]),
        mean_packet_size_bytes=float(row["mean_pkt_size"]),
        packet_size_std_bytes=float(row["pkt_size_std"]),
        port0_surplus_bytes=int(row["port0_surplus_bytes"]),
    )


def read_events(path: Union[str, Path], reflectors: Union[str, Path, None] = None) -> list[AttackEvent]:
    """Load events from ``.csv`` or ``.jsonl``; optionally attach reflector sets."""
    path = Path(path)
    with open(path, newline="") as fh:
        if path.suffix == ".jsonl":
            rows = [json.loads(line) for line in fh if line.strip()]
        else:
            reader = csv.DictReader(fh)
            missing = set(EVENT_FIELDS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing event columns {sorted(missing)}")
            rows = list(reader)
    events = [_event_from_row(r) for r in rows]
    if reflectors is not None:
        events = attach_reflectors(events, reflectors)
    return events


def attach_reflectors(events: list[AttackEvent], path: Union[str, Path]) -> list[AttackEvent]:
    sets: dict[tuple, set] = defaultdict(set)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            sets[(parse_ip(row["dst_ip"]), row["protocol"], int(row["start_ms"]))].add(parse_ip(row["reflector_ip"]))
    return [
        dataclasses.replace(e, reflector_ips=frozenset(sets.get((e.dst_ip, e.protocol.name, e.start_ms), ())))
        for e in events
    ]
