"""Labeled synthetic flow corpora.

Attack scenarios are rendered window by window: every (target, window) cell
gets an exact byte budget derived from the scenario's rate and its overlap
with the window, split across reflectors by a renormalised lognormal draw.
Ground truth is computed from those budgets alone, never by running the
detector, so it can serve as an independent oracle.
"""

from __future__ import annotations

import ipaddress
import json
import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .ingest import FlowTable
from .model import (
    MIN_IPV4_HEADER,
    UDP,
    AmplificationProtocol,
    DetectionConfig,
    format_ip,
    lookup_protocol,
    parse_ip,
    protocol_by_name,
)


class InfeasibleScenario(ValueError):
    pass


# Per-protocol attack shapes: average peak Gbps, average reflectors per attack,
# average duration in minutes, packet size mean/std in bytes.
PROTOCOL_SHAPES = {
    "CLDAP": dict(avg_gbps=2.1, avg_reflectors=328, avg_duration_min=6.4, pkt_avg=1515, pkt_std=21),
    "DNS": dict(avg_gbps=2.3, avg_reflectors=776, avg_duration_min=6.0, pkt_avg=1474, pkt_std=59),
    "SSDP": dict(avg_gbps=4.8, avg_reflectors=1594, avg_duration_min=30, pkt_avg=347, pkt_std=9.1),
    "Memcached": dict(avg_gbps=2.7, avg_reflectors=35.6, avg_duration_min=6.0, pkt_avg=1285, pkt_std=207),
    "NTP": dict(avg_gbps=2.4, avg_reflectors=164.7, avg_duration_min=6.5, pkt_avg=481.1, pkt_std=10),
    "RPC": dict(avg_gbps=2.3, avg_reflectors=1465, avg_duration_min=4.7, pkt_avg=620.6, pkt_std=51),
    "SNMP": dict(avg_gbps=1.6, avg_reflectors=506, avg_duration_min=9.0, pkt_avg=1372, pkt_std=160),
    "Chargen": dict(avg_gbps=1.7, avg_reflectors=247, avg_duration_min=7.4, pkt_avg=1255, pkt_std=145),
    "ARMS": dict(avg_gbps=1.7, avg_reflectors=345, avg_duration_min=11, pkt_avg=1053, pkt_std=1.3),
    "WS-Discovery": dict(avg_gbps=1.4, avg_reflectors=669, avg_duration_min=4.8, pkt_avg=1216, pkt_std=199),
    "Device-Discovery": dict(avg_gbps=1.8, avg_reflectors=2993, avg_duration_min=6.5, pkt_avg=207.9, pkt_std=3.2),
    "OpenVPN": dict(avg_gbps=1.4, avg_reflectors=3736, avg_duration_min=7.1, pkt_avg=64.5, pkt_std=0.3),
}

LOGNORMAL_SIGMA = 1.0


@dataclass(frozen=True)
class Rotation:
    """Move the attack to the next address of ``prefix`` every ``dwell_ms``."""

    prefix: str
    dwell_ms: int


@dataclass(frozen=True)
class AttackScenario:
    protocol: AmplificationProtocol
    dst_ip: int
    reflector_count: int
    start_ms: int
    duration_ms: int
    target_rate_bps: int
    pkt_size_mean_bytes: float
    pkt_size_std_bytes: float = 0.0
    rotation: Optional[Rotation] = None
    fragment_share: float = 0.0
    # per-window multipliers of target_rate_bps, counted from the window that
    # holds start_ms; windows past the end use 1.0
    rate_profile: tuple = ()
    # when set, generation fails unless the scenario is built to be detected
    expect_detection: Optional[bool] = None
    scenario_id: str = ""

    def __post_init__(self):
        if self.reflector_count < 1:
            raise ValueError("reflector_count must be >= 1")
        if self.target_rate_bps <= 0:
            raise ValueError("target_rate_bps must be > 0")
        if not 0.0 <= self.fragment_share < 1.0:
            raise ValueError("fragment_share must be in [0, 1)")
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be > 0")
        if self.pkt_size_mean_bytes < MIN_IPV4_HEADER:
            raise ValueError("pkt_size_mean_bytes must be >= 20")
        if self.rotation is not None:
            net = ipaddress.IPv4Network(self.rotation.prefix, strict=False)
            if ipaddress.IPv4Address(self.dst_ip) not in net:
                raise ValueError("dst_ip must lie inside the rotation prefix")
            if self.rotation.dwell_ms <= 0:
                raise ValueError("rotation dwell_ms must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["protocol"] = self.protocol.name
        d["dst_ip"] = format_ip(self.dst_ip)
        d["rate_profile"] = list(self.rate_profile)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackScenario":
        d = dict(d)
        proto = d["protocol"]
        d["protocol"] = protocol_by_name(proto) if isinstance(proto, str) else lookup_protocol(int(proto))
        if isinstance(d["dst_ip"], str):
            d["dst_ip"] = parse_ip(d["dst_ip"])
        if d.get("rotation"):
            d["rotation"] = Rotation(**d["rotation"])
        d["rate_profile"] = tuple(d.get("rate_profile") or ())
        return cls(**d)


@dataclass(frozen=True)
class TruthEvent:
    dst_ip: int
    protocol: str
    start_window: int
    end_window: int
    peak_rate_bps: int
    total_bytes: int
    port0_bytes: int
    reflector_count: int


@dataclass
class GroundTruth:
    scenario_id: str
    events: list[TruthEvent] = field(default_factory=list)
    port0_bytes: int = 0

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "port0_bytes": self.port0_bytes,
            "events": [dict(asdict(e), dst_ip=format_ip(e.dst_ip)) for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        events = [TruthEvent(**dict(e, dst_ip=parse_ip(e["dst_ip"]))) for e in d["events"]]
        return cls(d["scenario_id"], events, d.get("port0_bytes", 0))


# -- cell plan -------------------------------------------------------------


@dataclass
class _Cell:
    lo_ms: int
    hi_ms: int
    overlap_ms: int = 0


def _targets(s: AttackScenario) -> list[tuple[int, int, int]]:
    """(dst_ip, t0, t1) segments the attack traffic is aimed at."""
    end = s.start_ms + s.duration_ms
    if s.rotation is None:
        return [(s.dst_ip, s.start_ms, end)]
    net = ipaddress.IPv4Network(s.rotation.prefix, strict=False)
    base, size = int(net.network_address), net.num_addresses
    segments = []
    t, k = s.start_ms, 0
    while t < end:
        t1 = min(t + s.rotation.dwell_ms, end)
        segments.append((base + (s.dst_ip - base + k) % size, t, t1))
        t, k = t1, k + 1
    return segments


def _plan(s: AttackScenario, window_ms: int) -> dict[tuple[int, int], _Cell]:
    cells: dict[tuple[int, int], _Cell] = {}
    for dst, t0, t1 in _targets(s):
        w = t0 // window_ms
        while w * window_ms < t1:
            lo, hi = max(t0, w * window_ms), min(t1, (w + 1) * window_ms)
            cell = cells.setdefault((dst, w), _Cell(lo, hi))
            cell.lo_ms, cell.hi_ms = min(cell.lo_ms, lo), max(cell.hi_ms, hi)
            cell.overlap_ms += hi - lo
            w += 1
    return cells


def _min_flow_bytes(s: AttackScenario) -> int:
    return max(MIN_IPV4_HEADER, math.ceil(s.pkt_size_mean_bytes))


def _exact(x) -> Fraction:
    # decimal reading of the parameter, so 0.6 means 3/5 and not the nearest double
    return Fraction(repr(float(x)))


def cell_budget(s: AttackScenario, window: int, overlap_ms: int, window_ms: int) -> tuple[int, int, int]:
    """(identified bytes, active reflectors, port-0 bytes) for one cell."""
    mult = Fraction(1)
    rel = window - s.start_ms // window_ms
    if 0 <= rel < len(s.rate_profile):
        mult = _exact(s.rate_profile[rel])
    nbytes = math.floor(s.target_rate_bps * mult * overlap_ms / 8000)
    active = min(s.reflector_count, nbytes // _min_flow_bytes(s))
    frag = _exact(s.fragment_share)
    p0 = math.floor(nbytes * frag / (1 - frag)) if frag > 0 and active else 0
    if p0 < active * MIN_IPV4_HEADER:
        p0 = 0
    return nbytes, active, p0


def _apportion(total: int, weights: np.ndarray, floor: int) -> np.ndarray:
    """Integer split of ``total`` with a per-item floor, exact sum (largest remainder)."""
    n = len(weights)
    rest = total - floor * n
    raw = weights / weights.sum() * rest
    base = np.floor(raw).astype(np.int64)
    short = rest - int(base.sum())
    if short > 0:
        base[np.argsort(-(raw - base), kind="stable")[:short]] += 1
    return base + floor


def _packets_for(nbytes: np.ndarray, s: AttackScenario, rng: np.random.Generator) -> np.ndarray:
    size = rng.normal(s.pkt_size_mean_bytes, s.pkt_size_std_bytes, len(nbytes)) if s.pkt_size_std_bytes > 0 \
        else np.full(len(nbytes), float(s.pkt_size_mean_bytes))
    size = np.maximum(size, MIN_IPV4_HEADER)
    pk = np.maximum(1, np.rint(nbytes / size)).astype(np.int64)
    return np.minimum(pk, nbytes // MIN_IPV4_HEADER)


def _reflector_pool(n: int, rng: np.random.Generator, avoid: set[int]) -> np.ndarray:
    # reflectors come from 1.0.0.0 - 99.255.255.255, away from targets
    pool: list[int] = []
    seen = set(avoid)
    while len(pool) < n:
        for ip in rng.integers(0x01000000, 0x64000000, size=2 * (n - len(pool)) + 8).tolist():
            if ip not in seen:
                seen.add(ip)
                pool.append(ip)
                if len(pool) == n:
                    break
    return np.array(pool, dtype=np.int64)


def generate_attack(
    scenario: AttackScenario, seed: int, config: DetectionConfig = DetectionConfig()
) -> tuple[FlowTable, GroundTruth]:
    """Render one scenario into flows plus the events a detector must find.

    Flows are emitted unsampled (sampling rate 1), one per active reflector
    per window, in canonical sorted order.
    """
    s = scenario
    k, t = config.k_min_reflectors, config.t_rate_bps
    if s.expect_detection:
        if s.target_rate_bps <= t:
            raise InfeasibleScenario(f"target rate {s.target_rate_bps} bps is not above t={t}")
        if s.reflector_count < k:
            raise InfeasibleScenario(f"{s.reflector_count} reflectors is below k={k}")
    rng = np.random.default_rng(seed)
    wms = config.window_ms
    cells = _plan(s, wms)
    targets = {dst for dst, _ in cells}
    pool = _reflector_pool(s.reflector_count, rng, targets)
    weights = rng.lognormal(0.0, LOGNORMAL_SIGMA, s.reflector_count)
    victim_port = int(rng.integers(1024, 65536))
    floor = _min_flow_bytes(s)
    parts = []
    budgets = {}
    for (dst, w), cell in sorted(cells.items()):
        nbytes, active, p0 = cell_budget(s, w, cell.overlap_ms, wms)
        budgets[(dst, w)] = (nbytes, active, p0)
        if active == 0:
            continue
        for port, total, dport in ((s.protocol.src_port, nbytes, victim_port), (0, p0, 0)):
            if total < active * MIN_IPV4_HEADER:
                continue
            shares = _apportion(total, weights[:active], floor if port else MIN_IPV4_HEADER)
            pk = _packets_for(shares, s, rng)
            parts.append(FlowTable(
                timestamp_ms=rng.integers(cell.lo_ms, cell.hi_ms, active),
                src_ip=pool[:active],
                dst_ip=np.full(active, dst),
                ip_protocol=np.full(active, UDP),
                src_port=np.full(active, port),
                dst_port=np.full(active, dport),
                packets=pk,
                bytes=shares,
            ))
    flows = FlowTable.concat(parts).sorted() if parts else FlowTable()
    truth = _truth(s, budgets, config)
    if s.expect_detection and not truth.events:
        raise InfeasibleScenario("scenario is expected to be detected but no window clears the thresholds")
    return flows, truth


def _truth(s: AttackScenario, budgets: dict, config: DetectionConfig) -> GroundTruth:
    k, w = config.k_min_reflectors, config.window_seconds
    byte_floor = config.t_rate_bps * w // 8
    by_dst: dict[int, list[int]] = {}
    for (dst, win), (nbytes, active, _) in budgets.items():
        if active >= k and nbytes > byte_floor:
            by_dst.setdefault(dst, []).append(win)
    events = []
    for dst in sorted(by_dst):
        wins = sorted(by_dst[dst])
        runs = [[wins[0]]]
        for x in wins[1:]:
            if x - runs[-1][-1] - 1 > config.hysteresis_windows:
                runs.append([x])
            else:
                runs[-1].append(x)
        for run in runs:
            lo, hi = run[0], run[-1]
            events.append(TruthEvent(
                dst_ip=dst,
                protocol=s.protocol.name,
                start_window=lo,
                end_window=hi,
                peak_rate_bps=max(-(-8 * budgets[(dst, x)][0] // w) for x in run),
                total_bytes=sum(budgets[(dst, x)][0] for x in run),
                port0_bytes=sum(budgets.get((dst, x), (0, 0, 0))[2] for x in range(lo, hi + 1)),
                reflector_count=max(budgets[(dst, x)][1] for x in run),
            ))
    total_p0 = sum(b[2] for b in budgets.values())
    return GroundTruth(s.scenario_id, events, total_p0)


def generate_corpus(
    scenarios: Sequence[AttackScenario], seed: int, config: DetectionConfig = DetectionConfig()
) -> tuple[FlowTable, list[GroundTruth]]:
    """Concatenate independently seeded scenarios (seed + i for scenario i)."""
    tables, truths = [], []
    for i, s in enumerate(scenarios):
        flows, truth = generate_attack(s, seed + i, config)
        tables.append(flows)
        truths.append(truth)
    return FlowTable.concat(tables).sorted(), truths


# -- benign background -------------------------------------------------------


@dataclass(frozen=True)
class BackgroundParams:
    client_count: int = 0
    server_ports: tuple = (53, 443)
    rate_bps: int = 0
    servers_per_client: int = 4
    start_ms: int = 0
    duration_ms: int = 600_000
    # one DNS server sending resolver_rate_bps to a single client
    resolver_rate_bps: int = 0
    # QUIC-like fan-in: quic_servers web servers on 443 to one client
    quic_servers: int = 0
    quic_rate_bps: int = 0
    quic_flows: int = 0
    # clients talking to many NTP servers at a trickle
    ntp_pool_clients: int = 0
    ntp_pool_servers: int = 16


_CLIENT_BASE = 0x64400000  # 100.64.0.0/10


def generate_background(params: BackgroundParams, seed: int, config: DetectionConfig = DetectionConfig()) -> FlowTable:
    """Benign client/server traffic that must never classify as an attack."""
    p = params
    k = config.k_min_reflectors
    if p.servers_per_client >= k:
        raise ValueError(f"servers_per_client must stay below k={k}")
    if p.quic_servers >= k and p.quic_rate_bps:
        raise ValueError(f"quic_servers must stay below k={k}")
    rng = np.random.default_rng(seed)
    wms = config.window_ms
    t0, t1 = p.start_ms, p.start_ms + p.duration_ms
    parts = []

    def emit(src, dst, sport, total_bytes, pkt_size, times):
        n = len(times)
        shares = _apportion(int(total_bytes), rng.lognormal(0, 0.5, n), MIN_IPV4_HEADER) if n else np.zeros(0, np.int64)
        pk = np.maximum(1, shares // pkt_size)
        pk = np.minimum(pk, shares // MIN_IPV4_HEADER)
        parts.append(FlowTable(
            timestamp_ms=times, src_ip=np.broadcast_to(src, n), dst_ip=np.broadcast_to(dst, n),
            ip_protocol=np.full(n, UDP), src_port=np.broadcast_to(sport, n),
            dst_port=rng.integers(1024, 65536, n), packets=pk, bytes=shares,
        ))

    windows = max(1, math.ceil(p.duration_ms / wms))
    if p.client_count and p.server_ports and p.duration_ms > 0:
        per_client = p.rate_bps * p.duration_ms / 8000 / p.client_count
        for c in range(p.client_count):
            client = _CLIENT_BASE + c
            servers = rng.integers(0x01000000, 0x64000000, p.servers_per_client)
            ports = rng.choice(np.array(p.server_ports), p.servers_per_client)
            n = p.servers_per_client * windows
            times = rng.integers(t0, t1, n)
            emit(np.repeat(servers, windows), client, np.repeat(ports, windows), max(per_client, 20 * n), 1200, times)
    if p.resolver_rate_bps:
        times = np.arange(t0, t1, max(1, wms // 20))
        emit(int(rng.integers(0x01000000, 0x64000000)), _CLIENT_BASE - 1, 53,
             max(p.resolver_rate_bps * p.duration_ms // 8000, 20 * len(times)), 512, times)
    if p.quic_servers and p.quic_flows:
        servers = rng.integers(0x01000000, 0x64000000, p.quic_servers)
        src = servers[rng.integers(0, p.quic_servers, p.quic_flows)]
        times = rng.integers(t0, t1, p.quic_flows)
        emit(src, _CLIENT_BASE - 2, 443, max(p.quic_rate_bps * p.duration_ms // 8000, 20 * p.quic_flows), 1350, times)
    if p.ntp_pool_clients:
        for c in range(p.ntp_pool_clients):
            servers = rng.integers(0x01000000, 0x64000000, p.ntp_pool_servers)
            n = p.ntp_pool_servers * windows
            times = rng.integers(t0, t1, n)
            emit(np.repeat(servers, windows), _CLIENT_BASE + 0x100000 + c, 123, 90 * n, 90, times)
    return FlowTable.concat(parts).sorted() if parts else FlowTable()


# -- scenario sampling and files ------------------------------------------------


def random_scenario(rng: np.random.Generator, index: int = 0, window_ms: int = 60_000) -> AttackScenario:
    """A detectable scenario with at least two full windows at target rate."""
    names = [n for n in PROTOCOL_SHAPES]
    name = names[int(rng.integers(len(names)))]
    shape = PROTOCOL_SHAPES[name]
    start = 1_569_196_800_000 + int(rng.integers(0, 14 * 86400)) * 1000
    return AttackScenario(
        protocol=protocol_by_name(name),
        dst_ip=0xC0000000 + (index << 8) + int(rng.integers(1, 255)),
        reflector_count=int(rng.integers(10, 400)),
        start_ms=start,
        duration_ms=int(rng.integers(3, 20)) * window_ms + int(rng.integers(0, window_ms)),
        target_rate_bps=int(rng.uniform(1.2e9, 20e9)),
        pkt_size_mean_bytes=shape["pkt_avg"],
        pkt_size_std_bytes=shape["pkt_std"],
        fragment_share=float(rng.choice([0.0, 0.0, 0.3, 0.6])),
        expect_detection=True,
        scenario_id=f"random-{index}",
    )


def mixed_corpus(
    target_flows: int, seed: int, config: DetectionConfig = DetectionConfig(), attack_share: float = 0.6
) -> tuple[FlowTable, list[GroundTruth]]:
    """Random detectable attacks plus benign background, about ``target_flows`` rows in total."""
    rng = np.random.default_rng(seed)
    tables, truths = [], []
    have, i = 0, 0
    while have < attack_share * target_flows:
        flows, truth = generate_attack(random_scenario(rng, i, config.window_ms), seed + i, config)
        tables.append(flows)
        truths.append(truth)
        have += len(flows)
        i += 1
    windows = 10
    per_client = 4 * windows
    clients = max(0, (target_flows - have) // per_client)
    if clients:
        params = BackgroundParams(client_count=clients, rate_bps=clients * 2_000_000, start_ms=1_569_196_800_000,
                                  duration_ms=windows * config.window_ms)
        tables.append(generate_background(params, seed, config))
    return FlowTable.concat(tables).sorted(), truths


def load_scenarios(path: Union[str, Path]) -> list[AttackScenario]:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc.get("scenarios", [doc])
    return [AttackScenario.from_dict(d) for d in doc]


def save_scenarios(scenarios: Iterable[AttackScenario], path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in scenarios], indent=2) + "\n")
