"""Core domain types shared by every stage of the pipeline.

IPv4 addresses are carried as plain ``int`` values (0 .. 2**32-1) everywhere
inside the package and converted to dotted quads only at file boundaries.
``IPv4`` is the single alias to widen if IPv6 support is ever added.
"""

from __future__ import annotations

import dataclasses
import ipaddress
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

IPv4 = int

UDP = 17
MIN_IPV4_HEADER = 20


def parse_ip(text: str) -> IPv4:
    return int(ipaddress.IPv4Address(text))


def format_ip(value: IPv4) -> str:
    return str(ipaddress.IPv4Address(int(value)))


@dataclass(frozen=True, slots=True)
class FlowRecord:
    """One sampled, unidirectional flow observation as exported."""

    timestamp_ms: int
    src_ip: IPv4
    dst_ip: IPv4
    ip_protocol: int
    src_port: int
    dst_port: int
    packets: int
    bytes: int


@dataclass(frozen=True, slots=True)
class AmplificationProtocol:
    name: str
    src_port: int

    def __str__(self) -> str:
        return self.name


PORT0 = AmplificationProtocol("PORT0", 0)

# Well-known reflector source ports, plus the port-0 pseudo protocol that
# IP fragments without a transport header are exported under.
REGISTRY: tuple[AmplificationProtocol, ...] = (
    PORT0,
    AmplificationProtocol("Chargen", 19),
    AmplificationProtocol("DNS", 53),
    AmplificationProtocol("RPC", 111),
    AmplificationProtocol("NTP", 123),
    AmplificationProtocol("SNMP", 161),
    AmplificationProtocol("CLDAP", 389),
    AmplificationProtocol("OpenVPN", 1194),
    AmplificationProtocol("SSDP", 1900),
    AmplificationProtocol("ARMS", 3283),
    AmplificationProtocol("WS-Discovery", 3702),
    AmplificationProtocol("Device-Discovery", 10001),
    AmplificationProtocol("Memcached", 11211),
)

_BY_PORT = {p.src_port: p for p in REGISTRY}
_BY_NAME = {p.name: p for p in REGISTRY}

# Dense port -> registry index table used by the vectorised window code.
PORT_INDEX = np.full(65536, -1, dtype=np.int16)
for _i, _p in enumerate(REGISTRY):
    PORT_INDEX[_p.src_port] = _i
PORT0_INDEX = 0


def lookup_protocol(src_port: int) -> Optional[AmplificationProtocol]:
    return _BY_PORT.get(src_port)


def protocol_by_name(name: str) -> AmplificationProtocol:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown amplification protocol {name!r}") from None


@dataclass(frozen=True)
class DetectionConfig:
    """Classifier thresholds and windowing parameters.

    A bucket is an attack when it has at least ``k_min_reflectors`` distinct
    sources and carries strictly more than ``t_rate_bps`` after sampling
    correction.
    """

    k_min_reflectors: int = 10
    t_rate_bps: int = 1_000_000_000
    window_seconds: int = 60
    sampling_rate: int = 1
    hysteresis_windows: int = 0

    def __post_init__(self):
        if self.k_min_reflectors < 2:
            raise ValueError("k_min_reflectors must be >= 2")
        if self.t_rate_bps <= 0:
            raise ValueError("t_rate_bps must be > 0")
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be > 0")
        if self.sampling_rate < 1:
            raise ValueError("sampling_rate must be >= 1")
        if self.hysteresis_windows < 0:
            raise ValueError("hysteresis_windows must be >= 0")

    @property
    def window_ms(self) -> int:
        return self.window_seconds * 1000

    def replace(self, **changes) -> "DetectionConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(DetectionConfig))


def parse_config_text(text: str) -> dict[str, int]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"config line {lineno}: expected key=value")
        if key not in CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = int(value.strip().replace("_", ""))
        except ValueError:
            raise ValueError(f"config line {lineno}: {key} must be an integer") from None
    return values


def load_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Optional[int]]] = None) -> DetectionConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return DetectionConfig(**values)


def scale_sampled(flow: FlowRecord, config: DetectionConfig) -> FlowRecord:
    rate = config.sampling_rate
    if rate == 1:
        return flow
    return dataclasses.replace(flow, packets=flow.packets * rate, bytes=flow.bytes * rate)
