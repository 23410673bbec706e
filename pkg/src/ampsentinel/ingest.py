"""Flow-CSV ingest, the columnar flow table and tumbling-window assignment.

Line format::

    timestamp_ms,src_ip,dst_ip,ip_protocol,src_port,dst_port,packets,bytes

``#`` lines are comments, except ``#sampling_rate=N`` which carries the
exporter's 1-in-N sampling rate.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import _fastcsv
from .model import (
    MIN_IPV4_HEADER,
    PORT_INDEX,
    UDP,
    DetectionConfig,
    FlowRecord,
    parse_ip,
)

COLUMNS = ("timestamp_ms", "src_ip", "dst_ip", "ip_protocol", "src_port", "dst_port", "packets", "bytes")
HEADER = ",".join(COLUMNS)
_MAX_COUNTER = 10**15 - 1
_DIRECTIVE = re.compile(r"^#\s*sampling_rate\s*=\s*(\d+)\s*$")


@dataclass(frozen=True)
class ParseError:
    line: int
    reason: str


class ParseFailure(ValueError):
    """Raised by strict readers on the first malformed line."""

    def __init__(self, error: ParseError):
        super().__init__(f"line {error.line}: {error.reason}")
        self.error = error


def _uint(text: str, name: str) -> int:
    if not (text.isascii() and text.isdigit()):
        raise ValueError(f"{name} is not a non-negative integer: {text!r}")
    value = int(text)
    if value > _MAX_COUNTER:
        raise ValueError(f"{name} out of range: {text}")
    return value


def _ip(text: str, name: str) -> int:
    try:
        return parse_ip(text)
    except ValueError:
        raise ValueError(f"invalid IPv4 address in {name}: {text!r}") from None


def parse_line(text: str) -> FlowRecord:
    """Parse one data line; raises ``ValueError`` with a human-readable reason."""
    fields = text.split(",")
    if len(fields) != len(COLUMNS):
        raise ValueError(f"expected {len(COLUMNS)} fields, got {len(fields)}")
    ts = _uint(fields[0], "timestamp_ms")
    src = _ip(fields[1], "src_ip")
    dst = _ip(fields[2], "dst_ip")
    proto, sport, dport, pkts, nbytes = (_uint(v, n) for v, n in zip(fields[3:], COLUMNS[3:]))
    if proto > 255:
        raise ValueError(f"ip_protocol out of range 0-255: {proto}")
    for name, port in (("src_port", sport), ("dst_port", dport)):
        if port > 65535:
            raise ValueError(f"{name} out of range 0-65535: {port}")
    if pkts == 0 and nbytes > 0:
        raise ValueError("bytes reported for a flow with 0 packets")
    if nbytes < MIN_IPV4_HEADER * pkts:
        raise ValueError(f"{nbytes} bytes is below the {MIN_IPV4_HEADER}-byte minimum for {pkts} packets")
    return FlowRecord(ts, src, dst, proto, sport, dport, pkts, nbytes)


def _looks_numeric(first_field: str) -> bool:
    return first_field.strip().lstrip("+-").isdigit()


class FlowTable:
    """Columnar store of flow records (one int64 numpy array per field).

    Iterating yields :class:`FlowRecord` objects, so a table can stand in
    wherever a sequence of records is expected.
    """

    __slots__ = COLUMNS

    def __init__(self, **columns):
        n = None
        for name in COLUMNS:
            col = np.ascontiguousarray(columns.get(name, ()), dtype=np.int64)
            if n is None:
                n = len(col)
            elif len(col) != n:
                raise ValueError(f"column {name} has length {len(col)}, expected {n}")
            setattr(self, name, col)

    @classmethod
    def empty(cls) -> "FlowTable":
        return cls()

    @classmethod
    def from_records(cls, records: Iterable[FlowRecord]) -> "FlowTable":
        rows = [tuple(getattr(r, c) for c in COLUMNS) for r in records]
        if not rows:
            return cls()
        arr = np.array(rows, dtype=np.int64)
        return cls(**{c: arr[:, i] for i, c in enumerate(COLUMNS)})

    @classmethod
    def concat(cls, tables: Sequence["FlowTable"]) -> "FlowTable":
        tables = list(tables)
        if not tables:
            return cls()
        return cls(**{c: np.concatenate([getattr(t, c) for t in tables]) for c in COLUMNS})

    def columns(self) -> dict[str, np.ndarray]:
        return {c: getattr(self, c) for c in COLUMNS}

    def __len__(self) -> int:
        return len(self.timestamp_ms)

    def __iter__(self) -> Iterator[FlowRecord]:
        cols = [getattr(self, c).tolist() for c in COLUMNS]
        for row in zip(*cols):
            yield FlowRecord(*row)

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            return FlowRecord(*(int(getattr(self, c)[index]) for c in COLUMNS))
        return FlowTable(**{c: getattr(self, c)[index] for c in COLUMNS})

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlowTable):
            return NotImplemented
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in COLUMNS)

    def __repr__(self) -> str:
        return f"FlowTable({len(self)} flows)"

    def scaled(self, sampling_rate: int) -> "FlowTable":
        if sampling_rate == 1:
            return self
        cols = self.columns()
        cols["packets"] = cols["packets"] * sampling_rate
        cols["bytes"] = cols["bytes"] * sampling_rate
        return FlowTable(**cols)

    def sorted(self) -> "FlowTable":
        """Canonical order: by timestamp, then every other column."""
        order = np.lexsort([getattr(self, c) for c in reversed(COLUMNS)])
        return self[order]

    def write_csv(self, out: Union[str, Path, IO[str]], header: bool = True, sampling_rate: Optional[int] = None) -> None:
        if isinstance(out, (str, Path)):
            with open(out, "w", newline="") as fh:
                self.write_csv(fh, header=header, sampling_rate=sampling_rate)
            return
        if sampling_rate is not None:
            out.write(f"#sampling_rate={sampling_rate}\n")
        if header:
            out.write(HEADER + "\n")
        src = _format_ips(self.src_ip)
        dst = _format_ips(self.dst_ip)
        rows = zip(
            self.timestamp_ms.tolist(), src, dst, self.ip_protocol.tolist(), self.src_port.tolist(),
            self.dst_port.tolist(), self.packets.tolist(), self.bytes.tolist(),
        )
        chunk = []
        for row in rows:
            chunk.append("%d,%s,%s,%d,%d,%d,%d,%d\n" % row)
            if len(chunk) >= 65536:
                out.write("".join(chunk))
                chunk.clear()
        out.write("".join(chunk))


def _format_ips(values: np.ndarray) -> list[str]:
    cache: dict[int, str] = {}
    out = []
    for v in values.tolist():
        s = cache.get(v)
        if s is None:
            s = cache[v] = "%d.%d.%d.%d" % (v >> 24, (v >> 16) & 255, (v >> 8) & 255, v & 255)
        out.append(s)
    return out


@dataclass
class ParseResult:
    flows: FlowTable
    errors: list[ParseError]
    sampling_rate: Optional[int] = None
    header: bool = False
    lines: int = 0

    def __iter__(self):
        # allows ``flows, errors = parse_flows(...)``
        yield self.flows
        yield self.errors


def _read_bytes(stream) -> bytes:
    if isinstance(stream, bytes):
        return stream
    if isinstance(stream, str):
        return stream.encode("utf-8")
    data = stream.read()
    return data.encode("utf-8") if isinstance(data, str) else data


def parse_flows(stream: Union[bytes, str, IO]) -> ParseResult:
    """Parse flow-CSV text into a :class:`FlowTable` plus per-line errors.

    Bad lines never abort parsing. The compiled scanner handles well-formed
    lines; every other line is re-examined by :func:`parse_line`.
    """
    data = _read_bytes(stream)
    if not data:
        return ParseResult(FlowTable(), [])
    cols, status, starts, nlines = _fastcsv.scan_buffer(data)
    keep = status == _fastcsv.OK
    errors: list[ParseError] = []
    sampling_rate = None
    header = False
    seen_data = False
    extra: list[tuple[int, FlowRecord]] = []

    irregular = np.flatnonzero(~keep)
    first_ok = int(np.argmax(keep)) if keep.any() else nlines
    for idx in irregular.tolist():
        lo = int(starts[idx])
        hi = int(starts[idx + 1]) if idx + 1 < nlines else len(data)
        text = data[lo:hi].decode("utf-8", errors="replace").rstrip("\n").rstrip("\r")
        if status[idx] == _fastcsv.COMMENT or text.startswith("#"):
            m = _DIRECTIVE.match(text)
            if m:
                sampling_rate = int(m.group(1))
                if sampling_rate < 1:
                    errors.append(ParseError(idx + 1, "sampling_rate directive must be >= 1"))
                    sampling_rate = None
            continue
        if not text.strip():
            continue
        if not seen_data and idx < first_ok and not _looks_numeric(text.split(",", 1)[0]):
            header = True
            seen_data = True
            continue
        seen_data = True
        try:
            extra.append((idx, parse_line(text)))
        except ValueError as exc:
            errors.append(ParseError(idx + 1, str(exc)))

    table = FlowTable(**{c: col[:nlines][keep] for c, col in zip(COLUMNS, cols)})
    if extra:
        # re-insert lines the scanner deferred, keeping file order
        rows = np.flatnonzero(keep)
        positions = np.array([i for i, _ in extra])
        merged_pos = np.concatenate([rows, positions])
        order = np.argsort(merged_pos, kind="stable")
        table = FlowTable.concat([table, FlowTable.from_records(r for _, r in extra)])[order]
    return ParseResult(table, errors, sampling_rate, header, nlines)


def read_flows(path: Union[str, Path]) -> ParseResult:
    return parse_flows(Path(path).read_bytes())


# -- windowing ---------------------------------------------------------------


class WindowKey(NamedTuple):
    window_index: int
    dst_ip: int
    src_port: int


def window_index(timestamp_ms, window_seconds: int):
    return timestamp_ms // (window_seconds * 1000)


@dataclass
class DropCounts:
    """Flows left out of windowing, by reason."""

    non_udp_flows: int = 0
    non_udp_packets: int = 0
    non_udp_bytes: int = 0
    unregistered_flows: int = 0
    unregistered_packets: int = 0
    unregistered_bytes: int = 0

    @property
    def flows(self) -> int:
        return self.non_udp_flows + self.unregistered_flows

    @property
    def packets(self) -> int:
        return self.non_udp_packets + self.unregistered_packets

    @property
    def bytes(self) -> int:
        return self.non_udp_bytes + self.unregistered_bytes


@dataclass
class WindowAssignment:
    buckets: dict[WindowKey, list[FlowRecord]] = field(default_factory=dict)
    dropped: DropCounts = field(default_factory=DropCounts)


def assign_windows(flows: Iterable[FlowRecord], config: DetectionConfig) -> WindowAssignment:
    """Bucket UDP flows with a registered source port by (window, dst, port)."""
    buckets: dict[WindowKey, list[FlowRecord]] = defaultdict(list)
    dropped = DropCounts()
    for flow in flows:
        if flow.ip_protocol != UDP:
            dropped.non_udp_flows += 1
            dropped.non_udp_packets += flow.packets
            dropped.non_udp_bytes += flow.bytes
        elif PORT_INDEX[flow.src_port] < 0:
            dropped.unregistered_flows += 1
            dropped.unregistered_packets += flow.packets
            dropped.unregistered_bytes += flow.bytes
        else:
            key = WindowKey(window_index(flow.timestamp_ms, config.window_seconds), flow.dst_ip, flow.src_port)
            buckets[key].append(flow)
    return WindowAssignment(dict(buckets), dropped)


def drop_counts(table: FlowTable) -> tuple[np.ndarray, DropCounts]:
    """Vectorised filter; returns the retained-row mask and what was dropped."""
    udp = table.ip_protocol == UDP
    registered = PORT_INDEX[table.src_port] >= 0
    keep = udp & registered
    non_udp = ~udp
    unreg = udp & ~registered
    dropped = DropCounts(
        int(non_udp.sum()), int(table.packets[non_udp].sum()), int(table.bytes[non_udp].sum()),
        int(unreg.sum()), int(table.packets[unreg].sum()), int(table.bytes[unreg].sum()),
    )
    return keep, dropped
