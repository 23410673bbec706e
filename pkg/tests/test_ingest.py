import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from ampsentinel.ingest import (
    HEADER, FlowTable, WindowKey, assign_windows, drop_counts, parse_flows, parse_line, read_flows, window_index,
)
from ampsentinel.model import DetectionConfig, FlowRecord, format_ip

from conftest import flow


def test_parse_line_valid():
    r = parse_line("1569196800000,1.2.3.4,10.0.0.1,17,123,4444,10,4800")
    assert r == FlowRecord(1569196800000, 0x01020304, 0x0A000001, 17, 123, 4444, 10, 4800)


@pytest.mark.parametrize("line,fragment", [
    ("1,1.2.3.4,10.0.0.1,17,123,4444,10", "expected 8 fields, got 7"),
    ("x,1.2.3.4,10.0.0.1,17,123,4444,10,4800", "timestamp_ms is not a non-negative integer"),
    ("1,1.2.3.256,10.0.0.1,17,123,4444,10,4800", "invalid IPv4 address in src_ip"),
    ("1,1.2.3.4,10.0.0,17,123,4444,10,4800", "invalid IPv4 address in dst_ip"),
    ("1,1.2.3.4,10.0.0.1,300,123,4444,10,4800", "ip_protocol out of range"),
    ("1,1.2.3.4,10.0.0.1,17,70000,4444,10,4800", "src_port out of range"),
    ("1,1.2.3.4,10.0.0.1,17,123,4444,-1,4800", "packets is not a non-negative integer"),
    ("1,1.2.3.4,10.0.0.1,17,123,4444,0,100", "0 packets"),
    ("1,1.2.3.4,10.0.0.1,17,123,4444,10,199", "below the 20-byte minimum"),
])
def test_parse_line_errors(line, fragment):
    with pytest.raises(ValueError, match=fragment):
        parse_line(line)


def test_parse_flows_reports_line_numbers_and_continues():
    text = "\n".join([
        HEADER,
        "1,1.2.3.4,10.0.0.1,17,123,4444,10,4800",
        "garbage",
        "# comment",
        "2,1.2.3.5,10.0.0.1,17,123,4444,10,4800",
        "3,1.2.3.5,10.0.0.1,17,123,4444,0,5",
    ]) + "\n"
    res = parse_flows(text)
    assert res.header
    assert len(res.flows) == 2
    assert [e.line for e in res.errors] == [3, 6]
    flows, errors = res
    assert flows[1].timestamp_ms == 2


def test_sampling_directive_and_crlf():
    text = "#sampling_rate=100\r\n1,1.2.3.4,10.0.0.1,17,123,4444,10,4800\r\n"
    res = parse_flows(text)
    assert res.sampling_rate == 100
    assert res.errors == []
    assert res.flows[0].bytes == 4800


def test_empty_and_zero_flow():
    assert len(parse_flows(b"").flows) == 0
    res = parse_flows("1,1.2.3.4,10.0.0.1,17,123,4444,0,0\n")
    assert res.errors == [] and res.flows[0].packets == 0


def test_leading_zero_octet_goes_through_reference_parser():
    line = "1,01.2.3.4,10.0.0.1,17,123,4444,10,4800\n"
    res = parse_flows(line)
    try:
        expected = [parse_line(line.strip())]
    except ValueError:
        expected = []
    assert list(res.flows) == expected
    assert len(res.errors) == 1 - len(expected)


def test_write_read_round_trip(tmp_path):
    table = FlowTable.from_records([flow(5, 1, 2, 53, 3, 900), flow(6, 2**32 - 1, 7, 0, 1, 20)])
    path = tmp_path / "f.csv"
    table.write_csv(path, sampling_rate=10)
    res = read_flows(path)
    assert res.flows == table
    assert res.sampling_rate == 10 and res.header


# -- fast scanner versus reference parser ------------------------------------------

TOKENS = ["", "0", "7", "00", "01", "255", "256", "65535", "65536", "-1", "+3", " 5", "abc", "1.2.3.4",
          "999999999999999", "9999999999999999", "1e3", "0.0.0.0", "255.255.255.255", "1.2.3", "1..2.3"]

valid_line = st.builds(
    lambda ts, s, d, proto, sp, dp, p, extra: f"{ts},{format_ip(s)},{format_ip(d)},{proto},{sp},{dp},{p},{20 * p + extra}",
    st.integers(0, 2**45), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.sampled_from([17, 6, 1, 255]),
    st.integers(0, 65535), st.integers(0, 65535), st.integers(0, 10**6), st.integers(0, 10**6),
)
junk_line = st.lists(st.sampled_from(TOKENS), min_size=6, max_size=9).map(",".join)
comment = st.sampled_from(["# note", "#sampling_rate=4", "", "\r"])
lines = st.lists(st.one_of(valid_line, valid_line, junk_line, comment), max_size=30)


def reference_parse(text):
    records, errors, header, seen = [], [], False, False
    for no, raw in enumerate(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"), 1):
        line = raw.rstrip("\r")
        if line.startswith("#") or not line.strip():
            continue
        if not seen and not line.split(",", 1)[0].strip().lstrip("+-").isdigit():
            header = seen = True
            continue
        seen = True
        try:
            records.append(parse_line(line))
        except ValueError as exc:
            errors.append((no, str(exc)))
    return records, errors, header


@settings(max_examples=300, suppress_health_check=[HealthCheck.too_slow])
@given(lines, st.booleans(), st.booleans())
def test_fast_path_matches_reference(body, with_header, trailing_newline):
    text = "\n".join(([HEADER] if with_header else []) + body)
    if trailing_newline:
        text += "\n"
    records, errors, header = reference_parse(text)
    res = parse_flows(text)
    assert list(res.flows) == records
    assert [(e.line, e.reason) for e in res.errors] == errors
    assert res.header == header


# -- windowing ------------------------------------------------------------------------


@given(st.integers(0, 2**44), st.integers(1, 600))
def test_window_is_half_open(ts, w):
    idx = window_index(ts, w)
    assert idx * w * 1000 <= ts < (idx + 1) * w * 1000


def test_window_boundary():
    assert window_index(59_999, 60) == 0
    assert window_index(60_000, 60) == 1


def test_assign_windows_drops_and_keys():
    flows = [
        flow(0, 1, 9, 123, 1, 100),
        flow(60_000, 1, 9, 123, 1, 100),
        flow(1, 1, 9, 443, 1, 100),
        flow(2, 1, 9, 123, 1, 100, proto=6),
        flow(3, 2, 9, 0, 1, 60),
    ]
    a = assign_windows(flows, DetectionConfig())
    assert set(a.buckets) == {WindowKey(0, 9, 123), WindowKey(1, 9, 123), WindowKey(0, 9, 0)}
    assert (a.dropped.non_udp_flows, a.dropped.unregistered_flows) == (1, 1)
    assert a.dropped.bytes == 200

    keep, dropped = drop_counts(FlowTable.from_records(flows))
    assert keep.tolist() == [True, True, False, False, True]
    assert dropped == a.dropped


def test_scaled_table():
    t = FlowTable.from_records([flow(0, 1, 2, 53, 2, 100)]).scaled(50)
    assert (t.packets[0], t.bytes[0]) == (100, 5000)
