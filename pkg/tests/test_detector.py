import dataclasses

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from ampsentinel.detector import (
    AttackEvent, Port0Aggregate, attribute_port0, classify_window, coalesce_events, detect, group_daily,
    read_events, write_events_csv, write_events_jsonl, write_reflectors_csv,
)
from ampsentinel.ingest import FlowTable, WindowKey
from ampsentinel.model import PORT0, DetectionConfig, protocol_by_name

from conftest import T0, flow, oracle_is_attack, reference_detect

NTP = protocol_by_name("NTP")
DNS = protocol_by_name("DNS")
BYTE_FLOOR = 1_000_000_000 * 60 // 8  # bytes at exactly 1 Gbps over a minute


def bucket(n_sources, total_bytes, port=123, dst=99, w=0):
    share, rest = divmod(total_bytes, n_sources)
    return [flow(w * 60_000 + i, 1000 + i, dst, port, 10, share + (rest if i == 0 else 0)) for i in range(n_sources)]


@pytest.mark.parametrize("n,nbytes,expected", [
    (10, BYTE_FLOOR + 1, True),   # 1 Gbps + 8 bits over the window
    (10, BYTE_FLOOR, False),      # exactly 1 Gbps is not above t
    (9, 10 * BYTE_FLOOR, False),  # one reflector short
    (400, 2 * BYTE_FLOOR, True),
])
def test_classify_boundaries(config, n, nbytes, expected):
    flows = bucket(n, nbytes)
    obs = classify_window(WindowKey(0, 99, 123), flows, config)
    assert (obs is not None) == expected == oracle_is_attack(flows, config)


def test_one_bps_over_threshold(config):
    # 1 Gbps + 1 bps needs 60 extra bits: 8 extra bytes is the smallest step above
    flows = bucket(10, BYTE_FLOOR + 8)
    obs = classify_window(WindowKey(0, 99, 123), flows, config)
    assert obs.rate_bps == 1_000_000_002  # ceil((8e9*60/8*8 + 64) / 60)


def test_duplicate_sources_count_once(config):
    flows = bucket(9, 2 * BYTE_FLOOR) + [flow(5, 1000, 99, 123, 10, 400)]
    assert classify_window(WindowKey(0, 99, 123), flows, config) is None


def test_unregistered_port_never_classifies(config):
    assert classify_window(WindowKey(0, 99, 443), bucket(50, 5 * BYTE_FLOOR, port=443), config) is None


def test_observation_fields(config):
    flows = bucket(20, 3 * BYTE_FLOOR)
    obs = classify_window(WindowKey(4, 99, 123), flows, config)
    assert obs.protocol == NTP
    assert obs.reflector_count == 20
    assert obs.rate_bps == 3_000_000_000
    assert obs.rate_pps == pytest.approx(200 / 60)


def _obs(w, dst=99, protocol=NTP, nbytes=2 * BYTE_FLOOR, config=DetectionConfig()):
    key = WindowKey(w, dst, protocol.src_port)
    return classify_window(key, bucket(10, nbytes, protocol.src_port, dst, w), config)


def test_coalesce_contiguous_and_gap():
    c = DetectionConfig()
    events = coalesce_events([_obs(1), _obs(2), _obs(4)], c)
    assert [(e.start_ms, e.end_ms) for e in events] == [(60_000, 179_999), (240_000, 299_999)]
    merged = coalesce_events([_obs(1), _obs(2), _obs(4)], c.replace(hysteresis_windows=1))
    assert len(merged) == 1
    e = merged[0]
    assert (e.start_ms, e.end_ms) == (60_000, 299_999)
    # averaged over active windows only
    assert e.avg_rate_bps == 2_000_000_000


def test_coalesce_separates_protocols_and_targets():
    events = coalesce_events([_obs(1), _obs(1, protocol=DNS), _obs(1, dst=100)])
    assert len(events) == 3
    assert [e.sort_key()[:2] for e in events] == [(99, "DNS"), (99, "NTP"), (100, "NTP")]


def test_packet_size_moments():
    c = DetectionConfig()
    flows = [flow(i, 1000 + i, 99, 123, 100, 100 * (400 if i % 2 else 600)) for i in range(20)]
    flows[0] = flow(0, 1000, 99, 123, 100, 60_000 + 2 * BYTE_FLOOR)
    obs = classify_window(WindowKey(0, 99, 123), flows, c)
    e = coalesce_events([obs], c)[0]
    sizes = [f.bytes / f.packets for f in flows]
    weights = [f.packets for f in flows]
    mean = sum(s * w for s, w in zip(sizes, weights)) / sum(weights)
    var = sum(w * (s - mean) ** 2 for s, w in zip(sizes, weights)) / sum(weights)
    assert e.mean_packet_size_bytes == pytest.approx(mean)
    assert e.packet_size_std_bytes == pytest.approx(var ** 0.5)


# -- port-0 attribution ---------------------------------------------------------------


def _event(dst, protocol, w0, w1):
    return AttackEvent(dst, protocol, w0 * 60_000, (w1 + 1) * 60_000 - 1, 2, 1.0, 2, 10, 1, 10, 1.0, 0.0)


def test_port0_single_active_event():
    events = [_event(1, NTP, 0, 2)]
    res = attribute_port0(events, [Port0Aggregate(1, 1, 500), Port0Aggregate(5, 1, 70), Port0Aggregate(1, 2, 9)])
    assert res.events[0].port0_surplus_bytes == 500
    assert (res.attributed_bytes, res.ambiguous_bytes, res.orphan_bytes) == (500, 0, 79)


def test_port0_two_concurrent_events_is_ambiguous():
    events = [_event(1, NTP, 0, 2), _event(1, DNS, 1, 3)]
    res = attribute_port0(events, [Port0Aggregate(0, 1, 5), Port0Aggregate(2, 1, 7)])
    assert [e.port0_surplus_bytes for e in res.events] == [5, 0]
    assert res.ambiguous_bytes == 7


def test_port0_events_are_not_attribution_targets():
    events = [_event(1, PORT0, 0, 2)]
    res = attribute_port0(events, [Port0Aggregate(0, 1, 5)])
    assert res.orphan_bytes == 5


# -- columnar pipeline versus record-level reference -----------------------------------

PORTS = [0, 19, 53, 123, 443, 11211]


@st.composite
def small_corpus(draw):
    n_dst = draw(st.integers(1, 3))
    flows = []
    for _ in range(draw(st.integers(0, 12))):
        dst = draw(st.integers(0, n_dst - 1)) + 7
        port = draw(st.sampled_from(PORTS))
        w = draw(st.integers(0, 6))
        n_src = draw(st.integers(1, 6))
        for i in range(n_src):
            pk = draw(st.integers(1, 50))
            nb = 20 * pk + draw(st.integers(0, 4_000_000))
            proto = 17 if draw(st.integers(0, 9)) else 6
            flows.append(flow(T0 + w * 60_000 + draw(st.integers(0, 59_999)), draw(st.integers(1, 8)), dst, port, pk,
                              nb, proto=proto))
    return flows


corpus_config = st.builds(
    DetectionConfig,
    k_min_reflectors=st.integers(2, 5),
    t_rate_bps=st.sampled_from([1_000_000, 100_000, 1_500_000]),
    window_seconds=st.sampled_from([60, 30, 120]),
    sampling_rate=st.sampled_from([1, 3]),
    hysteresis_windows=st.integers(0, 2),
)


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(small_corpus(), corpus_config, st.sampled_from([1, 3]))
def test_columnar_matches_reference(flows, config, shards):
    ref = reference_detect(flows, config)
    table = FlowTable.from_records(flows).scaled(config.sampling_rate)
    got = detect(table, config, shards=shards)
    want = sorted(ref.events, key=AttackEvent.sort_key)
    # the size spread is a float sum whose order differs between routes
    strip = lambda e: dataclasses.replace(e, packet_size_std_bytes=0.0)
    assert [strip(e) for e in got.events] == [strip(e) for e in want]
    for g, w in zip(got.events, want):
        assert g.packet_size_std_bytes == pytest.approx(w.packet_size_std_bytes, rel=1e-9, abs=1e-9)
        assert g.reflector_ips == w.reflector_ips
    assert (got.attribution.attributed_bytes, got.attribution.ambiguous_bytes, got.attribution.orphan_bytes) == (
        ref.attributed_bytes, ref.ambiguous_bytes, ref.orphan_bytes)


@settings(max_examples=50, deadline=None)
@given(small_corpus())
def test_raising_threshold_never_adds_observations(flows):
    table = FlowTable.from_records(flows)
    low = detect(table, DetectionConfig(k_min_reflectors=2, t_rate_bps=100_000))
    high = detect(table, DetectionConfig(k_min_reflectors=3, t_rate_bps=200_000))
    assert len(high.observations.dst_ip) <= len(low.observations.dst_ip)


def test_detect_reports_drops():
    flows = bucket(12, 2 * BYTE_FLOOR) + [flow(1, 5, 99, 443, 1, 100), flow(2, 5, 99, 123, 1, 100, proto=6)]
    res = detect(FlowTable.from_records(flows))
    assert len(res.events) == 1
    assert res.dropped.flows == 2
    assert res.flows_in == 14


def test_port0_only_attack_is_kept_apart():
    flows = bucket(12, 2 * BYTE_FLOOR, port=0)
    res = detect(FlowTable.from_records(flows))
    assert res.events == []
    assert len(res.port0_events) == 1
    assert res.attribution.orphan_bytes == 2 * BYTE_FLOOR


# -- grouping and files -------------------------------------------------------------------


def test_group_daily():
    day = 86_400_000
    events = [_event(1, NTP, 0, 1), _event(1, NTP, 5, 6), _event(1, NTP, day // 60_000, day // 60_000),
              _event(1, DNS, 0, 0)]
    groups = group_daily(events)
    assert [(g.protocol.name, g.event_count) for g in groups] == [("DNS", 1), ("NTP", 2), ("NTP", 1)]


def test_event_files_round_trip(tmp_path):
    flows = bucket(12, 2 * BYTE_FLOOR) + bucket(15, 3 * BYTE_FLOOR, port=53, dst=3, w=2)
    flows += [flow(10, 7, 99, 0, 5, 700)]
    events = detect(FlowTable.from_records(flows)).events
    write_events_csv(events, tmp_path / "e.csv")
    write_events_jsonl(events, tmp_path / "e.jsonl")
    write_reflectors_csv(events, tmp_path / "r.csv")
    for name in ("e.csv", "e.jsonl"):
        back = read_events(tmp_path / name, tmp_path / "r.csv")
        assert [dataclasses.replace(e, peak_rate_pps=round(e.peak_rate_pps, 6)) for e in events] == back
        assert [e.reflector_ips for e in back] == [e.reflector_ips for e in events]
    assert events[1].port0_surplus_bytes == 700


def test_event_csv_rejects_missing_columns(tmp_path):
    (tmp_path / "e.csv").write_text("dst_ip,protocol\n1.2.3.4,NTP\n")
    with pytest.raises(ValueError, match="missing event columns"):
        read_events(tmp_path / "e.csv")
