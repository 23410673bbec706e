import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ampsentinel.detector import detect
from ampsentinel.model import DetectionConfig, protocol_by_name
from ampsentinel.synth import (
    PROTOCOL_SHAPES, AttackScenario, BackgroundParams, GroundTruth, InfeasibleScenario, Rotation, cell_budget,
    generate_attack, generate_background, generate_corpus, load_scenarios, random_scenario, save_scenarios,
)

from conftest import T0

NTP = protocol_by_name("NTP")


def scenario(**kw):
    base = dict(protocol=NTP, dst_ip=0xC0000001, reflector_count=50, start_ms=T0, duration_ms=5 * 60_000,
                target_rate_bps=3_000_000_000, pkt_size_mean_bytes=481.1, pkt_size_std_bytes=10)
    base.update(kw)
    return AttackScenario(**base)


def test_generation_is_deterministic():
    a, ta = generate_attack(scenario(), seed=3)
    b, tb = generate_attack(scenario(), seed=3)
    c, _ = generate_attack(scenario(), seed=4)
    assert a == b and ta == tb
    assert not a == c


def test_flows_respect_format_invariants():
    flows, _ = generate_attack(scenario(fragment_share=0.4, pkt_size_std_bytes=200), seed=1)
    assert (flows.bytes >= 20 * flows.packets).all()
    assert (flows.packets >= 1).all()
    assert set(np.unique(flows.src_port)) == {0, 123}
    assert (np.diff(flows.timestamp_ms) >= 0).all()


def test_truth_for_aligned_scenario():
    _, truth = generate_attack(scenario(), seed=0)
    (ev,) = truth.events
    w0 = T0 // 60_000
    assert (ev.start_window, ev.end_window) == (w0, w0 + 4)
    assert ev.peak_rate_bps == 3_000_000_000
    assert ev.total_bytes == 5 * 3_000_000_000 * 60 // 8


def test_cell_budget_partial_window():
    nbytes, active, p0 = cell_budget(scenario(), T0 // 60_000, 30_000, 60_000)
    assert nbytes == 3_000_000_000 * 30_000 // 8000
    assert active == 50
    assert p0 == 0


def test_fragment_share_budget():
    s = scenario(fragment_share=0.6)
    nbytes, _, p0 = cell_budget(s, T0 // 60_000, 60_000, 60_000)
    assert p0 == int(nbytes * 0.6 / 0.4)


def test_bytes_match_budget_exactly():
    flows, truth = generate_attack(scenario(fragment_share=0.3), seed=2)
    ident = flows.src_port != 0
    assert int(flows.bytes[ident].sum()) == sum(e.total_bytes for e in truth.events)
    assert int(flows.bytes[~ident].sum()) == truth.port0_bytes


@pytest.mark.parametrize("kw", [dict(target_rate_bps=900_000_000), dict(reflector_count=9)])
def test_infeasible_when_expected_detection(kw):
    with pytest.raises(InfeasibleScenario):
        generate_attack(scenario(expect_detection=True, **kw), seed=0)


def test_infeasible_without_expectation_yields_empty_truth():
    _, truth = generate_attack(scenario(target_rate_bps=900_000_000), seed=0)
    assert truth.events == []


def test_rate_profile_dip_creates_two_truth_events():
    s = scenario(duration_ms=6 * 60_000, rate_profile=(1, 1, 0.2, 1, 1, 1))
    _, truth = generate_attack(s, seed=0)
    assert len(truth.events) == 2
    _, merged = generate_attack(s, seed=0, config=DetectionConfig(hysteresis_windows=1))
    assert len(merged.events) == 1


def test_rotation_moves_target():
    s = scenario(duration_ms=4 * 60_000, rotation=Rotation("192.0.0.0/30", 120_000))
    flows, truth = generate_attack(s, seed=0)
    assert {e.dst_ip for e in truth.events} == {0xC0000001, 0xC0000002}
    assert set(np.unique(flows.dst_ip)) == {0xC0000001, 0xC0000002}


def test_rotation_requires_prefix_membership():
    with pytest.raises(ValueError):
        scenario(rotation=Rotation("10.0.0.0/8", 60_000))


@pytest.mark.parametrize("kw", [
    dict(reflector_count=0), dict(target_rate_bps=0), dict(fragment_share=1.0), dict(duration_ms=0),
    dict(pkt_size_mean_bytes=10),
])
def test_scenario_validation(kw):
    with pytest.raises(ValueError):
        scenario(**kw)


def test_scenario_file_round_trip(tmp_path):
    items = [scenario(rotation=Rotation("192.0.0.0/24", 60_000), rate_profile=(1, 0.5), scenario_id="x"),
             random_scenario(np.random.default_rng(0), 3)]
    save_scenarios(items, tmp_path / "s.json")
    assert load_scenarios(tmp_path / "s.json") == items


def test_ground_truth_dict_round_trip():
    _, truth = generate_attack(scenario(fragment_share=0.2), seed=0)
    assert GroundTruth.from_dict(truth.to_dict()) == truth


def test_corpus_seeds_each_scenario():
    items = [scenario(), scenario(dst_ip=0xC0000005)]
    flows, truths = generate_corpus(items, seed=10)
    one, _ = generate_attack(items[1], seed=11)
    assert len(flows) == len(generate_attack(items[0], seed=10)[0]) + len(one)
    assert len(truths) == 2


def test_protocol_shape_packet_size_reproduced():
    # attack shaped like the NTP row: pooled packet size should land on its mean
    flows, _ = generate_attack(scenario(reflector_count=300), seed=5)
    ident = flows.src_port == 123
    mean = flows.bytes[ident].sum() / flows.packets[ident].sum()
    assert mean == pytest.approx(PROTOCOL_SHAPES["NTP"]["pkt_avg"], rel=0.005)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_random_scenarios_are_detected_as_truth(seed):
    rng = np.random.default_rng(seed)
    s = random_scenario(rng, 0)
    flows, truth = generate_attack(s, seed)
    events = detect(flows).events
    assert len(events) == len(truth.events)
    for e, t in zip(events, truth.events):
        assert e.windows(60) == (t.start_window, t.end_window)
        assert e.peak_rate_bps == t.peak_rate_bps


def test_background_guards_against_k():
    with pytest.raises(ValueError):
        generate_background(BackgroundParams(client_count=1, rate_bps=1, servers_per_client=10), 0)


def test_background_is_benign():
    p = BackgroundParams(client_count=50, rate_bps=20_000_000_000, start_ms=T0, resolver_rate_bps=3_000_000_000,
                         quic_servers=9, quic_rate_bps=5_000_000_000, quic_flows=500, ntp_pool_clients=20)
    flows = generate_background(p, seed=1)
    assert len(flows) > 1000
    assert (flows.bytes >= 20 * flows.packets).all()
    assert detect(flows).events == []
