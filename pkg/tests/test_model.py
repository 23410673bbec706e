import pytest
from hypothesis import given, strategies as st

from ampsentinel.model import (
    CONFIG_KEYS, PORT0, PORT_INDEX, REGISTRY, DetectionConfig, format_ip, load_config, lookup_protocol,
    parse_config_text, parse_ip, protocol_by_name,
)


@given(st.integers(0, 2**32 - 1))
def test_ip_round_trip(value):
    assert parse_ip(format_ip(value)) == value


def test_registry_ports():
    ports = {p.name: p.src_port for p in REGISTRY}
    assert ports["NTP"] == 123
    assert ports["Memcached"] == 11211
    assert ports["WS-Discovery"] == 3702
    assert ports["PORT0"] == 0
    assert len(set(ports.values())) == len(REGISTRY)


def test_port_index_matches_registry():
    for i, p in enumerate(REGISTRY):
        assert PORT_INDEX[p.src_port] == i
    assert (PORT_INDEX >= 0).sum() == len(REGISTRY)
    assert lookup_protocol(443) is None
    assert lookup_protocol(0) is PORT0
    assert protocol_by_name("DNS").src_port == 53


def test_unknown_protocol_name():
    with pytest.raises(ValueError):
        protocol_by_name("QUIC")


def test_config_defaults():
    c = DetectionConfig()
    assert (c.k_min_reflectors, c.t_rate_bps, c.window_seconds, c.sampling_rate, c.hysteresis_windows) == (
        10, 1_000_000_000, 60, 1, 0)
    assert c.window_ms == 60_000


@pytest.mark.parametrize("field,value", [
    ("k_min_reflectors", 1), ("t_rate_bps", 0), ("window_seconds", 0), ("sampling_rate", 0),
    ("hysteresis_windows", -1),
])
def test_config_rejects_invalid(field, value):
    with pytest.raises(ValueError):
        DetectionConfig(**{field: value})


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "c.conf"
    path.write_text("# thresholds\nk_min_reflectors = 12\nt_rate_bps=2_000_000_000  # 2G\n\nsampling_rate=4\n")
    c = load_config(path, {"sampling_rate": 8, "window_seconds": None})
    assert c.k_min_reflectors == 12
    assert c.t_rate_bps == 2_000_000_000
    assert c.sampling_rate == 8
    assert c.window_seconds == 60


@pytest.mark.parametrize("text", ["bogus=1", "k_min_reflectors", "k_min_reflectors=ten"])
def test_config_text_errors(text):
    with pytest.raises(ValueError):
        parse_config_text(text)


def test_config_keys_cover_fields():
    assert set(CONFIG_KEYS) == set(DetectionConfig().as_dict())
