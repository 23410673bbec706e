from fractions import Fraction

import pytest

from ampsentinel.detector import Port0Aggregate, attribute_port0, classify_window, coalesce_events
from ampsentinel.ingest import assign_windows
from ampsentinel.model import UDP, DetectionConfig, FlowRecord

T0 = 1_569_196_800_000  # 2019-09-23 00:00 UTC, window aligned


def flow(ts, src, dst, sport, packets, nbytes, proto=UDP, dport=4444):
    return FlowRecord(ts, src, dst, proto, sport, dport, packets, nbytes)


def oracle_is_attack(flows, config):
    """Brute force: exact rational rate, set of sources."""
    sources = {f.src_ip for f in flows}
    rate = Fraction(8 * sum(f.bytes for f in flows), config.window_seconds)
    return len(sources) >= config.k_min_reflectors and rate > config.t_rate_bps


def reference_detect(flows, config=DetectionConfig()):
    """Record-at-a-time pipeline used as the oracle for the columnar one."""
    scaled = [FlowRecord(f.timestamp_ms, f.src_ip, f.dst_ip, f.ip_protocol, f.src_port, f.dst_port,
                         f.packets * config.sampling_rate, f.bytes * config.sampling_rate) for f in flows]
    assigned = assign_windows(scaled, config)
    obs, port0 = [], []
    for key, members in assigned.buckets.items():
        if key.src_port == 0:
            port0.append(Port0Aggregate(key.window_index, key.dst_ip, sum(f.bytes for f in members),
                                        sum(f.packets for f in members), len({f.src_ip for f in members})))
        o = classify_window(key, members, config)
        if o is not None and key.src_port != 0:
            obs.append(o)
    events = coalesce_events(obs, config)
    port0.sort(key=lambda a: (a.dst_ip, a.window_index))
    return attribute_port0(events, port0, config.window_seconds)


@pytest.fixture
def config():
    return DetectionConfig()


# -- acceptance reporting ------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    detail = getattr(item, "criterion_detail", "")
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "FAIL"
        _CRITERIA[number] = (status, title, detail)


@pytest.fixture
def detail(request):
    """Attach a short measured summary to the criterion's report line."""

    def note(text):
        request.node.criterion_detail = text

    return note


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
