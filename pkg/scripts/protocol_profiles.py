"""Render one scenario per protocol shaped like the published per-protocol
averages, detect them, and print the recovered table next to the inputs."""

import argparse

from ampsentinel.analytics import protocol_stats
from ampsentinel.detector import detect
from ampsentinel.ingest import FlowTable
from ampsentinel.model import protocol_by_name
from ampsentinel.synth import PROTOCOL_SHAPES, AttackScenario, generate_attack

T0 = 1_569_196_800_000


def scenarios(per_protocol: int):
    out = []
    for p_i, (name, shape) in enumerate(PROTOCOL_SHAPES.items()):
        for j in range(per_protocol):
            minutes = max(1, round(shape["avg_duration_min"]))
            out.append(AttackScenario(
                protocol=protocol_by_name(name),
                dst_ip=0xC6120000 + (p_i << 8) + j,
                reflector_count=max(10, round(shape["avg_reflectors"])),
                start_ms=T0 + (p_i * per_protocol + j) * 3_600_000,
                duration_ms=minutes * 60_000,
                target_rate_bps=int(shape["avg_gbps"] * 1e9),
                pkt_size_mean_bytes=shape["pkt_avg"],
                pkt_size_std_bytes=shape["pkt_std"],
                scenario_id=f"{name}-{j}",
            ))
    return out


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--per-protocol", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    tables = [generate_attack(s, args.seed + i)[0] for i, s in enumerate(scenarios(args.per_protocol))]
    events = detect(FlowTable.concat(tables).sorted()).events
    print(f"{'protocol':<17}{'avg Gbps':>9}{'(in)':>7}{'refl':>8}{'(in)':>8}{'min':>7}{'(in)':>6}{'pkt':>8}{'(in)':>8}"
          f"{'std':>7}{'(in)':>7}")
    for r in sorted(protocol_stats(events), key=lambda r: r.protocol):
        s = PROTOCOL_SHAPES[r.protocol]
        print(f"{r.protocol:<17}{r.avg_gbps:9.2f}{s['avg_gbps']:7.1f}{r.avg_reflectors:8.0f}{s['avg_reflectors']:8.0f}"
              f"{r.avg_duration_min:7.1f}{s['avg_duration_min']:6.1f}{r.avg_pkt_size_bytes:8.1f}{s['pkt_avg']:8.1f}"
              f"{r.pkt_size_std_bytes:7.1f}{s['pkt_std']:7.1f}")
