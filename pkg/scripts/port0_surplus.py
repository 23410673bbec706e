"""Sweep the fragment share of a DNS attack and report the port-0 surplus
ratio recovered by attribution, against the value implied by the share."""

import argparse

from ampsentinel.detector import detect
from ampsentinel.model import protocol_by_name
from ampsentinel.synth import AttackScenario, generate_attack

T0 = 1_569_196_800_000

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--shares", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.605, 0.7])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print("share  implied  measured  attributed_bytes  orphan_bytes")
    for share in args.shares:
        s = AttackScenario(protocol_by_name("DNS"), 0xC0000002, 776, T0 + 17_000, 8 * 60_000, 2_300_000_000,
                           1474, 59, fragment_share=share)
        flows, _ = generate_attack(s, args.seed)
        att = detect(flows).attribution
        print(f"{share:5.3f}  {share / (1 - share):7.4f}  {att.surplus_ratio('DNS'):8.4f}  "
              f"{att.attributed_bytes:16d}  {att.orphan_bytes:12d}")
