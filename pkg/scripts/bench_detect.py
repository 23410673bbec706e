"""Time the flow-CSV detect path on a mixed synthetic corpus.

    python scripts/bench_detect.py --flows 1000000 --repeat 3
"""

import argparse
import json
import tempfile
import time
from pathlib import Path

from ampsentinel.cli import main
from ampsentinel.synth import mixed_corpus


def run(n_flows: int, repeat: int, seed: int, workdir: Path) -> dict:
    t0 = time.perf_counter()
    flows, truths = mixed_corpus(n_flows, seed)
    path = workdir / "flows.csv"
    flows.write_csv(path)
    gen_s = time.perf_counter() - t0
    runs = []
    for i in range(repeat):
        out = workdir / f"run{i}"
        main(["detect", "--flows", str(path), "--out", str(out)])
        runs.append(json.loads((out / "manifest.json").read_text())["metrics"])
    return {
        "flows": len(flows),
        "expected_events": sum(len(t.events) for t in truths),
        "generate_s": gen_s,
        "throughput_records_per_s": [m["throughput_records_per_s"] for m in runs],
        "parse_s": [m["parse_s"] for m in runs],
        "detect_s": [m["detect_s"] for m in runs],
        "events": runs[-1]["events"],
    }


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--flows", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        print(json.dumps(run(args.flows, args.repeat, args.seed, Path(tmp)), indent=2))
