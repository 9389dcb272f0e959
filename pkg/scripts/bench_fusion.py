"""Fusion timing sweep at full-size dimensions (D=512, 8 heads, float32, 100 current frames).

    python scripts/bench_fusion.py --out results/rtf.json
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from crossutt.harness.bench import BenchConfig, format_report, run_fusion_bench


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--n-prev", type=int, default=1)
    ap.add_argument("--pool-L", type=int, default=16)
    ap.add_argument("--pool-on-read", action="store_true")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    report = run_fusion_bench(BenchConfig(reps=args.reps, n_prev=args.n_prev, pool_L=args.pool_L,
                                          pool_on_read=args.pool_on_read))
    print(format_report(report))
    for mode in ("frame_concat", "pooled"):
        ratio = report.median(mode, 800) / report.median(mode, 25)
        print(f"{mode}: time(800)/time(25) = {ratio:.2f}")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")


if __name__ == "__main__":
    main()
