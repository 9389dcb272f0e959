"""Train none / frame_concat / pooled on the synthetic dependency task and
compare dependent-token accuracy on held-out clips.

    python scripts/run_context_experiment.py --steps 1000 --out results/context.json
"""
from __future__ import annotations

import argparse
import json
from functools import partial
from pathlib import Path

from crossutt.harness.experiment import ExperimentConfig, run_context_experiment


def main() -> None:
    d = ExperimentConfig()
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=d.steps)
    ap.add_argument("--train-clips", type=int, default=d.train_clips)
    ap.add_argument("--test-clips", type=int, default=d.test_clips)
    ap.add_argument("--p-dependent", type=float, default=d.p_dependent)
    ap.add_argument("--lr", type=float, default=d.lr)
    ap.add_argument("--seed", type=int, default=d.seed)
    ap.add_argument("--modes", nargs="+", default=list(d.modes))
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    ec = ExperimentConfig(steps=args.steps, train_clips=args.train_clips, test_clips=args.test_clips,
                          p_dependent=args.p_dependent, lr=args.lr, seed=args.seed,
                          modes=tuple(args.modes))
    results = run_context_experiment(ec, log=partial(print, flush=True))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(results, indent=2) + "\n")


if __name__ == "__main__":
    main()
