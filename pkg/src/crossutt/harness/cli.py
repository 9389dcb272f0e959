"""Command line: train, eval, bench-fusion, export-heatmap, gen-corpus.

Flags override values from ``--config``, which overrides the ``--profile`` defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..config import CONTEXT_MODES, PROFILES, ConfigError, ModelConfig, dump_config, load_config
from ..data.corpus import read_corpus, write_corpus
from ..data.synthetic import SyntheticTaskSpec, generate_synthetic_corpus

log = logging.getLogger("crossutt")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file with [encoder]/[predictor]/[context]/[optim]/[model]")
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--context-mode", choices=CONTEXT_MODES)
    p.add_argument("--n-prev", type=int)
    p.add_argument("--pool-L", dest="pool_L", type=int)
    p.add_argument("--streaming", action=argparse.BooleanOptionalAction, default=None)


def build_config(args: argparse.Namespace) -> ModelConfig:
    cfg = load_config(args.config, args.profile)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.context_mode is not None:
        cfg.encoder.context_mode = args.context_mode
    if args.n_prev is not None:
        cfg.context.n_prev = args.n_prev
    if args.pool_L is not None:
        cfg.context.pool_L = args.pool_L
    if args.streaming is not None:
        cfg.encoder.streaming = args.streaming
    if getattr(args, "lr", None) is not None:
        cfg.optim.lr = args.lr
    if getattr(args, "batch_size", None) is not None and args.command == "train":
        cfg.batch_size = args.batch_size
    return cfg.validate()


def _emit(report: dict, out: Path | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
    print(text)


def cmd_gen_corpus(args) -> int:
    spec = SyntheticTaskSpec(n_clips=args.n_clips, p_dependent=args.p_dependent,
                             feature_dim=args.feature_dim, noise=args.noise)
    seed = 0 if args.seed is None else args.seed
    corpus = generate_synthetic_corpus(spec, seed, args.templates_seed)
    write_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} utterances in {len(corpus.clips())} clips to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import Trainer

    corpus = read_corpus(args.corpus)
    if args.resume:
        tr = Trainer.load(args.resume, corpus)
    else:
        tr = Trainer(build_config(args), corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(tr.cfg))
    records = tr.run(args.steps, out, args.checkpoint_every)
    tr.save(out / "final.ckpt")
    if records:
        print(f"step {records[-1]['step']} loss {records[-1]['loss']:.4f}; checkpoint {out / 'final.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import evaluate
    from .train import check_compatible, load_model

    model = load_model(args.checkpoint)
    corpus = read_corpus(args.corpus)
    check_compatible(model.cfg, corpus)
    report = evaluate(model, corpus, args.batch_size, clear_cache=args.clear_cache,
                      reference_history=args.reference_history)
    _emit(report, args.out)
    return 0


def cmd_bench_fusion(args) -> int:
    from .bench import BenchConfig, format_report, run_fusion_bench

    cfg = build_config(args)
    bc = BenchConfig(dim=cfg.encoder.dim, heads=cfg.encoder.heads, ffn_dim=cfg.encoder.ffn_dim,
                     conv_kernel=cfg.encoder.conv_kernel, n_prev=cfg.context.n_prev,
                     pool_L=cfg.context.pool_L, frame_rate=cfg.frame_rate, reps=args.reps,
                     threads=args.threads, t_cur=args.t_cur, pool_on_read=args.pool_on_read,
                     seed=cfg.seed)
    if args.t_prev:
        bc.t_prev = tuple(args.t_prev)
    if args.modes:
        bc.modes = tuple(args.modes)
    report = run_fusion_bench(bc)
    print(format_report(report))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


def cmd_export_heatmap(args) -> int:
    from .heatmap import export_heatmap
    from .train import load_model

    model = load_model(args.checkpoint)
    corpus = read_corpus(args.corpus)
    clips = [args.clip] if args.clip else list(corpus.clips())[: args.max_clips]
    n = 0
    for cid in clips:
        n += len(export_heatmap(model, corpus, cid, args.out))
    print(f"wrote {n} heat maps for {len(clips)} clips under {args.out}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crossutt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic cross-utterance corpus")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-clips", type=int, default=40)
    p.add_argument("--p-dependent", type=float, default=0.5)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--templates-seed", type=int, default=0,
                   help="share acoustic templates between train and test corpora")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train with clip-serialized batches")
    _common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", type=Path, help="continue from a checkpoint (its config wins)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy-decode a corpus in clip order and report WER")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--clear-cache", action="store_true", help="withhold all cross-utterance context")
    p.add_argument("--reference-history", action="store_true",
                   help="feed reference transcripts, not hypotheses, to the predictor cache")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-fusion", help="time the encoder fusion computation")
    _common(p)
    p.set_defaults(profile="paper")
    p.add_argument("--t-prev", type=int, nargs="+")
    p.add_argument("--t-cur", type=int, default=100)
    p.add_argument("--modes", nargs="+", choices=CONTEXT_MODES)
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--pool-on-read", action="store_true",
                   help="pool the T_prev history inside the timed region")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_bench_fusion)

    p = sub.add_parser("export-heatmap", help="dump pooling weights [L x T_prev] as CSV")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--clip")
    p.add_argument("--max-clips", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_export_heatmap)
    return ap


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
