"""Timing of the encoder sub-computation where history and current utterance meet."""
from __future__ import annotations

import gc
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ..context import AttentionPool, fuse_frame_concat, fuse_pooled
from ..encoder import ConformerBlock, EncoderConfig, build_attention_mask
from ..numerics.rng import Rng
from ..numerics.tensor import Tensor, default_dtype, no_grad

DEFAULT_T_PREV = (25, 50, 100, 200, 400, 800)


@dataclass
class BenchConfig:
    dim: int = 512
    heads: int = 8
    ffn_dim: int = 2048
    conv_kernel: int = 31
    t_cur: int = 100  # 4 s at 100 frames/s after 4x subsampling
    t_prev: tuple[int, ...] = DEFAULT_T_PREV
    modes: tuple[str, ...] = ("none", "frame_concat", "pooled")
    n_prev: int = 1
    pool_L: int = 16
    reps: int = 30
    warmup: int = 5
    settle: int = 2
    # False: each utterance pools its own frames once and later reads the L x D
    # snapshot (the eval cache path). True: pool the T_prev history inside the timed region.
    pool_on_read: bool = False
    frame_rate: float = 100.0
    subsampling: int = 4
    precision: str = "float32"
    threads: int = 1
    seed: int = 0


@dataclass
class RtfRow:
    mode: str
    t_prev: int
    context_rows: int
    median_ms: float
    mean_ms: float
    total_median_ms: float
    audio_seconds: float
    rtf: float
    rtf_total: float
    reps: int


@dataclass
class RtfReport:
    machine: dict
    config: dict
    rows: list[RtfRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"machine": self.machine, "config": self.config, "rows": [asdict(r) for r in self.rows]}

    def median(self, mode: str, t_prev: int) -> float:
        return next(r.median_ms for r in self.rows if r.mode == mode and r.t_prev == t_prev)


def machine_descriptor(threads: int) -> dict:
    return {"platform": platform.platform(), "processor": platform.processor() or platform.machine(),
            "python": platform.python_version(), "numpy": np.__version__,
            "cpu_count": os.cpu_count(), "threads": threads}


def _timed_interleaved(fns: list, reps: int, warmup: int, settle: int = 2) -> list[list[float]]:
    """Round-robin timing so slow machine drift hits every configuration alike.

    Each timed call follows ``settle`` untimed ones of the same configuration, so the
    measurement sees warm caches rather than whatever the previous
    configuration left behind.
    """
    for _ in range(warmup):
        for fn in fns:
            fn()
    out: list[list[float]] = [[] for _ in fns]
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(reps):
            for k, fn in enumerate(fns):
                for _ in range(settle):
                    fn()
                t0 = time.perf_counter()
                fn()
                out[k].append((time.perf_counter() - t0) * 1000.0)
    finally:
        if enabled:
            gc.enable()
    return out


class FusionBench:
    """One encoder block plus pooling layer, with synthetic hidden states."""

    def __init__(self, cfg: BenchConfig):
        self.cfg = cfg
        rng = Rng(cfg.seed)
        with default_dtype(cfg.precision):
            enc = EncoderConfig(num_blocks=1, heads=cfg.heads, dim=cfg.dim, ffn_dim=cfg.ffn_dim,
                                conv_kernel=cfg.conv_kernel, dropout=0.0)
            self.block = ConformerBlock(enc, rng)
            self.pool = AttentionPool(cfg.dim, cfg.pool_L, rng)
        self.block.eval()
        self.pool.eval()
        self.dtype = np.dtype(cfg.precision)
        gen = np.random.default_rng(cfg.seed)
        self.x_hat = Tensor(gen.normal(size=(1, cfg.t_cur, cfg.dim)).astype(self.dtype))
        self.gen = gen

    def history(self, t_prev: int) -> list[np.ndarray]:
        return [self.gen.normal(size=(t_prev, self.cfg.dim)).astype(self.dtype)
                for _ in range(self.cfg.n_prev)]

    def fusion_fn(self, mode: str, hist: list[np.ndarray]):
        """Key/value assembly + attention with context columns (+ pooling)."""
        mhsa, x_hat = self.block.mhsa, self.x_hat
        pooled = self._pooled_context(mode, hist)

        def run():
            with no_grad():
                if mode == "none":
                    src = x_hat
                elif mode == "frame_concat":
                    src = fuse_frame_concat(x_hat, [h[None] for h in hist])
                else:
                    src = fuse_pooled(x_hat, [p[None] for p in pooled()])
                return mhsa(x_hat, src, None)

        return run

    def _pooled_context(self, mode: str, hist: list[np.ndarray]):
        if mode != "pooled":
            return None
        if self.cfg.pool_on_read:
            return lambda: [self.pool(h)[0].data for h in hist]
        with no_grad():
            snapshots = [self.pool(h)[0].data for h in hist]

        def run():
            self.pool(self.x_hat.data[0])  # snapshot of the current utterance for the next one
            return snapshots

        return run

    def total_fn(self, mode: str, hist: list[np.ndarray]):
        """Whole block forward including the fusion."""
        T = self.cfg.t_cur
        pooled = self._pooled_context(mode, hist)

        def run():
            with no_grad():
                if mode == "none":
                    ctx = None
                elif mode == "frame_concat":
                    ctx = Tensor(np.concatenate(hist)[None])
                else:
                    ctx = Tensor(np.concatenate(pooled())[None])
                C = 0 if ctx is None else ctx.shape[1]
                mask = build_attention_mask([T], T, [C], C, False, 0)
                return self.block(self.x_hat, ctx, mask, None)

        return run

    def run(self) -> RtfReport:
        c = self.cfg
        report = RtfReport(machine_descriptor(c.threads), asdict(c))
        audio = c.t_cur * c.subsampling / c.frame_rate
        with threadpool_limits(limits=c.threads):
            for mode in c.modes:
                hists = [self.history(t) for t in c.t_prev]
                fus = _timed_interleaved([self.fusion_fn(mode, h) for h in hists], c.reps, c.warmup, c.settle)
                tot = _timed_interleaved([self.total_fn(mode, h) for h in hists], c.reps, c.warmup, 0)
                for k, t_prev in enumerate(c.t_prev):
                    rows = {"none": 0, "frame_concat": t_prev * c.n_prev, "pooled": c.pool_L * c.n_prev}[mode]
                    med, totm = statistics.median(fus[k]), statistics.median(tot[k])
                    report.rows.append(RtfRow(mode, t_prev, rows, med, statistics.fmean(fus[k]), totm,
                                              audio, med / 1000.0 / audio, totm / 1000.0 / audio, c.reps))
        return report


def run_fusion_bench(cfg: BenchConfig | None = None) -> RtfReport:
    return FusionBench(cfg or BenchConfig()).run()


def format_report(report: RtfReport) -> str:
    """Plain-text table; ``vs none`` is the fusion time relative to the no-context bar."""
    base = {r.t_prev: r.median_ms for r in report.rows if r.mode == "none"}
    lines = [f"{'mode':<13}{'T_prev':>7}{'ctx rows':>9}{'median ms':>11}{'total ms':>10}"
             f"{'RTF':>9}{'vs none':>9}"]
    for r in report.rows:
        rel = f"{r.median_ms / base[r.t_prev]:>9.3f}" if r.t_prev in base else f"{'-':>9}"
        lines.append(f"{r.mode:<13}{r.t_prev:>7}{r.context_rows:>9}{r.median_ms:>11.3f}"
                     f"{r.total_median_ms:>10.3f}{r.rtf:>9.4f}{rel}")
    m = report.machine
    lines.append(f"machine: {m['processor']}, {m['platform']}, numpy {m['numpy']}, threads={m['threads']}")
    return "\n".join(lines)
