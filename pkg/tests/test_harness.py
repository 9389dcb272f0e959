import json
import math

import numpy as np
import pytest

from crossutt.config import (ConfigError, desk_profile, dump_config, load_config, paper_profile,
                             set_option)
from crossutt.context import read_heatmap_csv
from crossutt.data import Corpus, SyntheticTaskSpec, generate_synthetic_corpus
from crossutt.harness import (BenchConfig, CheckpointError, Trainer, evaluate, evaluate_loss,
                              load_checkpoint, run_fusion_bench, save_checkpoint, uniformity)
from crossutt.harness.cli import build_config, main, make_parser
from crossutt.harness.experiment import (ExperimentConfig, experiment_corpora, experiment_model_config,
                                         train_mode)
from crossutt.harness.train import load_model_arrays
from crossutt.model import ContextualTransducer


# -- configuration ---------------------------------------------------------------------------

def test_profiles():
    p = paper_profile()
    assert (p.encoder.num_blocks, p.encoder.dim, p.encoder.heads, p.encoder.ffn_dim,
            p.encoder.conv_kernel, p.predictor.hidden) == (12, 512, 8, 2048, 31, 300)
    d = desk_profile()
    assert (d.encoder.num_blocks, d.encoder.dim, d.encoder.heads, d.encoder.ffn_dim,
            d.encoder.conv_kernel, d.predictor.hidden) == (2, 32, 2, 64, 7, 16)
    p.validate()
    d.validate()


def test_ini_overrides_profile_and_flags_override_ini(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[encoder]\ncontext_mode = pooled\nstreaming = true\n[context]\npool_L = 3\n"
                   "[model]\nseed = 7\n")
    cfg = load_config(ini, "desk")
    assert cfg.context_mode == "pooled" and cfg.encoder.streaming and cfg.context.pool_L == 3 and cfg.seed == 7
    args = make_parser().parse_args(["train", "--config", str(ini), "--corpus", "x", "--out", "y",
                                     "--pool-L", "5", "--context-mode", "frame_concat", "--no-streaming"])
    cfg = build_config(args)
    assert cfg.context.pool_L == 5 and cfg.context_mode == "frame_concat" and not cfg.encoder.streaming


def test_config_dump_round_trip(tmp_path):
    cfg = desk_profile()
    cfg.encoder.context_mode = "pooled"
    cfg.encoder.context_layers = (1,)
    cfg.optim.lr = 3e-4
    path = tmp_path / "c.ini"
    path.write_text(dump_config(cfg))
    assert load_config(path, "paper").to_dict() == cfg.to_dict()


def test_config_errors(tmp_path):
    cfg = desk_profile()
    with pytest.raises(ConfigError):
        set_option(cfg, "encoder", "no_such_key", "1")
    with pytest.raises(ConfigError):
        set_option(cfg, "nowhere", "dim", "1")
    with pytest.raises(ConfigError):
        set_option(cfg, "encoder", "streaming", "maybe")
    with pytest.raises(ConfigError):
        load_config(None, "huge")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    cfg.encoder.heads = 5
    with pytest.raises(ConfigError):
        cfg.validate()


def test_corpus_model_mismatch_fails_before_training(small_corpus):
    cfg = desk_profile()
    cfg.encoder.input_dim = 12
    with pytest.raises(ConfigError, match="feature dim"):
        Trainer(cfg, small_corpus)
    cfg = desk_profile()
    cfg.vocab_size = 5
    with pytest.raises(ConfigError):
        Trainer(cfg, small_corpus)
    with pytest.raises(ConfigError, match="empty"):
        Trainer(desk_profile(), Corpus([]))


# -- checkpoints --------------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    arrays = {"a": rng.normal(size=(2, 3)), "b": np.arange(4, dtype=np.int64),
              "c": rng.normal(size=5).astype(np.float32)}
    save_checkpoint(tmp_path / "x.ckpt", {"step": 3, "nested": {"k": [1, 2]}}, arrays)
    meta, back = load_checkpoint(tmp_path / "x.ckpt")
    assert meta == {"step": 3, "nested": {"k": [1, 2]}}
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and np.array_equal(back[k], v)


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {}, {"a": np.ones(100)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
    path.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(b"abc")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch_is_reported():
    small = ContextualTransducer(desk_profile())
    cfg = desk_profile()
    cfg.encoder.ffn_dim = 48
    arrays = {f"param.{n}": p.data for n, p in ContextualTransducer(cfg).named_parameters()}
    with pytest.raises(ValueError, match="shape"):
        load_model_arrays(small, arrays)


# -- training -----------------------------------------------------------------------------------

def train_cfg(mode="pooled", **kw):
    cfg = desk_profile()
    cfg.encoder.context_mode = mode
    cfg.batch_size = 4
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def test_fifty_steps_lower_the_loss(small_corpus):
    recs = Trainer(train_cfg(), small_corpus).run(50)
    assert recs[-1]["loss"] < recs[0]["loss"]
    assert [r["step"] for r in recs] == list(range(1, 51))


def test_metrics_logs_are_deterministic(small_corpus, tmp_path):
    Trainer(train_cfg(), small_corpus).run(8, tmp_path / "a")
    Trainer(train_cfg(), small_corpus).run(8, tmp_path / "b")
    a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    recs = [json.loads(l) for l in a.decode().splitlines()]
    assert set(recs[0]) == {"step", "loss", "lr"}
    timing = [json.loads(l) for l in (tmp_path / "a" / "timing.jsonl").read_text().splitlines()]
    assert [t["step"] for t in timing] == list(range(1, 9)) and all(t["wall_ms"] > 0 for t in timing)


@pytest.mark.parametrize("mode", ["none", "frame_concat", "pooled"])
def test_resume_reproduces_next_loss(small_corpus, tmp_path, mode):
    ref = Trainer(train_cfg(mode), small_corpus)
    ref.run(6)
    ref.save(tmp_path / "k.ckpt")
    want = ref.run(3)
    back = Trainer.load(tmp_path / "k.ckpt", small_corpus)
    got = back.run(3)
    assert [r["loss"] for r in got] == [r["loss"] for r in want]


def test_resume_across_epoch_boundary(small_corpus, tmp_path):
    ref = Trainer(train_cfg(), small_corpus)
    n = ref.plan.num_steps
    ref.run(n - 1)
    ref.save(tmp_path / "k.ckpt")
    want = ref.run(3)
    got = Trainer.load(tmp_path / "k.ckpt", small_corpus).run(3)
    assert ref.epoch == 1
    assert [r["loss"] for r in got] == [r["loss"] for r in want]


def test_none_mode_makes_cache_unreachable(small_corpus):
    tr = Trainer(train_cfg("none"), small_corpus)
    tr.run(3)
    assert tr.last_contexts == {}
    assert all(not e.layers for buf in tr.cache.slots.values() for e in buf)


@pytest.mark.slow
def test_null_effect_without_dependency():
    # modes draw different initial weights, so compare them against
    # seed-to-seed spread rather than as one paired run
    finals = {"none": [], "pooled": []}
    for seed in range(4):
        ec = ExperimentConfig(p_dependent=0.0, steps=300, seed=seed)
        train, test = experiment_corpora(ec)
        for m in finals:
            finals[m].append(np.mean(evaluate_loss(train_mode(ec, m, train).model, test)))
    a, b = np.array(finals["none"]), np.array(finals["pooled"])
    t = (b.mean() - a.mean()) / math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    # Welch t, two-sided 1% level at about 6 degrees of freedom
    assert abs(t) < 3.71, (a, b, t)


# -- evaluation ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_baseline_memorizes_its_training_set():
    corpus = generate_synthetic_corpus(SyntheticTaskSpec(n_clips=8, p_dependent=0.0), seed=11, templates_seed=0)
    tr = Trainer(experiment_model_config(ExperimentConfig(), "none"), corpus)
    tr.run(400)
    assert evaluate(tr.model, corpus)["wer"] < 0.05


@pytest.mark.slow
def test_clearing_the_cache_drops_to_ambiguity_ceiling(dependency_models):
    model, report = dependency_models["pooled"]
    test = dependency_models["test"]
    cleared = evaluate(model, test, clear_cache=True)
    assert report["dependent_accuracy"] >= 0.9
    assert abs(cleared["dependent_accuracy"] - 0.5) <= 0.10


def test_evaluate_empty_corpus():
    with pytest.raises(ValueError):
        evaluate(ContextualTransducer(desk_profile()), Corpus([]))


def test_evaluate_report_fields(small_corpus):
    rep = evaluate(ContextualTransducer(train_cfg()), small_corpus)
    assert rep["utterances"] == len(small_corpus)
    assert rep["wer"] == pytest.approx((rep["substitutions"] + rep["deletions"] + rep["insertions"])
                                       / rep["ref_tokens"])
    assert 0 <= rep["token_accuracy"] <= 1


def test_untrained_pooling_rows_are_near_uniform(small_corpus):
    model = ContextualTransducer(train_cfg())
    assert uniformity(model, small_corpus, next(iter(small_corpus.clips()))) < 5.0


# -- benchmark -----------------------------------------------------------------------------------

def test_bench_smoke():
    bc = BenchConfig(dim=16, heads=2, ffn_dim=32, conv_kernel=3, t_cur=10, t_prev=(5, 20),
                     pool_L=2, reps=3, warmup=1, settle=0)
    rep = run_fusion_bench(bc)
    assert {(r.mode, r.t_prev) for r in rep.rows} == {(m, t) for m in bc.modes for t in (5, 20)}
    for r in rep.rows:
        assert r.reps == 3 and r.total_median_ms > r.median_ms > 0
        assert r.rtf == pytest.approx(r.median_ms / 1000 / r.audio_seconds)
    pooled = {r.t_prev: r.context_rows for r in rep.rows if r.mode == "pooled"}
    assert pooled == {5: 2, 20: 2}
    assert "machine" in rep.to_dict()


# -- command line ----------------------------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert main(["gen-corpus", "--out", str(corpus), "--n-clips", "4", "--seed", "1"]) == 0
    run = tmp_path / "run"
    assert main(["train", "--corpus", str(corpus), "--out", str(run), "--steps", "4",
                 "--context-mode", "pooled", "--checkpoint-every", "2"]) == 0
    assert (run / "final.ckpt").exists() and (run / "step000002.ckpt").exists()
    assert len((run / "metrics.jsonl").read_text().splitlines()) == 4
    assert "context_mode = pooled" in (run / "config.ini").read_text()
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run / "final.ckpt"), "--corpus", str(corpus),
                 "--out", str(tmp_path / "eval.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["context_mode"] == "pooled" and rep == json.loads((tmp_path / "eval.json").read_text())
    assert main(["export-heatmap", "--checkpoint", str(run / "final.ckpt"), "--corpus", str(corpus),
                 "--out", str(tmp_path / "maps")]) == 0
    csvs = sorted((tmp_path / "maps").rglob("*.csv"))
    assert csvs
    w, tokens = read_heatmap_csv(csvs[0])
    assert np.all(np.abs(w.sum(1) - 1) < 1e-6) and len(tokens) == w.shape[1]
    resumed = tmp_path / "resumed"
    assert main(["train", "--corpus", str(corpus), "--out", str(resumed), "--steps", "2",
                 "--resume", str(run / "step000002.ckpt")]) == 0
    tail = [json.loads(l)["loss"] for l in (run / "metrics.jsonl").read_text().splitlines()[2:]]
    again = [json.loads(l)["loss"] for l in (resumed / "metrics.jsonl").read_text().splitlines()]
    assert tail == again


def test_cli_bench_and_errors(tmp_path, capsys):
    assert main(["bench-fusion", "--profile", "desk", "--t-prev", "5", "10", "--t-cur", "10",
                 "--reps", "2", "--out", str(tmp_path / "b.json")]) == 0
    assert "pooled" in capsys.readouterr().out
    assert json.loads((tmp_path / "b.json").read_text())["rows"]
    assert main(["train", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[encoder]\nheads = 5\n")
    corpus = tmp_path / "c"
    main(["gen-corpus", "--out", str(corpus), "--n-clips", "2"])
    assert main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "r"), "--config", str(bad)]) == 2
