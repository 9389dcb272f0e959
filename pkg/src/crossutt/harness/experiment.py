"""The synthetic dependency experiment: train each context mode on the same
clips and compare dependent-token accuracy on held-out clips."""
from __future__ import annotations

import time
from dataclasses import dataclass

from ..config import ModelConfig, desk_profile
from ..data.corpus import Corpus
from ..data.synthetic import SyntheticTaskSpec, generate_synthetic_corpus
from .evaluate import evaluate
from .heatmap import cue_localization
from .train import Trainer


@dataclass
class ExperimentConfig:
    steps: int = 1000
    train_clips: int = 200
    test_clips: int = 80
    p_dependent: float = 0.5
    lr: float = 2e-3
    seed: int = 0
    modes: tuple[str, ...] = ("none", "frame_concat", "pooled")
    # the predictor carry-over would let every mode read the previous cue, so
    # the comparison isolates the encoder path
    predictor_context: bool = False
    train_seed: int = 1
    test_seed: int = 2
    templates_seed: int = 0


def experiment_corpora(ec: ExperimentConfig) -> tuple[Corpus, Corpus]:
    def make(n, seed):
        return generate_synthetic_corpus(SyntheticTaskSpec(n_clips=n, p_dependent=ec.p_dependent),
                                         seed=seed, templates_seed=ec.templates_seed)
    return make(ec.train_clips, ec.train_seed), make(ec.test_clips, ec.test_seed)


def experiment_model_config(ec: ExperimentConfig, mode: str) -> ModelConfig:
    cfg = desk_profile()
    cfg.encoder.context_mode = mode
    cfg.predictor.use_context = ec.predictor_context
    cfg.optim.lr = ec.lr
    cfg.seed = ec.seed
    return cfg.validate()


def train_mode(ec: ExperimentConfig, mode: str, train: Corpus) -> Trainer:
    tr = Trainer(experiment_model_config(ec, mode), train)
    tr.run(ec.steps)
    return tr


def score_mode(model, test: Corpus) -> dict:
    rep = evaluate(model, test)
    if model.cfg.context_mode == "pooled":
        cues = {t for t in test.vocab if t.startswith("cue")}
        rep["cue_localization"] = cue_localization(model, test, cues)["fraction"]
    return rep


def train_and_evaluate(ec: ExperimentConfig, mode: str, train: Corpus, test: Corpus) -> dict:
    t0 = time.monotonic()
    tr = train_mode(ec, mode, train)
    rep = score_mode(tr.model, test)
    rep["train_seconds"] = round(time.monotonic() - t0, 1)
    return rep


def run_context_experiment(ec: ExperimentConfig, log=None) -> dict[str, dict]:
    train, test = experiment_corpora(ec)
    results = {}
    for mode in ec.modes:
        results[mode] = r = train_and_evaluate(ec, mode, train, test)
        if log:
            log(f"{mode:<13} wer={r['wer']:.3f} dependent_acc={r['dependent_accuracy']:.3f} "
                f"({r['train_seconds']}s)")
    return results
