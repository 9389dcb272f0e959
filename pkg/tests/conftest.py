from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from crossutt.config import desk_profile  # noqa: E402
from crossutt.data import SyntheticTaskSpec, generate_synthetic_corpus  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE: list[str] = []


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
    if detail:
        line += f" :: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_cfg():
    cfg = desk_profile()
    cfg.encoder.dropout = 0.0
    return cfg


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(SyntheticTaskSpec(n_clips=12), seed=3, templates_seed=0)


@pytest.fixture(scope="session")
def dependency_models():
    """The three context modes trained once on the synthetic dependency task.

    Returns ``{mode: (model, report)}`` plus the held-out corpus under ``"test"``.
    """
    from crossutt.harness.experiment import (ExperimentConfig, experiment_corpora, score_mode,
                                             train_mode)
    ec = ExperimentConfig()
    train, test = experiment_corpora(ec)
    out = {"test": test}
    for mode in ec.modes:
        model = train_mode(ec, mode, train).model
        out[mode] = (model, score_mode(model, test))
    return out
