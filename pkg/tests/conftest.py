"""Shared fixtures: a trained and whitened extractor, plus one corpus-scale paired run.

The expensive objects are session-scoped so the unit tests and the
acceptance module reuse the same model and the same 100-image embeds.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from pathmark import attacks, codec, pipeline, synth
from pathmark.config import RunConfig

TRAIN_SEED0, TRAIN_N, TRAIN_STEPS = 1000, 64, 8000
WHITEN_SEED0, WHITEN_N = 20000, 1000
EVAL_SEED0, EVAL_N = 300, 100
PAIRED_MODES = ("full", "no_pre", "no_tv")

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> None:
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synth_spec():
    return synth.SynthSpec()


@pytest.fixture(scope="session")
def train_images(synth_spec):
    return [synth.gen_phantom(synth_spec, TRAIN_SEED0 + i).image for i in range(TRAIN_N)]


@pytest.fixture(scope="session")
def whiten_images(synth_spec):
    return [synth.gen_phantom(synth_spec, WHITEN_SEED0 + i).image for i in range(WHITEN_N)]


@pytest.fixture(scope="session")
def raw_model(train_images):
    return codec.train_extractor(
        train_images, k=48, transforms=attacks.default_suite(), steps=TRAIN_STEPS, seed=0
    )


@pytest.fixture(scope="session")
def model(raw_model, whiten_images):
    return codec.whiten_fit(raw_model, whiten_images)


@pytest.fixture(scope="session")
def eval_corpus(tmp_path_factory, synth_spec):
    out = tmp_path_factory.mktemp("eval_corpus")
    synth.gen_corpus(synth_spec, EVAL_N, EVAL_SEED0, out)
    return out


@pytest.fixture(scope="session")
def paired_runs(eval_corpus, model):
    """Full, no_pre and no_tv embeds of the same 100 images with shared messages.

    Returns ``{mode: (results, report, seconds)}``; timing covers
    localization, embedding and the attack evaluation, single-threaded.
    """
    items = pipeline.load_corpus(eval_corpus)
    cfg = RunConfig()
    runs = {}
    for mode in PAIRED_MODES:
        t0 = time.perf_counter()
        results, report = pipeline.run_mode(items, model, cfg, mode, workers=1)
        runs[mode] = (results, report, time.perf_counter() - t0)
    return runs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
