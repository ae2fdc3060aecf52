from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from atss_net import synth

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    """Three toy speakers, four 1.2-1.6 s utterances each."""
    return synth.make_corpus(n_speakers=3, utts_per_speaker=4, seconds=(1.2, 1.6), seed=7)


@pytest.fixture(scope="session")
def noise_set():
    return synth.make_noise_set(count=4, seconds=2.0, seed=3)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, small_corpus, noise_set):
    root = tmp_path_factory.mktemp("corpus")
    manifest = synth.write_corpus(small_corpus, root / "speech")
    noise = synth.write_noise(noise_set, root / "noise")
    return manifest, noise


@pytest.fixture(scope="session")
def trained_embedder8():
    """Toy embedder trained on eight synthetic speakers, plus held-out speech from the same voices."""
    from atss_net import desk

    speech = desk.corpus(8)
    result = desk.train_desk_embedder(speech, epochs=20)
    return result, speech, desk.corpus(8, utterance_seed=1)


@pytest.fixture(scope="session")
def desk_speech():
    from atss_net import desk

    return desk.corpus(4)


@pytest.fixture(scope="session")
def desk_embedder(desk_speech):
    from atss_net import desk

    return desk.train_desk_embedder(desk_speech).model


class DeskRuns:
    """Desk-scale separator runs keyed by (mode, seed), trained on first use."""

    def __init__(self, speech, embedder):
        self.speech = speech
        self.embedder = embedder
        self._runs = {}

    def get(self, mode="full", seed=0):
        from atss_net import desk

        if (mode, seed) not in self._runs:
            self._runs[mode, seed] = desk.run_separation(self.speech, self.embedder, mode, seed)
        return self._runs[mode, seed]


@pytest.fixture(scope="session")
def desk_runs(desk_speech, desk_embedder):
    return DeskRuns(desk_speech, desk_embedder)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion; echoed in the terminal summary."""
    def record(number, title, passed, detail=""):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _CRITERIA[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
