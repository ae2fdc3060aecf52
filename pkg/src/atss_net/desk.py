"""Desk-scale experiment settings shared by the scripts and the acceptance suite.

Everything here is sized for one CPU core: a four-speaker synthetic corpus,
1 s segments, a one-block separator with 8 channels and a 16-dim embedding.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import synth
from .embedder import EmbedderConfig, EmbedderTrainConfig, cosine_similarity, embed, features, train_embedder
from .model import ModelConfig
from .pipeline import MixtureSource, TrainConfig, evaluate, sample_seed, train_separator

EMBEDDER = EmbedderConfig(channels=(8, 16, 32, 64), embed_dim=16, n_speakers=4)
EMBEDDER_TRAIN = EmbedderTrainConfig(lr=2e-3, batch_size=16, epochs=10, steps_per_epoch=10, crop_frames=48)
MODEL = ModelConfig(n_blocks=1, n_heads=2, d_k=8, freq_bins=257, embed_dim=16)
TRAIN = TrainConfig(lr=1e-3, batch_size=4, max_epochs=6, patience=100, steps_per_epoch=50, val_size=8,
                    segment=16000, pool_size=32)


@dataclass
class DeskRun:
    mode: str
    seed: int
    report: object
    result: object
    seconds: float = 0.0

    @property
    def improvement(self) -> float:
        return self.report.sdr_improved_mean


def corpus(n_speakers=4, seed=0, utterance_seed=None):
    return synth.make_corpus(n_speakers, 6, (2.0, 3.0), seed=seed, utterance_seed=utterance_seed)


def train_desk_embedder(speech, seed=0, epochs=None):
    cfg = replace(EMBEDDER, n_speakers=len(speech))
    tcfg = replace(EMBEDDER_TRAIN, seed=seed, epochs=epochs or EMBEDDER_TRAIN.epochs)
    return train_embedder(speech, cfg, tcfg)


def held_in_pool(speech, train_cfg: TrainConfig = TRAIN):
    """The fixed training mixtures (``pool_size`` of them) that separation is scored on."""
    source = MixtureSource(speech, train_cfg)
    return [source(sample_seed(train_cfg.seed, 0, i)) for i in range(train_cfg.pool_size)]


def run_separation(speech, embedder, mode="full", seed=0, on_epoch=None) -> DeskRun:
    """Train the toy separator on the fixed pool and score it on the same mixtures."""
    start = time.perf_counter()
    model_cfg = replace(MODEL, mode=mode)
    train_cfg = replace(TRAIN, seed=seed)
    result = train_separator(speech, speech, embedder, model_cfg, train_cfg, on_epoch=on_epoch)
    report = evaluate(held_in_pool(speech, train_cfg), embedder, result.model)
    return DeskRun(mode, seed, report, result, time.perf_counter() - start)


def verification_trials(model, speech, n_trials=200, seed=0):
    """Fraction of (anchor, same, other) triples where the same-speaker score wins."""
    rng = np.random.default_rng(seed)
    speakers = sorted(speech)
    cache = {}

    def vec(spk, i):
        if (spk, i) not in cache:
            cache[spk, i] = embed(features(speech[spk][i]), model)
        return cache[spk, i]

    wins = 0
    for _ in range(n_trials):
        a, b = rng.choice(len(speakers), size=2, replace=False)
        i, j = rng.choice(len(speech[speakers[a]]), size=2, replace=False)
        k = int(rng.integers(len(speech[speakers[b]])))
        anchor = vec(speakers[a], i)
        wins += cosine_similarity(anchor, vec(speakers[a], j)) > cosine_similarity(anchor, vec(speakers[b], k))
    return wins / n_trials
