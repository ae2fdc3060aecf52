from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from atss_net import desk, dsp
from atss_net.embedder import EmbedderConfig, SpeakerEmbedder
from atss_net.errors import ConfigError, DataError, NumericError
from atss_net.model import AtssNet, ModelConfig, atss_forward
from atss_net.pipeline import (SDR_CAP, EarlyStopping, EvalReport, MixtureSource, TrainConfig, ablation_config,
                               evaluate, run_ablation, sdr, separate, train_separator)
from atss_net.simulate import sample_seed

EMB = EmbedderConfig(channels=(4, 4, 4, 4), embed_dim=4, n_speakers=3)
TINY_MODEL = ModelConfig(n_blocks=1, n_heads=2, d_k=2, freq_bins=257, embed_dim=4)
TINY_TRAIN = TrainConfig(lr=1e-3, batch_size=2, max_epochs=2, patience=5, steps_per_epoch=2, val_size=2,
                         segment=8000, pool_size=4)


@pytest.fixture(scope="module")
def tiny_embedder():
    return SpeakerEmbedder(EMB, seed=0).without_head()


# --- SDR --------------------------------------------------------------------------

def test_sdr_examples(rng):
    ref = rng.standard_normal(4000)
    assert sdr(ref, ref) == SDR_CAP
    assert sdr(ref, 2 * ref) == SDR_CAP
    noise = rng.standard_normal(4000)
    noise -= (noise @ ref) / (ref @ ref) * ref
    noise *= np.sqrt(0.01 * (ref @ ref) / (noise @ noise))
    assert sdr(ref, ref + noise) == pytest.approx(20.0, abs=0.1)
    with pytest.raises(ValueError):
        sdr(np.zeros(10), np.ones(10))
    with pytest.raises(ValueError):
        sdr(ref, ref[:10])


@pytest.mark.parametrize("c", [0.01, 0.5, 3.0, 1e4])
def test_sdr_scale_invariance(rng, c):
    ref, est = rng.standard_normal((2, 1000))
    est = ref + 0.3 * est
    assert sdr(ref, c * est) == pytest.approx(sdr(ref, est), abs=1e-9)


# --- training control flow ----------------------------------------------------------

def test_early_stopping_counts_patience():
    stop = EarlyStopping(3)
    losses = [5.0, 4.0, 4.0, 4.5, 3.9, 4.0, 4.0, 4.0]
    epochs_run = 0
    for epoch, loss in enumerate(losses, start=1):
        stop.update(epoch, loss)
        epochs_run = epoch
        if stop.should_stop:
            break
    assert epochs_run == 8 and stop.best_epoch == 5


def test_train_restores_best_and_stops(small_corpus, tiny_embedder):
    scripted = {1: 3.0, 2: 1.0, 3: 2.0, 4: 2.0, 5: 0.5}
    snapshots = {}

    def on_epoch(epoch, result):
        snapshots[epoch] = {k: p.data.copy() for k, p in result.model.params.items()}

    cfg = replace(TINY_TRAIN, max_epochs=5, patience=2)
    result = train_separator(small_corpus, small_corpus, tiny_embedder, TINY_MODEL, cfg,
                             val_hook=lambda e, v: scripted[e], on_epoch=on_epoch)
    assert result.stopped_early and len(result.history) == 4
    assert result.best_epoch == 2
    for name, p in result.model.params.items():
        assert np.array_equal(p.data, snapshots[2][name])
    assert not np.array_equal(snapshots[2]["transform.dense.w"], snapshots[4]["transform.dense.w"])


def test_validation_set_is_fixed(small_corpus, tiny_embedder):
    # with a zero learning rate every epoch must report the same validation loss
    cfg = replace(TINY_TRAIN, lr=1e-12, max_epochs=3)
    result = train_separator(small_corpus, small_corpus, tiny_embedder, TINY_MODEL, cfg)
    vals = [v for _, _, v in result.history]
    assert vals[0] == pytest.approx(vals[1], rel=1e-6) and vals[1] == pytest.approx(vals[2], rel=1e-6)


def test_training_deterministic(small_corpus, tiny_embedder):
    a = train_separator(small_corpus, small_corpus, tiny_embedder, TINY_MODEL, replace(TINY_TRAIN, pool_size=None))
    b = train_separator(small_corpus, small_corpus, tiny_embedder, TINY_MODEL, replace(TINY_TRAIN, pool_size=None))
    assert a.step_losses == b.step_losses and a.history == b.history


def test_nan_aborts_with_state(small_corpus, tiny_embedder):
    with pytest.raises(NumericError) as info:
        train_separator(small_corpus, small_corpus, tiny_embedder, TINY_MODEL, TINY_TRAIN, fault_step=3)
    assert "step 3" in str(info.value)
    assert len(info.value.state.step_losses) == 3


def test_config_mismatches(small_corpus, tiny_embedder):
    with pytest.raises(ConfigError):
        train_separator(small_corpus, small_corpus, None, TINY_MODEL, TINY_TRAIN)
    with pytest.raises(ConfigError):
        train_separator(small_corpus, small_corpus, tiny_embedder, replace(TINY_MODEL, embed_dim=5), TINY_TRAIN)
    with pytest.raises(ConfigError):
        train_separator(small_corpus, small_corpus, tiny_embedder, replace(TINY_MODEL, freq_bins=9), TINY_TRAIN)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(DataError):
        MixtureSource(small_corpus, TrainConfig(mix_mode="noisy"))


def test_noisy_and_pit_training_run(small_corpus, noise_set):
    cfg = replace(TINY_TRAIN, mix_mode="noisy", max_epochs=1)
    pit = ablation_config("pit", TINY_MODEL)
    result = train_separator(small_corpus, small_corpus, None, pit, cfg, noise_set=noise_set)
    assert np.isfinite(result.history[0][1])
    with pytest.raises(ConfigError):
        ablation_config("bogus", TINY_MODEL)


# --- inference and evaluation ----------------------------------------------------------

def test_separate_identity_mask_conserves_mixture(small_corpus, tiny_embedder):
    s = MixtureSource(small_corpus, TINY_TRAIN)(4)
    model = AtssNet(TINY_MODEL)
    model.forced_mask = 1.0
    out = separate(s.mixture, s.reference, tiny_embedder, model)
    assert len(out) == len(s.mixture)
    assert np.max(np.abs(out[400:-400] - s.mixture[400:-400])) < 1e-6


def test_separate_length_and_pit_pair(small_corpus, tiny_embedder):
    x = small_corpus["spk00"][0]
    odd = dsp.Waveform(x.samples[:7777])
    assert len(separate(odd, x, tiny_embedder, AtssNet(TINY_MODEL))) == 7777
    pair = separate(odd, None, None, AtssNet(ablation_config("pit", TINY_MODEL)))
    assert isinstance(pair, tuple) and len(pair) == 2 and len(pair[1]) == 7777


def test_evaluate_identity_hook(small_corpus):
    samples = [MixtureSource(small_corpus, TINY_TRAIN)(sample_seed(0, i)) for i in range(3)]
    report = evaluate(samples, None, None, separate_fn=lambda s: s.target)
    for row, s in zip(report.rows, samples):
        assert row["after"] == SDR_CAP and row["before"] == pytest.approx(sdr(s.target, s.mixture))
    assert report.sdr_after_mean == SDR_CAP
    assert report.sdr_improved_mean == pytest.approx(report.sdr_after_mean - report.sdr_before_mean, abs=1e-9)
    assert report.sdr_before_mean == pytest.approx(np.mean([r["before"] for r in report.rows]), abs=1e-9)
    payload = json.loads(json.dumps(report.to_json()))
    assert set(payload) == {"n", "sdr_before_mean", "sdr_after_mean", "sdr_improved_mean", "samples"}
    assert report.summary_line().startswith("SDR before=")
    with pytest.raises(DataError):
        evaluate([], None, None)


def test_evaluate_pit_scores_best_output(small_corpus):
    s = MixtureSource(small_corpus, TINY_TRAIN)(1)
    report = evaluate([s], None, None, separate_fn=lambda x: (x.interference, x.target))
    assert report.rows[0]["after"] == SDR_CAP


def test_eval_report_noisy_rows():
    report = EvalReport([{"id": "0", "before": 1.0, "after": 3.0, "snr_db": 7.0}])
    assert report.to_json()["samples"][0]["snr_db"] == 7.0


def test_no_attention_has_fewer_parameters():
    full = AtssNet(ModelConfig())
    none = AtssNet(ablation_config("no_attention", ModelConfig()))
    assert none.n_parameters() < full.n_parameters()


def test_run_ablation_dispatch(small_corpus, tiny_embedder):
    samples = [MixtureSource(small_corpus, TINY_TRAIN)(9)]
    cfg = replace(TINY_TRAIN, max_epochs=1)
    report, result = run_ablation("no_attention", small_corpus, small_corpus, tiny_embedder, TINY_MODEL, cfg, samples)
    assert result.model.cfg.mode == "no_attention" and report.n == 1


# --- desk-scale training -------------------------------------------------------------------

@pytest.mark.slow
def test_desk_training_reduces_loss_and_separates(desk_runs):
    run = desk_runs.get("full", 0)
    losses = run.result.step_losses
    assert len(losses) == desk.TRAIN.max_epochs * desk.TRAIN.steps_per_epoch == 300
    assert np.mean(losses[-10:]) < 0.25 * losses[0]
    assert run.improvement > 5.0


@pytest.mark.slow
def test_trained_masks_depend_on_embedding(desk_runs, desk_speech, desk_embedder):
    from atss_net.embedder import embed

    model = desk_runs.get("full", 0).result.model
    sample = desk.held_in_pool(desk_speech)[0]
    mag = np.abs(dsp.stft(sample.mixture))
    other = next(s for s in sorted(desk_speech) if s != sample.target_speaker)
    a = atss_forward(mag, embed(sample.reference, desk_embedder), model).data
    b = atss_forward(mag, embed(desk_speech[other][0], desk_embedder), model).data
    assert np.max(np.abs(a - b)) > 1e-6
