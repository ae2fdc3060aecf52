"""Synthetic desk-scale corpora.

Each toy "speaker" is a harmonic source with its own pitch range and a fixed
formant-like spectral envelope. Utterances are sequences of voiced syllables
separated by short pauses, so the VAD and masks have real structure to work
with. Noise clips are filtered noise and tone clusters.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, Waveform
from .wavio import write_wav


@dataclass(frozen=True)
class ToySpeaker:
    f0: float
    formants: tuple  # (centre_hz, bandwidth_hz, gain) triples
    vibrato_hz: float
    tilt: float


def make_speakers(n: int, seed: int = 0) -> list[ToySpeaker]:
    rng = np.random.default_rng(seed)
    # log-spaced pitches with jitter; the span avoids exact octave pairs
    base = np.geomspace(95.0, 310.0, n) * rng.uniform(0.96, 1.04, n)
    order = rng.permutation(n)
    speakers = []
    for k in range(n):
        centres = np.sort(rng.uniform([300, 900, 2000], [900, 2000, 3800]))
        widths = rng.uniform(80, 300, 3)
        gains = rng.uniform(0.5, 1.0, 3)
        speakers.append(ToySpeaker(
            f0=float(base[order[k]]),
            formants=tuple(zip(centres.tolist(), widths.tolist(), gains.tolist())),
            vibrato_hz=float(rng.uniform(3.0, 7.0)),
            tilt=float(rng.uniform(0.6, 1.4)),
        ))
    return speakers


def _envelope(spk: ToySpeaker, freqs, shift=1.0):
    env = np.full_like(freqs, 0.02)
    for centre, width, gain in spk.formants:
        env += gain * np.exp(-0.5 * ((freqs - centre * shift) / width) ** 2)
    return env / (1.0 + freqs / 1000.0) ** spk.tilt


def synth_utterance(spk: ToySpeaker, seconds: float, rng, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    n = int(round(seconds * sample_rate))
    out = np.zeros(n)
    t = 0
    shift = rng.uniform(0.97, 1.03)
    while t < n:
        syl = int(rng.uniform(0.12, 0.35) * sample_rate)
        gap = int(rng.uniform(0.15, 0.5) * sample_rate)
        m = min(syl, n - t)
        tt = np.arange(m) / sample_rate
        f0 = spk.f0 * rng.uniform(0.94, 1.06) * (1.0 + 0.02 * np.sin(2 * np.pi * spk.vibrato_hz * tt))
        f0 *= np.linspace(1.0, rng.uniform(0.92, 1.08), m)
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        n_harm = int(sample_rate / 2 / f0.max())
        k = np.arange(1, n_harm + 1)
        amps = _envelope(spk, k * f0.mean(), shift)
        seg = np.sin(np.outer(phase, k) + rng.uniform(0, 2 * np.pi, n_harm)) @ amps
        ramp = np.minimum(1.0, np.minimum(np.arange(m), np.arange(m)[::-1]) / (0.02 * sample_rate))
        out[t : t + m] = seg * ramp
        t += syl + gap
    out += 1e-3 * np.std(out) * rng.standard_normal(n)
    return 0.1 * out / np.sqrt(np.mean(out**2))


def make_corpus(n_speakers=4, utts_per_speaker=6, seconds=(3.0, 4.0), seed=0, utterance_seed=None):
    """Mapping speaker id -> list of waveforms.

    ``seed`` fixes the speakers; ``utterance_seed`` (default: ``seed``) fixes
    the utterances, so a different value gives held-out speech from the same
    voices.
    """
    rng = np.random.default_rng(seed if utterance_seed is None else [seed, utterance_seed])
    speakers = make_speakers(n_speakers, seed)
    corpus = {}
    for k, spk in enumerate(speakers):
        corpus[f"spk{k:02d}"] = [
            Waveform(synth_utterance(spk, rng.uniform(*seconds), rng)) for _ in range(utts_per_speaker)
        ]
    return corpus


def make_noise_set(count=6, seconds=5.0, seed=0, sample_rate=SAMPLE_RATE):
    rng = np.random.default_rng(seed)
    n = int(seconds * sample_rate)
    clips = []
    for i in range(count):
        if i % 2 == 0:
            # band-limited noise
            spec = np.fft.rfft(rng.standard_normal(n))
            freqs = np.fft.rfftfreq(n, 1 / sample_rate)
            lo, hi = sorted(rng.uniform(100, 7000, 2))
            spec *= (freqs > lo) & (freqs < hi + 500)
            x = np.fft.irfft(spec, n)
        else:
            # slowly changing tone clusters
            tt = np.arange(n) / sample_rate
            x = sum(np.sin(2 * np.pi * rng.uniform(200, 4000) * tt) * (1 + np.sin(2 * np.pi * rng.uniform(0.2, 2) * tt))
                    for _ in range(5))
        clips.append(Waveform(0.1 * x / np.sqrt(np.mean(x**2))))
    return clips


def write_corpus(corpus, directory, manifest_name="manifest.tsv") -> Path:
    """Write WAVs and a ``speaker<TAB>path`` manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for spk, waves in corpus.items():
        for i, w in enumerate(waves):
            path = directory / f"{spk}_{i:03d}.wav"
            write_wav(path, w)
            lines.append(f"{spk}\t{path.name}")
    manifest = directory / manifest_name
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def write_noise(clips, directory, manifest_name="noise.tsv") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, w in enumerate(clips):
        path = directory / f"noise_{i:03d}.wav"
        write_wav(path, w)
        lines.append(path.name)
    manifest = directory / manifest_name
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
