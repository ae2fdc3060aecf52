"""Corpus loading and on-the-fly mixture simulation (two-speaker and noisy)."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import SAMPLE_RATE, Waveform
from .errors import DataError
from .wavio import read_wav

SEGMENT = 3 * SAMPLE_RATE


@dataclass
class MixtureSample:
    mixture: np.ndarray
    target: np.ndarray
    reference: np.ndarray
    interference: np.ndarray
    target_speaker: str
    interference_id: str
    seed: int
    snr_db: float | None = None
    reference_key: tuple = ()
    meta: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        out = {"target_speaker": self.target_speaker, "interference": self.interference_id, "seed": self.seed}
        if self.snr_db is not None:
            out["snr_db"] = self.snr_db
        return out


def _samples(w):
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)


def load_manifest(path, min_samples: int = SEGMENT) -> dict[str, list[Waveform]]:
    """Read ``speaker<TAB>wav`` lines; utterances shorter than ``min_samples`` are dropped.

    Relative WAV paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    corpus: dict[str, list[Waveform]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'speaker<TAB>path'")
        spk, wav = parts
        wav_path = Path(wav) if Path(wav).is_absolute() else path.parent / wav
        w = read_wav(wav_path)
        if len(w) >= min_samples:
            corpus.setdefault(spk, []).append(w)
    return corpus


def load_noise_manifest(path) -> list[Waveform]:
    """One WAV path per line (an optional leading ``label<TAB>`` column is ignored)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"noise manifest not found: {path}")
    clips = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        wav = line.split("\t")[-1]
        clips.append(read_wav(Path(wav) if Path(wav).is_absolute() else path.parent / wav))
    if not clips:
        raise DataError(f"noise manifest {path} is empty")
    return clips


def _on_grid(x):
    # with |x| < 2**12 on a 2**-40 grid, sums and differences of two signals are exact in float64
    return np.round(x * 2.0**40) / 2.0**40


def _crop(rng, x, length):
    if len(x) < length:
        raise DataError(f"utterance of {len(x)} samples is shorter than the {length}-sample segment")
    start = int(rng.integers(len(x) - length + 1))
    return x[start : start + length], start


def simulate_two_speaker(corpus, seed: int, segment: int = SEGMENT) -> MixtureSample:
    """Two distinct speakers, random crops, RMS-normalised, summed at unit gain."""
    speakers = sorted(corpus)
    eligible = [s for s in speakers if len(corpus[s]) >= 2]
    if len(speakers) < 2 or not eligible:
        raise DataError("two-speaker simulation needs >= 2 speakers and one with >= 2 utterances")
    rng = np.random.default_rng(seed)
    target_spk = eligible[int(rng.integers(len(eligible)))]
    others = [s for s in speakers if s != target_spk]
    interf_spk = others[int(rng.integers(len(others)))]
    t_idx, r_idx = rng.choice(len(corpus[target_spk]), size=2, replace=False)
    i_idx = int(rng.integers(len(corpus[interf_spk])))
    target, t_off = _crop(rng, _samples(corpus[target_spk][t_idx]), segment)
    interf, i_off = _crop(rng, _samples(corpus[interf_spk][i_idx]), segment)
    target = _on_grid(dsp.rms_normalize(target))
    interf = _on_grid(dsp.rms_normalize(interf))
    return MixtureSample(
        mixture=target + interf,
        target=target,
        reference=_samples(corpus[target_spk][r_idx]).copy(),
        interference=interf,
        target_speaker=target_spk,
        interference_id=interf_spk,
        seed=seed,
        reference_key=(target_spk, int(r_idx)),
        meta={"target_offset": t_off, "interference_offset": i_off,
              "target_utt": int(t_idx), "interference_utt": i_idx},
    )


def simulate_noisy(corpus, noise_set, seed: int, snr_range=(5.0, 20.0), segment: int = SEGMENT) -> MixtureSample:
    """One speaker's utterance plus a random noise crop at an SNR drawn uniformly from ``snr_range``."""
    if not noise_set:
        raise DataError("noisy simulation needs a non-empty noise set")
    eligible = [s for s in sorted(corpus) if len(corpus[s]) >= 2]
    if not eligible:
        raise DataError("noisy simulation needs a speaker with >= 2 utterances")
    rng = np.random.default_rng(seed)
    spk = eligible[int(rng.integers(len(eligible)))]
    r_idx, s_idx = rng.choice(len(corpus[spk]), size=2, replace=False)
    speech, s_off = _crop(rng, _samples(corpus[spk][s_idx]), segment)
    speech = _on_grid(dsp.rms_normalize(speech))
    n_idx = int(rng.integers(len(noise_set)))
    noise = _samples(noise_set[n_idx])
    if len(noise) < segment:
        noise = np.tile(noise, -(-segment // len(noise)))
    noise, n_off = _crop(rng, noise, segment)
    snr = float(rng.uniform(*snr_range))
    scaled = _on_grid(dsp.mix_at_snr(speech, noise, snr)[1])
    mixture = speech + scaled
    return MixtureSample(
        mixture=mixture,
        target=speech,
        reference=_samples(corpus[spk][r_idx]).copy(),
        interference=scaled,
        target_speaker=spk,
        interference_id=f"noise{n_idx}",
        seed=seed,
        snr_db=snr,
        reference_key=(spk, int(r_idx)),
        meta={"target_offset": s_off, "noise_offset": n_off},
    )


def sample_seed(base_seed: int, *path: int) -> int:
    """Deterministic child seed for (base_seed, epoch, step, item, ...)."""
    ss = np.random.SeedSequence([base_seed, *path])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
