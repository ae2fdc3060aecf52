"""Signal-processing primitives: framing, STFT/ISTFT, log-Mel features, VAD, mixing.

All functions are pure. Spectrograms are plain ``numpy`` arrays shaped
``(frames, bins)``; waveforms may be passed either as :class:`Waveform` or as
1-D arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, ShapeError, TooShortError

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise DataError("waveform contains NaN or Inf")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 400
    hop: int = 160
    fft_size: int = 512

    def __post_init__(self):
        if min(self.frame_len, self.hop, self.fft_size) <= 0:
            raise ValueError("STFT sizes must be positive")
        if not self.hop <= self.frame_len <= self.fft_size:
            raise ValueError("need hop <= frame_len <= fft_size")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.frame_len) // self.hop


@dataclass(frozen=True)
class FbankConfig:
    n_mels: int = 64
    frame_len: int = 400
    hop: int = 160
    fft_size: int = 512
    sample_rate: int = SAMPLE_RATE
    floor: float = 1e-10

    def __post_init__(self):
        if self.n_mels >= self.fft_size // 2 + 1:
            raise ValueError("n_mels must be smaller than the number of FFT bins")


def _as_samples(wave) -> np.ndarray:
    if isinstance(wave, Waveform):
        return wave.samples
    x = np.asarray(wave, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D signal, got shape {x.shape}")
    return x


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    if n < 1:
        raise ValueError("window length must be >= 1")
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


def frame_signal(wave, frame_len: int, hop: int) -> np.ndarray:
    """Split into overlapping frames without padding; returns an owned (T, frame_len) array."""
    x = _as_samples(wave)
    if len(x) < frame_len:
        raise TooShortError(f"signal has {len(x)} samples, need at least {frame_len}")
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    return np.array(windows)


def stft(wave, cfg: StftConfig = StftConfig()) -> np.ndarray:
    frames = frame_signal(wave, cfg.frame_len, cfg.hop)
    frames *= hann_window(cfg.frame_len)
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


# interior sums of squared windows stay >= 0.85 for the default framing,
# so this floor only touches the first and last few dozen samples
WOLA_FLOOR = 0.1


def istft(spec: np.ndarray, cfg: StftConfig = StftConfig(), out_len: int | None = None,
          floor: float = WOLA_FLOOR) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`.

    Uses the analysis window for synthesis and divides by the summed squared
    window, so any hop < frame_len reconstructs the interior exactly. Samples
    with negligible window support (sum < 1e-8) come out as zero. Near the
    edges the divisor is clamped to ``floor``: there the sum of squared windows
    is tiny and dividing by it would amplify any masking error by up to 1/w.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != cfg.n_bins:
        raise ShapeError(f"spectrogram shape {spec.shape} does not match {cfg.n_bins} bins")
    n_frames = spec.shape[0]
    win = hann_window(cfg.frame_len)
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, : cfg.frame_len] * win
    total = cfg.frame_len + (n_frames - 1) * cfg.hop
    out = np.zeros(total)
    wsum = np.zeros(total)
    for t in range(n_frames):
        start = t * cfg.hop
        out[start : start + cfg.frame_len] += frames[t]
        wsum[start : start + cfg.frame_len] += win**2
    covered = wsum >= 1e-8
    out[covered] /= np.maximum(wsum[covered], floor)
    out[~covered] = 0.0
    if out_len is None:
        return out
    if out_len <= total:
        return out[:out_len]
    return np.concatenate([out, np.zeros(out_len - total)])


def magnitude_phase(spec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # np.angle(0) is 0, which is the convention we want for silent bins;
    # a negative real with imaginary part -0.0 gives -pi, folded to +pi
    phase = np.angle(spec)
    return np.abs(spec), np.where(phase == -np.pi, np.pi, phase)


def reconstruct(mag: np.ndarray, phase: np.ndarray) -> np.ndarray:
    mag = np.asarray(mag)
    phase = np.asarray(phase)
    if mag.shape != phase.shape:
        raise ShapeError(f"magnitude {mag.shape} and phase {phase.shape} differ")
    return mag * np.exp(1j * phase)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    return edges[1:-1]


def mel_filterbank(cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    """Triangular HTK-mel filters spanning 0 Hz to Nyquist, shape (n_mels, n_bins)."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    freqs = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel_fbank(wave, cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    frames = frame_signal(wave, cfg.frame_len, cfg.hop) * hann_window(cfg.frame_len)
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    mel = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.floor))


def energy_vad(fbank: np.ndarray, threshold_db: float = 40.0) -> np.ndarray:
    """Indices of frames whose log-Mel energy lies within ``threshold_db`` of the loudest frame."""
    fbank = np.atleast_2d(np.asarray(fbank, dtype=np.float64))
    if fbank.shape[0] < 1:
        raise DataError("VAD needs at least one frame")
    energy = logsumexp(fbank, axis=1)
    best = int(np.argmax(energy))
    keep = energy > energy[best] - threshold_db * np.log(10.0) / 10.0
    keep[best] = True
    return np.flatnonzero(keep)


def rms(wave) -> float:
    x = _as_samples(wave)
    return float(np.sqrt(np.mean(x * x)))


def rms_normalize(wave, target_rms: float = 0.05):
    x = _as_samples(wave)
    level = rms(x)
    if level == 0.0:
        raise DataError("cannot RMS-normalize an all-zero signal")
    out = x * (target_rms / level)
    if isinstance(wave, Waveform):
        return Waveform(out, wave.sample_rate)
    return out


def power(wave) -> float:
    x = _as_samples(wave)
    return float(np.mean(x * x))


def mix_at_snr(speech, noise, snr_db: float):
    """Scale ``noise`` so speech-to-noise power is ``snr_db``; returns (mixture, scaled_noise)."""
    s = _as_samples(speech)
    n = _as_samples(noise)
    if len(s) != len(n):
        raise ShapeError(f"speech has {len(s)} samples but noise has {len(n)}")
    ps, pn = power(s), power(n)
    if ps == 0.0 or pn == 0.0:
        raise DataError("mix_at_snr needs non-zero speech and noise")
    gain = np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))
    scaled = gain * n
    return s + scaled, scaled
