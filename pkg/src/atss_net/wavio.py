"""16-bit PCM mono WAV reading and writing on top of the stdlib ``wave`` module."""
from __future__ import annotations

import sys
import wave
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, Waveform
from .errors import DataError

_FULL_SCALE = 32768.0


def read_wav(path) -> Waveform:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except FileNotFoundError:
        raise DataError(f"no such WAV file: {path}") from None
    except (wave.Error, EOFError) as exc:
        raise DataError(f"malformed WAV file {path}: {exc}") from None
    if channels != 1:
        raise DataError(f"{path}: expected mono audio, found {channels} channels")
    if width != 2:
        raise DataError(f"{path}: expected 16-bit PCM, found {8 * width}-bit samples")
    if rate != SAMPLE_RATE:
        # there is no resampler; features and framing assume 16 kHz
        raise DataError(f"{path}: expected {SAMPLE_RATE} Hz audio, found {rate} Hz")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _FULL_SCALE
    return Waveform(samples, rate)


def to_pcm16(samples) -> tuple[np.ndarray, int]:
    """Quantize to int16, clamping to [-1, 1). Returns (pcm, clipped_count)."""
    x = np.asarray(samples, dtype=np.float64)
    top = (_FULL_SCALE - 1) / _FULL_SCALE
    clipped = int(np.count_nonzero((x < -1.0) | (x > top)))
    x = np.clip(x, -1.0, top)
    return np.round(x * _FULL_SCALE).astype("<i2"), clipped


def write_wav(path, wave_or_samples, sample_rate: int = SAMPLE_RATE, warn=True) -> int:
    """Write 16-bit mono PCM; returns the number of clamped samples."""
    if isinstance(wave_or_samples, Waveform):
        samples, sample_rate = wave_or_samples.samples, wave_or_samples.sample_rate
    else:
        samples = wave_or_samples
    pcm, clipped = to_pcm16(samples)
    if clipped and warn:
        print(f"warning: clamped {clipped} samples while writing {path}", file=sys.stderr)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())
    return clipped
