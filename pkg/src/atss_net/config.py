"""Flat ``key=value`` configuration files.

Lines are ``key = value``; ``#`` starts a comment. Unknown keys are errors.
Defaults are the full-scale training setup; ``embed.*``, ``train.pool_size``
and ``mix.segment_seconds`` are desk-scale additions.
"""
from __future__ import annotations

from pathlib import Path

from .dsp import SAMPLE_RATE, StftConfig
from .embedder import EmbedderConfig, EmbedderTrainConfig
from .errors import ConfigError
from .model import AXES, MODES, ModelConfig
from .pipeline import TrainConfig


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _int_list(text):
    return tuple(int(v) for v in text.split(","))


SCHEMA = {
    "stft.frame_len": (int, 400),
    "stft.hop": (int, 160),
    "stft.fft_size": (int, 512),
    "model.n_blocks": (int, 3),
    "model.n_heads": (int, 2),
    "model.d_k": (int, 64),
    "model.embed_dim": (int, 256),
    "model.attention_axis": (_choice(AXES), "time"),
    "model.mode": (_choice(MODES), "full"),
    "train.lr": (float, 1e-4),
    "train.batch_size": (int, 16),
    "train.max_epochs": (int, 50),
    "train.patience": (int, 10),
    "train.seed": (int, 0),
    "train.steps_per_epoch": (int, 100),
    "train.val_size": (int, 64),
    "train.pool_size": (int, 0),
    "mix.mode": (_choice(("two_speaker", "noisy")), "two_speaker"),
    "mix.snr_min": (float, 5.0),
    "mix.snr_max": (float, 20.0),
    "mix.segment_seconds": (float, 3.0),
    "embed.channels": (_int_list, (16, 32, 64, 128)),
    "embed.lr": (float, 1e-4),
    "embed.batch_size": (int, 16),
    "embed.epochs": (int, 20),
    "embed.steps_per_epoch": (int, 20),
    "embed.crop_frames": (int, 64),
}


def _format(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


class Config:
    def __init__(self, values=None):
        self.values = {k: default for k, (_, default) in SCHEMA.items()}
        for k, v in (values or {}).items():
            self[k] = v

    def __getitem__(self, key):
        return self.values[key]

    def __setitem__(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        parse = SCHEMA[key][0]
        try:
            if isinstance(value, str) or parse in (int, float):
                value = parse(value)
            elif parse is _int_list:
                value = tuple(int(v) for v in value)
            else:
                value = parse(str(value))
            self.values[key] = value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value {value!r} for {key}: {exc}") from None

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "Config":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            try:
                cfg[key] = value
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        return cls.parse(text, str(path))

    def to_text(self) -> str:
        return "".join(f"{k}={_format(self.values[k])}\n" for k in SCHEMA)

    def validate(self):
        # constructing the typed configs runs their invariant checks
        try:
            self.stft_config()
            self.model_config()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self["mix.snr_min"] > self["mix.snr_max"]:
            raise ConfigError("mix.snr_min must not exceed mix.snr_max")

    def stft_config(self) -> StftConfig:
        return StftConfig(self["stft.frame_len"], self["stft.hop"], self["stft.fft_size"])

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_blocks=self["model.n_blocks"], n_heads=self["model.n_heads"], d_k=self["model.d_k"],
            freq_bins=self.stft_config().n_bins, embed_dim=self["model.embed_dim"],
            attention_axis=self["model.attention_axis"], mode=self["model.mode"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self["train.lr"], batch_size=self["train.batch_size"], max_epochs=self["train.max_epochs"],
            patience=self["train.patience"], steps_per_epoch=self["train.steps_per_epoch"],
            val_size=self["train.val_size"], seed=self["train.seed"],
            segment=int(round(self["mix.segment_seconds"] * SAMPLE_RATE)),
            mix_mode=self["mix.mode"], snr_range=(self["mix.snr_min"], self["mix.snr_max"]),
            pool_size=self["train.pool_size"] or None,
        )

    def embedder_config(self, n_speakers: int) -> EmbedderConfig:
        return EmbedderConfig(self["embed.channels"], self["model.embed_dim"], n_speakers)

    def embedder_train_config(self) -> EmbedderTrainConfig:
        return EmbedderTrainConfig(
            lr=self["embed.lr"], batch_size=self["embed.batch_size"], epochs=self["embed.epochs"],
            steps_per_epoch=self["embed.steps_per_epoch"], crop_frames=self["embed.crop_frames"],
            seed=self["train.seed"],
        )
