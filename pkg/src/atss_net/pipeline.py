"""Separator training, inference and SDR evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsp
from .autodiff import AdamState, adam_step, no_grad
from .dsp import StftConfig
from .embedder import SpeakerEmbedder, embed
from .errors import ConfigError, DataError, NumericError
from .model import AtssNet, ModelConfig, apply_mask, atss_forward, l2_loss, pit_loss
from .simulate import SEGMENT, MixtureSample, sample_seed, simulate_noisy, simulate_two_speaker

log = logging.getLogger(__name__)

SDR_CAP = 60.0


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 10
    steps_per_epoch: int = 100
    val_size: int = 64
    seed: int = 0
    segment: int = SEGMENT
    mix_mode: str = "two_speaker"
    snr_range: tuple = (5.0, 20.0)
    # draw training mixtures from a fixed pool of this many seeds; None = fresh every step
    pool_size: int | None = None

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "patience", "steps_per_epoch", "val_size", "segment"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.lr <= 0:
            raise ConfigError("train.lr must be positive")
        if self.mix_mode not in ("two_speaker", "noisy"):
            raise ConfigError(f"unknown mix mode {self.mix_mode!r}")
        if self.pool_size is not None and self.pool_size <= 0:
            raise ConfigError("pool_size must be positive")


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs bring no new strict minimum."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record an epoch's validation loss; returns True if it is a new best."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class TrainResult:
    model: AtssNet
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    step_losses: list = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False


class MixtureSource:
    """Seeded sample factory for one corpus and mixing mode."""

    def __init__(self, corpus, cfg: TrainConfig, noise_set=None):
        self.corpus = corpus
        self.cfg = cfg
        self.noise_set = noise_set
        if cfg.mix_mode == "noisy" and not noise_set:
            raise DataError("noisy mixing needs a noise set")

    def __call__(self, seed: int) -> MixtureSample:
        if self.cfg.mix_mode == "noisy":
            return simulate_noisy(self.corpus, self.noise_set, seed, self.cfg.snr_range, self.cfg.segment)
        return simulate_two_speaker(self.corpus, seed, self.cfg.segment)


class EmbeddingCache:
    """Embeds each reference utterance once; references are keyed by (speaker, utterance index)."""

    def __init__(self, embedder: SpeakerEmbedder | None):
        self.embedder = embedder
        self._cache = {}

    def __call__(self, sample: MixtureSample) -> np.ndarray:
        key = sample.reference_key or id(sample.reference)
        if key not in self._cache:
            self._cache[key] = embed(sample.reference, self.embedder)
        return self._cache[key]


def _magnitudes(samples, stft_cfg, interference=False):
    mix = np.stack([np.abs(dsp.stft(s.mixture, stft_cfg)) for s in samples]).astype(np.float32)
    tgt = np.stack([np.abs(dsp.stft(s.target, stft_cfg)) for s in samples]).astype(np.float32)
    if not interference:
        return mix, tgt
    other = np.stack([np.abs(dsp.stft(s.interference, stft_cfg)) for s in samples]).astype(np.float32)
    return mix, np.stack([tgt, other], axis=1)


def batch_loss(model: AtssNet, samples, embeddings: EmbeddingCache, stft_cfg: StftConfig):
    """Mean per-example loss as a differentiable scalar."""
    if model.cfg.mode == "pit":
        mix, targets = _magnitudes(samples, stft_cfg, interference=True)
        loss, _ = pit_loss(atss_forward(mix, None, model), mix, targets)
        return loss
    mix, tgt = _magnitudes(samples, stft_cfg)
    emb = np.stack([embeddings(s) for s in samples])
    return l2_loss(apply_mask(mix, atss_forward(mix, emb, model)), tgt)


def _validation_loss(model, samples, embeddings, stft_cfg, chunk=8):
    total = 0.0
    with no_grad():
        for i in range(0, len(samples), chunk):
            part = samples[i : i + chunk]
            total += batch_loss(model, part, embeddings, stft_cfg).item() * len(part)
    return total / len(samples)


def _snapshot(model):
    return {k: p.data.copy() for k, p in model.params.items()}


def _restore(model, snap):
    for k, p in model.params.items():
        p.data = snap[k].copy()


def train_separator(train_corpus, val_corpus, embedder, model_cfg: ModelConfig, train_cfg: TrainConfig,
                    stft_cfg: StftConfig = StftConfig(), noise_set=None, val_hook=None, fault_step=None,
                    on_epoch=None) -> TrainResult:
    """Adam on the masked-magnitude l2 (or PIT) loss with best-validation early stopping.

    ``val_hook(epoch, loss) -> loss`` may substitute validation losses (tests
    script early stopping with it). ``fault_step`` injects a NaN loss at that
    global step.
    """
    if model_cfg.freq_bins != stft_cfg.n_bins:
        raise ConfigError(f"model expects {model_cfg.freq_bins} bins, STFT gives {stft_cfg.n_bins}")
    if model_cfg.uses_embedding:
        if embedder is None:
            raise ConfigError("this separator needs a speaker embedder")
        if embedder.cfg.embed_dim != model_cfg.embed_dim:
            raise ConfigError(f"embedder dim {embedder.cfg.embed_dim} != model.embed_dim {model_cfg.embed_dim}")
    cfg = train_cfg
    model = AtssNet(model_cfg, seed=cfg.seed)
    train_src = MixtureSource(train_corpus, cfg, noise_set)
    val_src = MixtureSource(val_corpus, cfg, noise_set)
    embeddings = EmbeddingCache(embedder)
    val_samples = [val_src(sample_seed(cfg.seed, 1, i)) for i in range(cfg.val_size)]
    pool = None
    if cfg.pool_size is not None:
        pool = [train_src(sample_seed(cfg.seed, 0, i)) for i in range(cfg.pool_size)]
    state = AdamState(lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    result = TrainResult(model)
    best = _snapshot(model)
    rng = np.random.default_rng(sample_seed(cfg.seed, 2))
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        epoch_losses = []
        for _ in range(cfg.steps_per_epoch):
            if pool is not None:
                batch = [pool[i] for i in rng.integers(len(pool), size=cfg.batch_size)]
            else:
                batch = [train_src(sample_seed(cfg.seed, 3, step, i)) for i in range(cfg.batch_size)]
            loss = batch_loss(model, batch, embeddings, stft_cfg)
            value = np.nan if fault_step == step else loss.item()
            if not np.isfinite(value):
                raise NumericError(f"loss became {value} at step {step} (epoch {epoch})", state=result)
            for p in model.params.values():
                p.grad = None
            loss.backward()
            adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state)
            epoch_losses.append(value)
            result.step_losses.append(value)
            step += 1
        val = _validation_loss(model, val_samples, embeddings, stft_cfg)
        if val_hook is not None:
            val = val_hook(epoch, val)
        train_loss = float(np.mean(epoch_losses))
        result.history.append((epoch, train_loss, float(val)))
        log.info("epoch %d train %.4f val %.4f", epoch, train_loss, val)
        if stopper.update(epoch, val):
            best = _snapshot(model)
        if on_epoch is not None:
            on_epoch(epoch, result)
        if stopper.should_stop:
            result.stopped_early = True
            break
    _restore(model, best)
    result.best_epoch = stopper.best_epoch
    return result


# inference and evaluation --------------------------------------------------

def separate(mixture, reference, embedder, model: AtssNet, stft_cfg: StftConfig = StftConfig()):
    """Mask the mixture magnitude, reuse the mixture phase, and invert.

    Returns one waveform, or a pair for the PIT variant. Output length equals
    the mixture length.
    """
    x = mixture.samples if isinstance(mixture, dsp.Waveform) else np.asarray(mixture, dtype=np.float64)
    spec = dsp.stft(x, stft_cfg)
    mag, phase = dsp.magnitude_phase(spec)
    emb = None
    if model.cfg.uses_embedding:
        emb = embed(reference, embedder)
    with no_grad():
        masks = atss_forward(mag.astype(np.float32), emb, model).data.astype(np.float64)
    if model.cfg.n_outputs == 1:
        return dsp.istft(dsp.reconstruct(apply_mask(mag, masks), phase), stft_cfg, len(x))
    return tuple(dsp.istft(dsp.reconstruct(apply_mask(mag, m), phase), stft_cfg, len(x)) for m in masks)


def sdr(reference, estimate) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +60."""
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"sdr: lengths differ ({ref.shape} vs {est.shape})")
    energy = ref @ ref
    if energy == 0.0:
        raise ValueError("sdr: reference is all zeros")
    target = (est @ ref) / energy * ref
    signal = target @ target
    residual = est - target
    noise = residual @ residual
    if noise < 1e-12 * signal or signal == 0.0 and noise == 0.0:
        return SDR_CAP
    if signal == 0.0:
        return -SDR_CAP
    return float(min(SDR_CAP, 10.0 * np.log10(signal / noise)))


@dataclass
class EvalReport:
    rows: list  # dicts with id, before, after and optional snr_db

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def sdr_before_mean(self) -> float:
        return float(np.mean([r["before"] for r in self.rows]))

    @property
    def sdr_after_mean(self) -> float:
        return float(np.mean([r["after"] for r in self.rows]))

    @property
    def sdr_improved_mean(self) -> float:
        return self.sdr_after_mean - self.sdr_before_mean

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "sdr_before_mean": self.sdr_before_mean,
            "sdr_after_mean": self.sdr_after_mean,
            "sdr_improved_mean": self.sdr_improved_mean,
            "samples": self.rows,
        }

    def summary_line(self) -> str:
        return (f"SDR before={self.sdr_before_mean:.2f} after={self.sdr_after_mean:.2f} "
                f"improved={self.sdr_improved_mean:.2f}")


def evaluate(samples, embedder, model, stft_cfg: StftConfig = StftConfig(), separate_fn=None) -> EvalReport:
    """SDR of the mixture and of the separated estimate against each target.

    For two-output (PIT) models the better-matching output is scored.
    ``separate_fn(sample)`` overrides the separation step (test hook).
    """
    samples = list(samples)
    if not samples:
        raise DataError("evaluation needs at least one sample")
    rows = []
    for i, s in enumerate(samples):
        if separate_fn is not None:
            est = separate_fn(s)
        else:
            est = separate(s.mixture, s.reference, embedder, model, stft_cfg)
        if isinstance(est, tuple):
            after = max(sdr(s.target, e) for e in est)
        else:
            after = sdr(s.target, est)
        row = {"id": getattr(s, "sample_id", None) or f"{i:05d}", "before": sdr(s.target, s.mixture), "after": after}
        if s.snr_db is not None:
            row["snr_db"] = s.snr_db
        rows.append(row)
    return EvalReport(rows)


ABLATIONS = ("full", "no_attention", "pit")


def ablation_config(mode: str, base: ModelConfig) -> ModelConfig:
    if mode not in ABLATIONS:
        raise ConfigError(f"unknown ablation mode {mode!r}; choose from {ABLATIONS}")
    return replace(base, mode=mode)


def run_ablation(mode, train_corpus, val_corpus, embedder, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 eval_samples, stft_cfg: StftConfig = StftConfig(), noise_set=None):
    """Train the requested variant and evaluate it; returns (EvalReport, TrainResult)."""
    cfg = ablation_config(mode, model_cfg)
    result = train_separator(train_corpus, val_corpus, embedder, cfg, train_cfg, stft_cfg, noise_set)
    return evaluate(eval_samples, embedder, result.model, stft_cfg), result
