"""Speaker embedding extractor: ResNet over log-Mel features, mean/std pooling, two linear layers.

Trained as a closed-set speaker classifier. At inference the classifier head is
dropped and the first linear layer's output is the embedding.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .autodiff import AdamState, Tensor, adam_step, no_grad
from .autodiff import functional as fn
from .errors import ConfigError, DataError, NumericError, ShapeError

log = logging.getLogger(__name__)

STAGE_STRIDES = (1, 2, 2, 2)
MIN_FRAMES = 16


@dataclass(frozen=True)
class EmbedderConfig:
    channels: tuple = (16, 32, 64, 128)
    embed_dim: int = 256
    n_speakers: int = 2
    n_mels: int = 64

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != len(STAGE_STRIDES) or min(self.channels) <= 0:
            raise ConfigError("channels must list four positive widths")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.n_speakers < 2:
            raise ConfigError("need at least two training speakers")


@dataclass
class EmbedderTrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 20
    steps_per_epoch: int = 20
    crop_frames: int = 64
    seed: int = 0


def _blocks(cfg: EmbedderConfig):
    """(prefix, in_ch, out_ch, stride) for each residual block."""
    c_in = cfg.channels[0]
    for s, (c_out, stride) in enumerate(zip(cfg.channels, STAGE_STRIDES), start=1):
        for b in (1, 2):
            yield f"embed.stage{s}.block{b}", c_in, c_out, stride if b == 1 else 1
            c_in = c_out


def init_embedder_params(cfg: EmbedderConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def add(name, value):
        params[name] = Tensor(value, requires_grad=True, name=name)

    def he(c_out, c_in, k):
        return rng.standard_normal((c_out, c_in, k, k)) * math.sqrt(2.0 / (c_in * k * k))

    c0 = cfg.channels[0]
    add("embed.stem.kernel", he(c0, 1, 3))
    add("embed.stem.scale", np.ones(c0))
    for prefix, c_in, c_out, stride in _blocks(cfg):
        add(f"{prefix}.conv1.kernel", he(c_out, c_in, 3))
        add(f"{prefix}.conv1.scale", np.ones(c_out))
        add(f"{prefix}.conv2.kernel", he(c_out, c_out, 3))
        # last scale of each residual branch starts small so blocks begin near identity
        add(f"{prefix}.conv2.scale", np.full(c_out, 0.2))
        if stride != 1 or c_in != c_out:
            add(f"{prefix}.short.kernel", he(c_out, c_in, 1))
            add(f"{prefix}.short.scale", np.ones(c_out))
    pooled = 2 * cfg.channels[-1]
    add("embed.fc1.w", rng.standard_normal((pooled, cfg.embed_dim)) * math.sqrt(1.0 / pooled))
    add("embed.fc1.b", np.zeros(cfg.embed_dim))
    add("embed.fc2.w", rng.standard_normal((cfg.embed_dim, cfg.n_speakers)) * math.sqrt(1.0 / cfg.embed_dim))
    add("embed.fc2.b", np.zeros(cfg.n_speakers))
    return params


class SpeakerEmbedder:
    def __init__(self, cfg: EmbedderConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        if params is None:
            params = init_embedder_params(cfg, seed)
        else:
            want = {k: v.shape for k, v in init_embedder_params(cfg, 0).items()}
            body = {k: tuple(v.shape) for k, v in params.items()}
            head_free = {k: v for k, v in want.items() if not k.startswith("embed.fc2")}
            if body != want and body != head_free:
                raise ShapeError("embedder parameters do not match the configuration")
        self.params = params

    @classmethod
    def from_params(cls, params: dict[str, Tensor]) -> "SpeakerEmbedder":
        """Rebuild the configuration from parameter shapes (as stored in checkpoints)."""
        channels = [params["embed.stem.kernel"].shape[0]]
        for s in (2, 3, 4):
            channels.append(params[f"embed.stage{s}.block1.conv1.kernel"].shape[0])
        embed_dim = params["embed.fc1.w"].shape[1]
        n_speakers = params["embed.fc2.w"].shape[1] if "embed.fc2.w" in params else 2
        cfg = EmbedderConfig(tuple(channels), embed_dim, n_speakers)
        return cls(cfg, params)

    @property
    def has_head(self) -> bool:
        return "embed.fc2.w" in self.params

    def without_head(self) -> "SpeakerEmbedder":
        body = {k: v for k, v in self.params.items() if not k.startswith("embed.fc2")}
        return SpeakerEmbedder(self.cfg, body)

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def _scale(x, s):
    return fn.mul(x, fn.reshape(s, (s.shape[0], 1, 1)))


def resnet_forward(fbank, model: SpeakerEmbedder):
    """``[T, n_mels]`` (or ``[B, T, n_mels]``) features to ``[B, C_last, ceil(T/8), ceil(n_mels/8)]`` maps."""
    p = model.params
    x = fbank if isinstance(fbank, Tensor) else Tensor(np.asarray(fbank))
    if x.ndim == 2:
        x = fn.reshape(x, (1, *x.shape))
    if x.ndim != 3:
        raise ShapeError(f"expected [T, n_mels] or [B, T, n_mels] features, got {x.shape}")
    if x.shape[1] < MIN_FRAMES:
        raise DataError(f"need at least {MIN_FRAMES} frames for three downsamplings, got {x.shape[1]}")
    h = fn.reshape(x, (x.shape[0], 1, *x.shape[1:]))
    h = fn.relu(_scale(fn.conv2d(h, p["embed.stem.kernel"]), p["embed.stem.scale"]))
    for prefix, _, _, stride in _blocks(model.cfg):
        branch = fn.relu(_scale(fn.conv2d(h, p[f"{prefix}.conv1.kernel"], stride=stride), p[f"{prefix}.conv1.scale"]))
        branch = _scale(fn.conv2d(branch, p[f"{prefix}.conv2.kernel"]), p[f"{prefix}.conv2.scale"])
        if f"{prefix}.short.kernel" in p:
            short = _scale(fn.conv2d(h, p[f"{prefix}.short.kernel"], stride=stride), p[f"{prefix}.short.scale"])
        else:
            short = h
        h = fn.relu(branch + short)
    return h


def embedding_tensor(fbank, model: SpeakerEmbedder):
    pooled = fn.stat_pool(resnet_forward(fbank, model))
    return fn.linear(pooled, model.params["embed.fc1.w"], model.params["embed.fc1.b"])


def classify(fbank, model: SpeakerEmbedder):
    """Speaker logits (softmax is left to the loss)."""
    if not model.has_head:
        raise ConfigError("this embedder has no classification head")
    hidden = embedding_tensor(fbank, model)
    return fn.linear(hidden, model.params["embed.fc2.w"], model.params["embed.fc2.b"])


def features(wave, threshold_db: float = 40.0) -> np.ndarray:
    """Log-Mel features of the voiced frames, mean-normalised over time."""
    fb = dsp.log_mel_fbank(wave)
    kept = fb[dsp.energy_vad(fb, threshold_db)]
    return kept - kept.mean(axis=0, keepdims=True)


def embed(wave_or_features, model: SpeakerEmbedder) -> np.ndarray:
    """Embedding vector for a waveform (or precomputed ``[T, n_mels]`` features)."""
    x = wave_or_features
    if isinstance(x, dsp.Waveform) or np.ndim(x) == 1:
        x = features(x)
    with no_grad():
        out = embedding_tensor(np.asarray(x), model).data[0]
    return out.copy()


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# training ------------------------------------------------------------------

@dataclass
class EmbedderTrainResult:
    model: SpeakerEmbedder
    history: list = field(default_factory=list)  # fixed-set loss: [init, after epoch 1, ...]
    speakers: list = field(default_factory=list)


def _crop_starts(n_frames, crop, count):
    if n_frames <= crop:
        return [0] * count
    return list(np.linspace(0, n_frames - crop, count).astype(int))


def _crop(feat, start, crop):
    if len(feat) >= crop:
        return feat[start : start + crop]
    reps = -(-crop // len(feat))
    return np.concatenate([feat] * reps)[:crop]


def fixed_set_loss(model, items, crop) -> float:
    """Mean cross-entropy over deterministic crops of every utterance."""
    xs, ys = [], []
    for feat, label in items:
        for s in _crop_starts(len(feat), crop, 2):
            xs.append(_crop(feat, s, crop))
            ys.append(label)
    with no_grad():
        losses = []
        for i in range(0, len(xs), 32):
            logits = classify(np.stack(xs[i : i + 32]), model)
            losses.append(fn.cross_entropy(logits, ys[i : i + 32]).item() * len(ys[i : i + 32]))
    return float(np.sum(losses) / len(ys))


def train_embedder(corpus, cfg: EmbedderConfig | None = None, train_cfg: EmbedderTrainConfig | None = None):
    """Train the classifier on ``corpus`` (mapping speaker id -> list of waveforms)."""
    train_cfg = train_cfg or EmbedderTrainConfig()
    speakers = sorted(corpus)
    if len(speakers) < 2 or any(len(corpus[s]) < 2 for s in speakers):
        raise DataError("embedder training needs >= 2 speakers with >= 2 utterances each")
    if cfg is None:
        cfg = EmbedderConfig(n_speakers=len(speakers))
    elif cfg.n_speakers != len(speakers):
        raise ConfigError(f"config expects {cfg.n_speakers} speakers, corpus has {len(speakers)}")
    items = []
    for label, spk in enumerate(speakers):
        for wave in corpus[spk]:
            feat = features(wave).astype(np.float32)
            if len(feat) < MIN_FRAMES:
                raise DataError(f"utterance of {spk} has only {len(feat)} voiced frames")
            items.append((feat, label))
    model = SpeakerEmbedder(cfg, seed=train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState(lr=train_cfg.lr)
    crop = train_cfg.crop_frames
    history = [fixed_set_loss(model, items, crop)]
    log.info("embedder init loss %.4f", history[0])
    for epoch in range(1, train_cfg.epochs + 1):
        for _ in range(train_cfg.steps_per_epoch):
            picks = rng.integers(len(items), size=train_cfg.batch_size)
            xs, ys = [], []
            for k in picks:
                feat, label = items[k]
                start = int(rng.integers(max(1, len(feat) - crop + 1)))
                xs.append(_crop(feat, start, crop))
                ys.append(label)
            loss = fn.cross_entropy(classify(np.stack(xs), model), ys)
            if not np.isfinite(loss.data):
                raise NumericError(f"embedder loss became {loss.item()} in epoch {epoch}", state=model)
            for p in model.params.values():
                p.grad = None
            loss.backward()
            adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state)
        history.append(fixed_set_loss(model, items, crop))
        log.info("embedder epoch %d loss %.4f", epoch, history[-1])
    return EmbedderTrainResult(model, history, speakers)
