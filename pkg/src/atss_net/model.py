"""The attention-based separator: mask estimation from a mixture magnitude and a speaker embedding.

Tensors inside the network are laid out ``[B, C, T, F]`` (batch, channels,
time frames, frequency). The public functions also accept unbatched inputs.

Parameter names form part of the checkpoint format::

    block{i}.ln1.gamma, block{i}.ln1.beta
    block{i}.dcnn.conv{j}.kernel, block{i}.dcnn.conv{j}.bias     j = 1..6
    block{i}.attn.wq, .bq, .wk, .bk, .wv, .bv                    1x1 projections
    block{i}.attn.wo, block{i}.attn.bo                           3x3 output conv
    block{i}.ln2.gamma, block{i}.ln2.beta
    block{i}.ffn.w1, .b1, .w2, .b2
    transform.dense.w, transform.dense.b
    transform.conv.kernel, transform.conv.bias

Blocks are numbered from 1. The ``no_attention`` variant has no
``wq/bq/wk/bk/wo/bo``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, default_dtype
from .autodiff import functional as fn
from .errors import ConfigError, ShapeError

# kernel size, dilation (time, freq) for the shared dilated trunk
DCNN_LAYERS = (
    (5, (1, 1)),
    (5, (2, 1)),
    (5, (4, 1)),
    (5, (8, 1)),
    (5, (16, 1)),
    (1, (1, 1)),
)

MODES = ("full", "no_attention", "pit")
AXES = ("time", "freq")


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int = 3
    n_heads: int = 2
    d_k: int = 64
    freq_bins: int = 257
    embed_dim: int = 256
    ffn_mult: int = 4
    attention_axis: str = "time"
    mode: str = "full"

    def __post_init__(self):
        if min(self.n_blocks, self.n_heads, self.d_k, self.freq_bins, self.ffn_mult) <= 0:
            raise ConfigError("model sizes must be positive")
        if self.d_k % self.n_heads:
            raise ConfigError(f"d_k={self.d_k} is not divisible by n_heads={self.n_heads}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown model mode {self.mode!r}")
        if self.attention_axis not in AXES:
            raise ConfigError(f"attention_axis must be one of {AXES}")
        if self.mode != "pit" and self.embed_dim <= 0:
            raise ConfigError("embed_dim must be positive")

    @property
    def uses_embedding(self) -> bool:
        return self.mode != "pit"

    @property
    def width(self) -> int:
        """Feature width F after concatenating magnitude and embedding."""
        return self.freq_bins + (self.embed_dim if self.uses_embedding else 0)

    @property
    def ffn_hidden(self) -> int:
        return self.ffn_mult * self.width

    @property
    def n_outputs(self) -> int:
        return 2 if self.mode == "pit" else 1


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    F, dk = cfg.width, cfg.d_k

    def add(name, value):
        params[name] = Tensor(value, requires_grad=True, name=name)

    def normal(shape, std):
        return rng.standard_normal(shape) * std

    for i in range(1, cfg.n_blocks + 1):
        p = f"block{i}"
        add(f"{p}.ln1.gamma", np.ones(F))
        add(f"{p}.ln1.beta", np.zeros(F))
        c_in = 1 if i == 1 else dk
        for j, (k, _) in enumerate(DCNN_LAYERS, start=1):
            fan_in = c_in * k * k
            gain = 2.0 if j < len(DCNN_LAYERS) else 1.0
            add(f"{p}.dcnn.conv{j}.kernel", normal((dk, c_in, k, k), math.sqrt(gain / fan_in)))
            add(f"{p}.dcnn.conv{j}.bias", np.zeros(dk))
            c_in = dk
        # queries and keys start small so initial scores are O(1) despite the wide positions
        feat = (dk // cfg.n_heads) * (F if cfg.attention_axis == "time" else 1)
        qk_std = math.sqrt(1.0 / dk) * (dk / max(feat, dk)) ** 0.25
        names = ("wv",) if cfg.mode == "no_attention" else ("wq", "wk", "wv")
        for w in names:
            std = math.sqrt(1.0 / dk) if w == "wv" else qk_std
            add(f"{p}.attn.{w}", normal((dk, dk, 1, 1), std))
            add(f"{p}.attn.b{w[1]}", np.zeros(dk))
        if cfg.mode != "no_attention":
            # live from the start, like the no-attention variant's direct V' path
            add(f"{p}.attn.wo", normal((dk, dk, 3, 3), math.sqrt(1.0 / (9 * dk))))
            add(f"{p}.attn.bo", np.zeros(dk))
        add(f"{p}.ln2.gamma", np.ones(F))
        add(f"{p}.ln2.beta", np.zeros(F))
        add(f"{p}.ffn.w1", normal((F, cfg.ffn_hidden), math.sqrt(2.0 / F)))
        add(f"{p}.ffn.b1", np.zeros(cfg.ffn_hidden))
        add(f"{p}.ffn.w2", np.zeros((cfg.ffn_hidden, F)))
        add(f"{p}.ffn.b2", np.zeros(F))
    add("transform.dense.w", normal((F, cfg.freq_bins), math.sqrt(1.0 / F)))
    add("transform.dense.b", np.zeros(cfg.freq_bins))
    add("transform.conv.kernel", normal((cfg.n_outputs, dk, 3, 3), math.sqrt(1.0 / (9 * dk))))
    add("transform.conv.bias", np.zeros(cfg.n_outputs))
    return params


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    return {k: v.shape for k, v in init_params(cfg, 0).items()}


class AtssNet:
    """Parameters plus configuration; call with a magnitude batch and embeddings to get masks."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        if params is None:
            params = init_params(cfg, seed)
        else:
            want = expected_shapes(cfg)
            got = {k: tuple(v.shape) for k, v in params.items()}
            if got != want:
                missing = sorted(set(want) ^ set(got)) or [k for k in want if want[k] != got[k]]
                raise ShapeError(f"parameters do not match the model configuration: {missing[:5]}")
        self.params = params
        # test hook: replace the estimated mask by a constant
        self.forced_mask: float | None = None

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def __call__(self, mag, emb=None):
        return atss_forward(mag, emb, self)


# building blocks -----------------------------------------------------------

def concat_inputs(mag, emb) -> np.ndarray:
    """Append the embedding to every frame: ``[.., T, Fbar] + [.., Fe] -> [.., T, Fbar + Fe]``."""
    mag = np.asarray(mag)
    emb = np.asarray(emb)
    if mag.ndim not in (2, 3) or emb.ndim != mag.ndim - 1:
        raise ShapeError(f"concat_inputs: incompatible ranks {mag.shape} and {emb.shape}")
    if mag.ndim == 3 and emb.shape[0] != mag.shape[0]:
        raise ShapeError("concat_inputs: batch sizes differ")
    tiled = np.broadcast_to(emb[..., None, :], (*mag.shape[:-1], emb.shape[-1]))
    return np.concatenate([mag, tiled], axis=-1)


def dcnn_trunk(x, params, prefix):
    """Six-layer dilated stack; relu after all but the last (1x1) layer."""
    h = x
    for j, (_, dilation) in enumerate(DCNN_LAYERS, start=1):
        h = fn.conv2d(h, params[f"{prefix}.dcnn.conv{j}.kernel"], params[f"{prefix}.dcnn.conv{j}.bias"],
                      dilation=dilation)
        if j < len(DCNN_LAYERS):
            h = fn.relu(h)
    return h


def dcnn_extract(x, params, prefix, return_trunk=False):
    """Shared trunk followed by separate 1x1 projections to queries, keys and values."""
    trunk = dcnn_trunk(x, params, prefix)
    out = []
    for w in ("q", "k", "v"):
        kernel = params.get(f"{prefix}.attn.w{w}")
        out.append(None if kernel is None else fn.conv2d(trunk, kernel, params[f"{prefix}.attn.b{w}"]))
    if return_trunk:
        return (*out, trunk)
    return tuple(out)


def scaled_dot_attention(q, k, v, d_k, return_weights=False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes ``[.., positions, features]``."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"attention: mismatched shapes {q.shape}, {k.shape}, {v.shape}")
    scores = fn.matmul(q, fn.transpose(k, (*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)))
    weights = fn.softmax(scores * (1.0 / math.sqrt(d_k)), axis=-1)
    out = fn.matmul(weights, v)
    return (out, weights) if return_weights else out


def split_heads(x, n_heads, axis="time"):
    """``[B, C, T, F] -> [B, h, positions, features]``; positions are frames or bins."""
    b, c, t, f = x.shape
    if c % n_heads:
        raise ConfigError(f"{c} channels cannot be split into {n_heads} heads")
    ch = c // n_heads
    x = fn.reshape(x, (b, n_heads, ch, t, f))
    if axis == "time":
        return fn.reshape(fn.transpose(x, (0, 1, 3, 2, 4)), (b, n_heads, t, ch * f))
    return fn.reshape(fn.transpose(x, (0, 1, 4, 2, 3)), (b, n_heads, f, ch * t))


def merge_heads(x, shape, axis="time"):
    b, c, t, f = shape
    h = x.shape[1]
    ch = c // h
    if axis == "time":
        x = fn.transpose(fn.reshape(x, (b, h, t, ch, f)), (0, 1, 3, 2, 4))
    else:
        x = fn.transpose(fn.reshape(x, (b, h, f, ch, t)), (0, 1, 3, 4, 2))
    return fn.reshape(x, shape)


def multi_head_attention(q, k, v, wo, bo, n_heads, d_k, axis="time", return_weights=False):
    """Channel-split heads, attention per head, concatenation, then the 3x3 output conv.

    Inputs are ``[B, C, T, F]`` or ``[C, T, F]``.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    unbatched = q.ndim == 3
    if unbatched:
        q, k, v = (fn.reshape(t, (1, *t.shape)) for t in (q, k, v))
    shape = q.shape
    heads, weights = scaled_dot_attention(
        split_heads(q, n_heads, axis), split_heads(k, n_heads, axis), split_heads(v, n_heads, axis),
        d_k, return_weights=True)
    out = fn.conv2d(merge_heads(heads, shape, axis), wo, bo)
    if unbatched:
        out = fn.reshape(out, out.shape[1:])
    return (out, weights) if return_weights else out


def feed_forward(x, w1, b1, w2, b2):
    """Position-wise two-layer perceptron along the last (frequency) axis."""
    return fn.linear(fn.relu(fn.linear(x, w1, b1)), w2, b2)


def attention_block(x, params, prefix, cfg: ModelConfig, first=False):
    """Pre-norm residual block: temporal attention sublayer, then feed-forward sublayer.

    The first block sees a single input channel, so its residual stream is the
    dilated trunk's ``d_k``-channel output rather than the raw input.
    """
    normed = fn.layer_norm(x, params[f"{prefix}.ln1.gamma"], params[f"{prefix}.ln1.beta"])
    q, k, v, trunk = dcnn_extract(normed, params, prefix, return_trunk=True)
    if cfg.mode == "no_attention":
        attended = v
    else:
        attended = multi_head_attention(q, k, v, params[f"{prefix}.attn.wo"], params[f"{prefix}.attn.bo"],
                                        cfg.n_heads, cfg.d_k, cfg.attention_axis)
    stream = trunk if first else x
    u = stream + attended
    hidden = fn.layer_norm(u, params[f"{prefix}.ln2.gamma"], params[f"{prefix}.ln2.beta"])
    return u + feed_forward(hidden, params[f"{prefix}.ffn.w1"], params[f"{prefix}.ffn.b1"],
                            params[f"{prefix}.ffn.w2"], params[f"{prefix}.ffn.b2"])


def transform_block(x, dense_w, dense_b, conv_kernel, conv_bias):
    """Dense ``F -> Fbar`` per (channel, frame), 3x3 conv down to the output channels, sigmoid.

    ``[B, d_k, T, F] -> [B, n_out, T, Fbar]``.
    """
    h = fn.linear(x, dense_w, dense_b)
    return fn.sigmoid(fn.conv2d(h, conv_kernel, conv_bias))


def atss_forward(mag, emb, model: AtssNet):
    """Estimate the mask for ``mag`` (``[T, Fbar]`` or ``[B, T, Fbar]``).

    Returns ``[T, Fbar]`` / ``[B, T, Fbar]`` masks, or with a leading source
    axis of 2 for the PIT variant (``[2, T, Fbar]`` / ``[B, 2, T, Fbar]``).
    """
    cfg = model.cfg
    mag = np.asarray(mag.data if isinstance(mag, Tensor) else mag, dtype=default_dtype())
    unbatched = mag.ndim == 2
    if unbatched:
        mag = mag[None]
    if mag.ndim != 3 or mag.shape[-1] != cfg.freq_bins:
        raise ShapeError(f"magnitude shape {mag.shape} does not match {cfg.freq_bins} bins")
    if model.forced_mask is not None:
        shape = mag.shape if cfg.n_outputs == 1 else (mag.shape[0], 2, *mag.shape[1:])
        mask = Tensor(np.full(shape, model.forced_mask))
        return Tensor(mask.data[0]) if unbatched else mask
    if cfg.uses_embedding:
        if emb is None:
            raise ShapeError("this model needs a speaker embedding")
        emb = np.asarray(emb.data if isinstance(emb, Tensor) else emb)
        if emb.ndim == 1:
            emb = np.broadcast_to(emb, (mag.shape[0], emb.shape[0]))
        if emb.shape[-1] != cfg.embed_dim:
            raise ShapeError(f"embedding has length {emb.shape[-1]}, model expects {cfg.embed_dim}")
        r = concat_inputs(mag, emb)
    else:
        r = mag
    p = model.params
    x = Tensor(r[:, None])
    for i in range(1, cfg.n_blocks + 1):
        x = attention_block(x, p, f"block{i}", cfg, first=(i == 1))
    masks = transform_block(x, p["transform.dense.w"], p["transform.dense.b"],
                            p["transform.conv.kernel"], p["transform.conv.bias"])
    if cfg.n_outputs == 1:
        masks = fn.reshape(masks, (masks.shape[0], *masks.shape[2:]))
    if unbatched:
        masks = fn.reshape(masks, masks.shape[1:])
    return masks


# masking and losses --------------------------------------------------------

def apply_mask(mag, mask):
    """Element-wise product; stays in the autodiff graph when ``mask`` is a Tensor."""
    if tuple(np.shape(mag.data if isinstance(mag, Tensor) else mag)) != tuple(mask.shape):
        raise ShapeError(f"mask shape {mask.shape} does not match magnitude {np.shape(mag)}")
    if isinstance(mask, Tensor) or isinstance(mag, Tensor):
        return fn.mul(mask, mag)
    return np.asarray(mag) * np.asarray(mask)


def _batch_count(shape) -> int:
    return int(np.prod(shape[:-2])) if len(shape) > 2 else 1


def l2_loss(est, target):
    """Squared error summed over (frame, bin), averaged over any leading batch axes."""
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target)
    if tuple(est.shape) != tuple(target_data.shape):
        raise ShapeError(f"l2_loss: shapes {est.shape} and {target_data.shape} differ")
    n = _batch_count(est.shape)
    if isinstance(est, Tensor):
        diff = est - Tensor(target_data, dtype=est.data.dtype)
        return fn.sum(fn.square(diff)) * (1.0 / n)
    diff = np.asarray(est, dtype=np.float64) - target_data
    return float(np.sum(diff * diff)) / n


def _per_example(sq):
    # sum a [B, T, F] tensor of squared errors down to [B]
    return fn.sum(fn.sum(sq, axis=-1), axis=-1)


def pit_loss(est_masks, mixture_mag, targets):
    """Two-source permutation-invariant l2 loss.

    ``est_masks`` and ``targets`` hold two ``[T, Fbar]`` items (or are arrays
    with a source axis: ``[2, T, Fbar]`` / ``[B, 2, T, Fbar]``). Returns
    ``(loss, perm)`` where ``perm`` is ``(0, 1)`` or ``(1, 0)`` per example; ties
    go to the identity. Batched losses are averaged over the batch.
    """
    if isinstance(est_masks, (list, tuple)):
        if len(est_masks) != 2:
            raise ShapeError(f"pit_loss needs exactly 2 estimates, got {len(est_masks)}")
        if isinstance(est_masks[0], Tensor):
            est_masks = fn.concat([fn.reshape(m, (1, *m.shape)) for m in est_masks], axis=0)
        else:
            est_masks = np.stack([np.asarray(m) for m in est_masks])
    if isinstance(targets, (list, tuple)):
        if len(targets) != 2:
            raise ShapeError(f"pit_loss needs exactly 2 targets, got {len(targets)}")
        targets = np.stack([np.asarray(t) for t in targets])
    targets = np.asarray(targets, dtype=np.float64)
    mixture_mag = np.asarray(mixture_mag)
    unbatched = len(est_masks.shape) == 3
    if est_masks.shape[-3] != 2 or targets.shape[-3] != 2:
        raise ShapeError("pit_loss is defined for exactly two sources")
    if tuple(est_masks.shape) != targets.shape:
        raise ShapeError(f"pit_loss: estimates {est_masks.shape} vs targets {targets.shape}")

    if not isinstance(est_masks, Tensor):
        est = np.asarray(est_masks, dtype=np.float64) * mixture_mag[..., None, :, :]
        if unbatched:
            est, targets = est[None], targets[None]
        straight = ((est - targets) ** 2).sum(axis=(-2, -1)).sum(axis=-1)
        crossed = ((est - targets[:, ::-1]) ** 2).sum(axis=(-2, -1)).sum(axis=-1)
        swap = crossed < straight
        loss = float(np.where(swap, crossed, straight).mean())
        perms = [(1, 0) if s else (0, 1) for s in swap]
        return (loss, perms[0]) if unbatched else (loss, perms)

    if unbatched:
        est_masks = fn.reshape(est_masks, (1, *est_masks.shape))
        targets, mixture_mag = targets[None], mixture_mag[None]
    b = est_masks.shape[0]
    est = fn.mul(est_masks, Tensor(mixture_mag[:, None], dtype=est_masks.data.dtype))
    tgt = Tensor(targets, dtype=est.data.dtype)
    tgt_swapped = Tensor(targets[:, ::-1], dtype=est.data.dtype)
    straight = _per_example(fn.sum(fn.square(est - tgt), axis=1))
    crossed = _per_example(fn.sum(fn.square(est - tgt_swapped), axis=1))
    swap = crossed.data < straight.data
    pick_straight = Tensor((~swap).astype(np.float64), dtype=est.data.dtype)
    pick_crossed = Tensor(swap.astype(np.float64), dtype=est.data.dtype)
    loss = fn.sum(straight * pick_straight + crossed * pick_crossed) * (1.0 / b)
    perms = [(1, 0) if s else (0, 1) for s in swap]
    return (loss, perms[0]) if unbatched else (loss, perms)
