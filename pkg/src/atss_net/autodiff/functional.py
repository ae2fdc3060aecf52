"""Differentiable operations.

Every function takes and returns :class:`Tensor` values. Backward closures
receive the output gradient and return one gradient per parent (``None`` for
parents that need none).
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import as_tensor, make_result, record_kinks, unbroadcast

# conv columns above this size are recomputed in backward instead of cached
_COL_CACHE_BYTES = 128 * 2**20


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _coerce(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.data.dtype)
    return a, b


# elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = _coerce(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward)


def neg(a):
    return make_result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _coerce(a, b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward)


def square(a):
    return make_result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    record_kinks(mask)
    return make_result(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.data.dtype)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


# reductions ----------------------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    data = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.data.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return make_result(np.asarray(data), (x,), backward)


def mean(x, axis=None, keepdims=False):
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis, keepdims) * (1.0 / count)


# shape ---------------------------------------------------------------------

def reshape(x, shape):
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    inverse = np.argsort(axes)
    return make_result(
        np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inverse),)
    )


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(data, tensors, backward)


# linear algebra ------------------------------------------------------------

def matmul(a, b):
    a, b = _coerce(a, b)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_result(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis of ``x``."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        gb = g2.sum(axis=0, dtype=np.float64).astype(g.dtype) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out.reshape(*lead, weight.shape[1]), parents, backward)


def _conv_geometry(x_shape, k_shape, dilation, stride):
    c_out, c_in, kh, kw = k_shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: even kernel extent {kh}x{kw} is unsupported")
    if x_shape[1] != c_in:
        raise ShapeError(f"conv2d: input has {x_shape[1]} channels, kernel expects {c_in}")
    dh, dw = dilation
    sh, sw = stride
    ph, pw = dh * (kh - 1) // 2, dw * (kw - 1) // 2
    h, w = x_shape[2], x_shape[3]
    ho = (h + 2 * ph - dh * (kh - 1) - 1) // sh + 1
    wo = (w + 2 * pw - dw * (kw - 1) - 1) // sw + 1
    return ph, pw, ho, wo


def _im2col(xp, kh, kw, dilation, stride, ho, wo):
    b, c = xp.shape[:2]
    dh, dw = dilation
    sh, sw = stride
    cols = np.empty((c, kh, kw, b, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i * dh : i * dh + sh * (ho - 1) + 1 : sh, j * dw : j * dw + sw * (wo - 1) + 1 : sw]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, b * ho * wo)


def conv2d(x, kernel, bias=None, dilation=1, stride=1):
    """Zero-padded dilated cross-correlation with "same" padding.

    ``x`` is ``[C, H, W]`` or ``[B, C, H, W]``; ``kernel`` is
    ``[C_out, C_in, kh, kw]`` with odd extents. Padding is
    ``dilation * (k - 1) / 2`` per side, so stride 1 preserves H and W.
    """
    x = as_tensor(x)
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1, *x.shape))
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: bad ranks {x.shape} / {kernel.shape}")
    dilation, stride = _pair(dilation), _pair(stride)
    c_out, c_in, kh, kw = kernel.shape
    ph, pw, ho, wo = _conv_geometry(x.shape, kernel.shape, dilation, stride)
    b = x.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    cols = _im2col(xp, kh, kw, dilation, stride, ho, wo)
    kmat = kernel.data.reshape(c_out, -1)
    out = (kmat @ cols).reshape(c_out, b, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[:, None, None]
    out = np.ascontiguousarray(out)
    cached = cols if cols.nbytes <= _COL_CACHE_BYTES else None
    del cols

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(c_out, -1)
        gk = gx = gb = None
        if kernel.requires_grad:
            c = cached if cached is not None else _im2col(xp, kh, kw, dilation, stride, ho, wo)
            gk = (g2 @ c.T).reshape(kernel.shape)
        if x.requires_grad:
            dcols = (kmat.T @ g2).reshape(c_in, kh, kw, b, ho, wo)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            dh, dw = dilation
            sh, sw = stride
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i * dh : i * dh + sh * (ho - 1) + 1 : sh, j * dw : j * dw + sw * (wo - 1) + 1 : sw] += (
                        dcols[:, i, j].transpose(1, 0, 2, 3)
                    )
            gx = gxp[:, :, ph : ph + x.shape[2], pw : pw + x.shape[3]]
        if bias is not None:
            gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    result = make_result(out, parents, backward)
    return reshape(result, result.shape[1:]) if unbatched else result


# normalisation and pooling -------------------------------------------------

def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return make_result(y, (x,), backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return make_result(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x = as_tensor(x)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({n},)")
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    centered = x64 - mu
    inv = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    out = (xhat * gamma.data + beta.data).astype(x.data.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        lead = tuple(range(g.ndim - 1))
        ggamma = (g64 * xhat).sum(axis=lead).astype(g.dtype)
        gbeta = g64.sum(axis=lead).astype(g.dtype)
        gx = None
        if x.requires_grad:
            dxhat = g64 * gamma.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            gx = gx.astype(g.dtype)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward)


def stat_pool(x, eps=1e-8):
    """Per-channel mean and population std over the two trailing axes, concatenated.

    ``[C, H, W] -> [2C]`` or ``[B, C, H, W] -> [B, 2C]``.
    """
    x = as_tensor(x)
    x64 = x.data.astype(np.float64)
    n = x.shape[-1] * x.shape[-2]
    mu = x64.mean(axis=(-2, -1), keepdims=True)
    centered = x64 - mu
    std = np.sqrt((centered**2).mean(axis=(-2, -1), keepdims=True) + eps)
    out = np.concatenate([mu[..., 0, 0], std[..., 0, 0]], axis=-1).astype(x.data.dtype)
    c = x.shape[-3]

    def backward(g):
        g64 = g.astype(np.float64)
        gm = g64[..., :c, None, None]
        gs = g64[..., c:, None, None]
        gx = gm / n + gs * centered / (n * std)
        return (gx.astype(g.dtype),)

    return make_result(out, (x,), backward)


# losses --------------------------------------------------------------------

def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    logp = log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -(sum(logp * onehot) * (1.0 / len(labels)))
