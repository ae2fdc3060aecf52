"""Finite-difference gradient verification suites used by ``atss gradcheck`` and the tests.

Three scopes: every differentiable layer on its own, one full attention block
on toy dimensions, and the end-to-end masked l2 loss. Each check runs in
32-bit storage (h=1e-3) and in 64-bit mode (h=1e-5).
"""
from __future__ import annotations

import contextlib

import numpy as np

from .autodiff import Tensor, grad_check, precision
from .autodiff import functional as fn
from .autodiff.tensor import as_tensor, make_result, record_kinks
from .model import AtssNet, ModelConfig, apply_mask, atss_forward, attention_block, l2_loss

SCOPES = ("layers", "block", "end2end")

# (dtype, h, per-layer limit, block/end-to-end limit); outputs are reduced against
# random weights so checks like sum(softmax) == const cannot pass vacuously
REGIMES = {
    "32-bit": (np.float32, 1e-3, 1e-3, 1e-2),
    "64-bit": (np.float64, 1e-5, 1e-6, 1e-4),
}

TOY_MODEL = ModelConfig(n_blocks=1, n_heads=2, d_k=4, freq_bins=9, embed_dim=4)
TOY_FRAMES = 6


def _faulty_relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    record_kinks(mask)
    return make_result(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), lambda g: (1.1 * g * mask,))


@contextlib.contextmanager
def injected_fault(enabled=True):
    """Scale the relu backward pass by 1.1 while active (checker sensitivity test)."""
    if not enabled:
        yield
        return
    original = fn.relu
    fn.relu = _faulty_relu
    try:
        yield
    finally:
        fn.relu = original


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def layer_cases(rng):
    """(name, closure, inputs) for each differentiable layer."""
    cases = []
    x = _param(rng, 3, 5)
    w = _param(rng, 5, 4, scale=0.5)
    b = _param(rng, 4)
    p = Tensor(rng.uniform(-1, 1, (3, 4)))
    cases.append(("linear", lambda: fn.sum(fn.linear(x, w, b) * p), [x, w, b]))

    # small outputs keep float32 rounding of the probed sum well under the limit
    img = _param(rng, 2, 2, 6, 5)
    ker = _param(rng, 2, 2, 3, 3, scale=0.2)
    cb = _param(rng, 2)
    pc = Tensor(rng.uniform(-0.5, 0.5, (2, 2, 6, 5)))
    cases.append(("conv2d", lambda: fn.sum(fn.conv2d(img, ker, cb) * pc), [img, ker, cb]))
    kd = _param(rng, 2, 2, 3, 3, scale=0.2)
    pd = Tensor(rng.uniform(-0.5, 0.5, (2, 2, 6, 5)))
    cases.append(("conv2d_dilated", lambda: fn.sum(fn.conv2d(img, kd, dilation=(2, 1)) * pd), [img, kd]))

    s = _param(rng, 3, 6)
    ps = Tensor(rng.uniform(-1, 1, (3, 6)))
    cases.append(("softmax", lambda: fn.sum(fn.softmax(s) * ps), [s]))

    ln = _param(rng, 4, 7)
    g = _param(rng, 7)
    beta = _param(rng, 7)
    pl = Tensor(rng.uniform(-1, 1, (4, 7)))
    cases.append(("layer_norm", lambda: fn.sum(fn.layer_norm(ln, g, beta) * pl), [ln, g, beta]))

    sp = _param(rng, 2, 3, 4, 5)
    pp = Tensor(rng.uniform(-1, 1, (2, 6)))
    cases.append(("stat_pool", lambda: fn.sum(fn.stat_pool(sp) * pp), [sp]))

    # keep relu inputs away from the kink so no coordinate needs skipping
    r = Tensor(np.sign(rng.standard_normal((4, 5))) * rng.uniform(0.1, 1.0, (4, 5)), requires_grad=True)
    pr = Tensor(rng.uniform(-1, 1, (4, 5)))
    cases.append(("relu", lambda: fn.sum(fn.relu(r) * pr), [r]))

    sg = _param(rng, 4, 5)
    pg = Tensor(rng.uniform(-1, 1, (4, 5)))
    cases.append(("sigmoid", lambda: fn.sum(fn.sigmoid(sg) * pg), [sg]))
    return cases


def toy_model(seed=0, cfg: ModelConfig = TOY_MODEL) -> AtssNet:
    """Toy separator with every parameter randomised (zero-initialised layers would hide gradient paths)."""
    model = AtssNet(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for p in model.params.values():
        p.data = (p.data + 0.3 * rng.standard_normal(p.shape)).astype(p.data.dtype)
    return model


def toy_inputs(seed=0, cfg: ModelConfig = TOY_MODEL):
    rng = np.random.default_rng(seed + 2)
    mag = rng.uniform(0.0, 1.0, (TOY_FRAMES, cfg.freq_bins))
    emb = rng.standard_normal(cfg.embed_dim)
    return mag, emb


def block_case(seed=0):
    model = toy_model(seed)
    mag, emb = toy_inputs(seed)
    x = Tensor(np.concatenate([mag, np.broadcast_to(emb, (TOY_FRAMES, len(emb)))], axis=1)[None, None])
    params = {k: v for k, v in model.params.items() if k.startswith("block1.")}

    def loss():
        return fn.sum(attention_block(x, model.params, "block1", model.cfg, first=True)) * 0.01

    return loss, list(params.values())


def end2end_case(seed=0):
    model = toy_model(seed)
    mag, emb = toy_inputs(seed)
    with_grad = atss_forward(mag, emb, model)
    # targets close to the current estimate keep the loss (and so its rounding noise) small
    rng = np.random.default_rng(seed + 3)
    target = apply_mask(mag, with_grad.data) + 0.05 * rng.standard_normal(mag.shape)

    def loss():
        return l2_loss(apply_mask(mag, atss_forward(mag, emb, model)), target)

    return loss, list(model.params.values())


def _convert(inputs, dtype):
    for t in inputs:
        t.data = t.data.astype(dtype)


def run(scope: str, seed: int = 0):
    """Yield ``(name, max_rel_error, limit, skipped)`` for every check in ``scope``."""
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    for regime, (dtype, h, layer_limit, model_limit) in REGIMES.items():
        with precision(dtype):
            if scope == "layers":
                for name, closure, inputs in layer_cases(np.random.default_rng(seed)):
                    _convert(inputs, dtype)
                    res = grad_check(closure, inputs, h=h, details=True)
                    yield f"{name}/{regime}", res.max_rel_error, layer_limit, res.skipped
            else:
                closure, inputs = (block_case if scope == "block" else end2end_case)(seed)
                _convert(inputs, dtype)
                res = grad_check(closure, inputs, h=h, details=True)
                yield f"{scope}/{regime}", res.max_rel_error, model_limit, res.skipped
