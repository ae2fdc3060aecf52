from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import kink_log, no_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int

    def __float__(self):
        return self.max_rel_error


def _eval(fn):
    with kink_log() as log:
        value = fn().item()
    return value, log


def numeric_grad(fn, tensor, h, skip_kinks=False):
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``tensor.data``.

    With ``skip_kinks`` the result is NaN for coordinates where the +/-h probes
    flip the sign of some relu input, since the difference quotient is
    meaningless across a kink.
    """
    flat = tensor.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    with no_grad():
        base = _eval(fn)[1] if skip_kinks else None
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, up_log = _eval(fn)
            flat[i] = orig - h
            down, down_log = _eval(fn)
            flat[i] = orig
            if skip_kinks and (up_log != base or down_log != base):
                out[i] = np.nan
            else:
                out[i] = (up - down) / (2.0 * h)
    return out.reshape(tensor.shape)


def grad_check(fn, inputs, h=1e-3, skip_kinks=True, details=False):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` is a zero-argument closure returning a scalar :class:`Tensor` built
    from ``inputs``. Error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    Coordinates whose probes straddle a relu kink are left out (see
    :func:`numeric_grad`); ``details=True`` returns a :class:`GradCheckResult`
    with the counts.
    """
    for t in inputs:
        t.grad = None
    fn().backward()
    worst, checked, skipped = 0.0, 0, 0
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        numeric = numeric_grad(fn, t, h, skip_kinks=skip_kinks)
        valid = ~np.isnan(numeric)
        skipped += int((~valid).sum())
        checked += int(valid.sum())
        a, n = analytic[valid], numeric[valid]
        if a.size:
            err = np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
            worst = max(worst, float(err.max()))
    if details:
        return GradCheckResult(worst, checked, skipped)
    return worst
