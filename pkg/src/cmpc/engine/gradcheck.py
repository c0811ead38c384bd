"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import backward, no_grad

# Denominator floor: entries whose analytic and numeric gradients are both
# below this are compared on an absolute scale.
REL_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=REL_FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(fn, tensors, eps=1e-5, max_entries=None, seed=0):
    """Compare autodiff against central differences.

    ``fn`` takes no arguments and returns a scalar Tensor built from
    ``tensors``. Up to ``max_entries`` coordinates per tensor are probed
    (all when None). Returns the max relative error over probed entries.
    """
    for t in tensors:
        t.grad = None
        t.data = np.ascontiguousarray(t.data)
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        num = np.empty(idx.size)
        with no_grad():
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = fn().item()
                flat[i] = orig - eps
                fm = fn().item()
                flat[i] = orig
                num[n] = (fp - fm) / (2.0 * eps)
        err = relative_error(ga.reshape(-1)[idx], num)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
