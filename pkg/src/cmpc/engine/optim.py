from __future__ import annotations

import numpy as np


class AdamState:
    """Moment buffers and step counter for Adam with decoupled weight decay."""

    def __init__(self, params, lr=2.5e-4, weight_decay=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(state: AdamState, grads=None) -> None:
    """One in-place update of ``state.params``.

    ``grads`` defaults to each parameter's ``.grad`` (missing -> zero).
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    if grads is None:
        grads = [p.grad for p in state.params]
    for i, (p, g) in enumerate(zip(state.params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data = p.data - state.lr * update


def scheduled_lr(base, step, total, schedule="constant", power=0.9, warmup=0):
    """Learning rate for 0-based ``step`` of ``total``; "poly" decays as
    base * (1 - step / total) ** power. The first ``warmup`` steps ramp
    linearly up to the scheduled value."""
    if schedule == "constant":
        lr = float(base)
    elif schedule == "poly":
        frac = min(max(step / max(total, 1), 0.0), 1.0)
        lr = float(base) * (1.0 - frac) ** power
    else:
        raise ValueError(f"unknown learning-rate schedule {schedule!r}")
    if warmup > 0 and step < warmup:
        lr *= (step + 1) / (warmup + 1)
    return lr
