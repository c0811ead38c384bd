"""ConvLSTM level fusion, mask prediction and the training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ContractError, Tensor, concat, conv2d, mean, resize_bilinear, sigmoid, softplus, tanh


@dataclass
class ConvLstmState:
    h: Tensor
    c: Tensor


class ConvLstmCell:
    """Gates (i, f, o) and candidate g from one 3x3 conv over [x; h]."""

    def __init__(self, store, prefix, c_in, c_cell, k=3):
        self.c_cell = int(c_cell)
        fan = k * k * (c_in + c_cell)
        self.kernel = store.add(f"{prefix}.kernel", (k, k, c_in + c_cell, 4 * c_cell), fan_in=fan)
        self.bias = store.add(f"{prefix}.bias", (4 * c_cell,), fan_in=fan, init="bias")

    def zero_state(self, x):
        shape = x.shape[:-1] + (self.c_cell,)
        return ConvLstmState(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def convlstm_step(x, state: ConvLstmState, cell: ConvLstmCell) -> ConvLstmState:
    C = cell.c_cell
    z = conv2d(concat([x, state.h], axis=-1), cell.kernel, cell.bias)
    i = sigmoid(z[..., 0:C])
    f = sigmoid(z[..., C:2 * C])
    o = sigmoid(z[..., 2 * C:3 * C])
    g = tanh(z[..., 3 * C:4 * C])
    c = f * state.c + i * g
    return ConvLstmState(h=o * tanh(c), c=c)


class FusionHead:
    def __init__(self, store, prefix, c_m, c_cell):
        self.cell = ConvLstmCell(store, f"{prefix}.convlstm", c_m, c_cell)
        self.out_kernel = store.add(f"{prefix}.out.kernel", (1, 1, c_cell, 1), fan_in=c_cell)
        self.out_bias = store.add(f"{prefix}.out.bias", (1,), fan_in=c_cell, init="bias")


def fuse_levels(levels, head: FusionHead):
    """Feed the maps in the given order through the ConvLSTM from a zero
    state; the last hidden state goes through a 1x1 conv to one logit map."""
    state = head.cell.zero_state(levels[0])
    for Y in levels:
        state = convlstm_step(Y, state, head.cell)
    logits = conv2d(state.h, head.out_kernel, head.out_bias)
    return logits.reshape(logits.shape[:-1])


def upsample_logits(logits, size):
    """Bilinear resize of (..., H, W) logit maps."""
    x = logits.reshape(logits.shape + (1,))
    x = resize_bilinear(x, size)
    return x.reshape(x.shape[:-1])


def bce_loss(logits, gt):
    """Pixel-averaged binary cross-entropy, log-sum-exp form:
    softplus(z) - y z == -[y log s(z) + (1 - y) log(1 - s(z))]."""
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != tuple(logits.shape):
        raise ContractError(f"logit shape {logits.shape} != mask shape {gt.shape}")
    if not np.all((gt == 0) | (gt == 1)):
        raise ContractError("ground-truth mask must be binary")
    return mean(softplus(logits) - logits * gt)


def predict_mask(logits, out_size, threshold=0.5):
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must lie in (0, 1), got {threshold}")
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    up = upsample_logits(Tensor(data), out_size).data
    prob = 0.5 * (1.0 + np.tanh(0.5 * up))
    return (prob > threshold).astype(np.uint8)
