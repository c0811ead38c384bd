"""Desk-scale visual encoder: conv stack with three taps + coordinate fusion."""

from __future__ import annotations

import numpy as np

from .engine import ContractError, DimensionError, broadcast_to, concat, conv2d, relu, resize_bilinear

LEVELS = (3, 4, 5)
RELU_GAIN = 2 ** 0.5


def coord_feature(H: int, W: int) -> np.ndarray:
    """8-channel spatial features per cell (i, j) of an H x W grid.

    Channels: x_min, y_min, x_max, y_max, x_center, y_center, 1/W, 1/H, with
    positions mapped to [-1, 1]. Row i runs along y, column j along x.
    """
    if H < 1 or W < 1:
        raise ContractError(f"grid must be at least 1x1, got {H}x{W}")
    j = np.arange(W, dtype=np.float64)
    i = np.arange(H, dtype=np.float64)
    x0 = 2.0 * j / W - 1.0
    x1 = 2.0 * (j + 1) / W - 1.0
    y0 = 2.0 * i / H - 1.0
    y1 = 2.0 * (i + 1) / H - 1.0
    out = np.empty((H, W, 8))
    out[..., 0] = x0[None, :]
    out[..., 1] = y0[:, None]
    out[..., 2] = x1[None, :]
    out[..., 3] = y1[:, None]
    out[..., 4] = 0.5 * (x0 + x1)[None, :]
    out[..., 5] = 0.5 * (y0 + y1)[:, None]
    out[..., 6] = 1.0 / W
    out[..., 7] = 1.0 / H
    return out


class VisualEncoder:
    """Six 3x3 conv+relu blocks; taps after blocks 2, 4 and 6.

    ``strides`` gives each block's stride (two stride-2 blocks by default).
    With ``residual`` a stride-1 block whose width is unchanged computes
    relu(x + conv(x)), as in a residual stage.
    Deeper taps are bilinearly resampled to the first tap's grid, then each
    level is fused with the coordinate map through its own 1x1 conv.
    """

    def __init__(self, store, widths=(16, 16, 32, 32, 32, 32), strides=(2, 2, 1, 1, 1, 1),
                 c_v=64, levels=LEVELS, prefix="vis", residual=True):
        if len(widths) != 6 or len(strides) != 6:
            raise ValueError("backbone needs exactly six blocks")
        self.strides = tuple(int(s) for s in strides)
        self.blocks = []
        self.skip = []
        cin = 3
        for n, cout in enumerate(widths):
            self.skip.append(bool(residual) and self.strides[n] == 1 and cin == cout)
            k = store.add(f"{prefix}.block{n + 1}.kernel", (3, 3, cin, cout), fan_in=9 * cin,
                          gain=RELU_GAIN)
            b = store.add(f"{prefix}.block{n + 1}.bias", (cout,), fan_in=9 * cin, init="bias")
            self.blocks.append((k, b))
            cin = cout
        self.fuse = {}
        self.levels = tuple(levels)
        for level, tap in zip(LEVELS, (1, 3, 5)):
            if level not in self.levels:
                continue
            c_tap = widths[tap] + 8
            k = store.add(f"{prefix}.fuse{level}.kernel", (1, 1, c_tap, c_v), fan_in=c_tap)
            b = store.add(f"{prefix}.fuse{level}.bias", (c_v,), fan_in=c_tap, init="bias")
            self.fuse[level] = (k, b)
        self.c_v = int(c_v)

    def backbone(self, image):
        """image (H0, W0, 3) or (B, H0, W0, 3) -> (F3, F4, F5) on a common grid."""
        H0, W0 = image.shape[-3], image.shape[-2]
        if H0 < 8 or W0 < 8:
            raise ContractError(f"image must be at least 8x8, got {H0}x{W0}")
        taps = []
        x = image
        for n, ((k, b), s) in enumerate(zip(self.blocks, self.strides)):
            y = conv2d(x, k, b, stride=s)
            x = relu(x + y if self.skip[n] else y)
            if n in (1, 3, 5):
                taps.append(x)
        size = taps[0].shape[-3:-1]
        return tuple(resize_bilinear(t, size) for t in taps)

    def fuse_coords(self, F, level):
        H, W = F.shape[-3], F.shape[-2]
        O = coord_feature(H, W)
        return fuse_coords(F, O, *self.fuse[level])

    def __call__(self, image):
        """Returns {level: X_level} for the configured levels."""
        taps = dict(zip(LEVELS, self.backbone(image)))
        return {lv: self.fuse_coords(taps[lv], lv) for lv in self.levels}


def fuse_coords(F, O, kernel, bias):
    """Channel-concat [F; O] then 1x1 conv."""
    if tuple(F.shape[-3:-1]) != tuple(O.shape[-3:-1]):
        raise DimensionError(f"spatial mismatch between tap {F.shape} and coordinates {O.shape}")
    O = broadcast_to(O, F.shape[:-1] + (O.shape[-1],))
    return conv2d(concat([F, O], axis=-1), kernel, bias)
