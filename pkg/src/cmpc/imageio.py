"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _header(kind: bytes, width: int, height: int) -> bytes:
    return kind + b"\n" + f"{width} {height}\n255\n".encode("ascii")


def write_ppm(path, rgb):
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) array, got {rgb.shape}")
    rgb = to_uint8(rgb)
    Path(path).write_bytes(_header(b"P6", rgb.shape[1], rgb.shape[0]) + rgb.tobytes())


def write_pgm(path, gray):
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"PGM needs an (H, W) array, got {gray.shape}")
    gray = to_uint8(gray)
    Path(path).write_bytes(_header(b"P5", gray.shape[1], gray.shape[0]) + gray.tobytes())


def to_uint8(a):
    if a.dtype == np.uint8:
        return np.ascontiguousarray(a)
    a = np.asarray(a, dtype=np.float64)
    return np.ascontiguousarray(np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8))


def _read_tokens(blob, count):
    """Pull ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while blob[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    return tokens, pos + 1


def read_pnm(path):
    """Returns a uint8 array: (H, W, 3) for P6, (H, W) for P5."""
    blob = Path(path).read_bytes()
    (magic, w, h, maxval), start = _read_tokens(blob, 4)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported magic {magic!r}")
    if int(maxval) != 255:
        raise ValueError(f"{path}: only 8-bit images are supported")
    w, h = int(w), int(h)
    channels = 3 if magic == b"P6" else 1
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * channels, offset=start)
    return data.reshape((h, w, 3) if channels == 3 else (h, w)).copy()


def read_ppm(path):
    img = read_pnm(path)
    if img.ndim != 3:
        raise ValueError(f"{path}: expected a P6 image")
    return img


def read_pgm(path):
    img = read_pnm(path)
    if img.ndim != 2:
        raise ValueError(f"{path}: expected a P5 image")
    return img


def heatmap(values):
    """Min-max scale an array to uint8 for PGM export."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi - lo < 1e-300:
        return np.zeros(v.shape, dtype=np.uint8)
    return to_uint8((v - lo) / (hi - lo))
