"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .language import Vocabulary, tokenize


def check_images(images, min_size=8):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"expected images of shape (n, H, W, 3), got {images.shape}")
    if images.shape[1] < min_size or images.shape[2] < min_size:
        raise ValueError(f"images must be at least {min_size}x{min_size}")
    if not np.all(np.isfinite(images)) or images.min() < 0.0 or images.max() > 1.0:
        raise ValueError("image values must be finite and within [0, 1]")
    return images


def check_tokens(tokens, vocab: Vocabulary):
    """Accept expressions as strings or index lists; return index lists."""
    out = []
    for t in tokens:
        if isinstance(t, str):
            out.append(tokenize(t, vocab))
            continue
        ids = [int(i) for i in t]
        if not ids:
            ids = [vocab.stoi["<unk>"]]
        if min(ids) < 0 or max(ids) >= len(vocab):
            raise ValueError(f"token index outside vocabulary of size {len(vocab)}")
        out.append(ids)
    return out


def check_inputs(X, vocab):
    """X is a sequence of (image, expression) pairs."""
    X = list(X)
    if not X:
        raise ValueError("no samples given")
    images, tokens = zip(*X)
    return check_images(np.stack(images)), check_tokens(tokens, vocab)


def check_masks(y, images):
    y = np.asarray(y)
    if y.shape != images.shape[:3]:
        raise ValueError(f"mask shape {y.shape} does not match images {images.shape[:3]}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("masks must be binary")
    return y.astype(np.float64)
