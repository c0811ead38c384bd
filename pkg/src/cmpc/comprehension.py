"""Cross-modal progressive comprehension: entity perception, then
relation-aware reasoning over a fully connected graph of spatial cells.

Vertices are grid cells in row-major (i, j) order, so vertex n = i * W + j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, broadcast_to, concat, conv2d, matmul, relu, softmax, swapaxes


@dataclass
class LinguisticContext:
    q: Tensor
    R: Tensor
    s: Tensor
    mask: np.ndarray | None = None
    L: Tensor | None = None
    P: Tensor | None = None


@dataclass
class SpatialGraph:
    M_g: Tensor
    B: Tensor
    B1: Tensor
    B2: Tensor
    A: Tensor


def entity_perception(q, X, w3, w4):
    """M = sum_i (q W3_i) * (X W4_i); the language gate broadcasts over cells."""
    M = None
    for a, b in zip(w3, w4):
        gate = matmul(q, a)
        gate = gate.reshape(gate.shape[:-1] + (1, 1, gate.shape[-1]))
        term = gate * matmul(X, b)
        M = term if M is None else M + term
    return M


def adjacency_from_affinity(B, mask=None, M_g=None):
    """B1 = softmax over words, B2 = softmax of B^T over vertices, A = B1 B2.

    ``mask`` ([..., T], 1 = real token) removes PAD words from both softmaxes.
    """
    word_mask = None if mask is None else np.asarray(mask)[..., None, :]
    B1 = softmax(B, axis=-1, mask=word_mask)
    B2 = softmax(swapaxes(B, -1, -2), axis=-1)
    A = matmul(B1, B2)
    return SpatialGraph(M_g=M_g, B=B, B1=B1, B2=B2, A=A)


def build_adjacency(M_g, R, w5, w6, mask=None):
    B = matmul(matmul(M_g, w5), swapaxes(matmul(R, w6), -1, -2))
    return adjacency_from_affinity(B, mask, M_g)


def graph_convolve(M_g, A, weights, nonlinearity=None):
    """Stacked (A + I) M W layers.

    A relu follows each layer when more than one layer is stacked; pass
    ``nonlinearity`` explicitly to override.
    """
    use_relu = len(weights) > 1 if nonlinearity is None else bool(nonlinearity)
    M = M_g
    for w in weights:
        M = matmul(matmul(A, M) + M, w)
        if use_relu:
            M = relu(M)
    return M


def to_vertices(M):
    """(..., H, W, C) -> (..., H*W, C), row-major."""
    H, W, C = M.shape[-3:]
    return M.reshape(M.shape[:-3] + (H * W, C))


def from_vertices(M, H, W):
    return M.reshape(M.shape[:-2] + (H, W, M.shape[-1]))


def tile(v, H, W):
    """Repeat a (..., C) vector over an H x W grid."""
    v = v.reshape(v.shape[:-1] + (1, 1, v.shape[-1]))
    return broadcast_to(v, v.shape[:-3] + (H, W, v.shape[-1]))


class CmpcBlock:
    """Per-level parameters and forward pass.

    ``ep``/``rar`` switch the two stages; a disabled stage owns no parameters.
    With both off the block reduces to the concat baseline conv([X; s]).
    """

    def __init__(self, store, prefix, c_v, c_l, c_m, c_h, r=3, n_gc=1, ep=True, rar=True,
                 gc_relu=None, share_gc=False):
        self.ep, self.rar = bool(ep), bool(rar)
        self.gc_relu = gc_relu
        self.w3, self.w4 = [], []
        if self.ep:
            for i in range(r):
                self.w3.append(store.add(f"{prefix}.ep.w3_{i}", (c_l, c_m), fan_in=c_l))
                self.w4.append(store.add(f"{prefix}.ep.w4_{i}", (c_v, c_m), fan_in=c_v))
        self.w7 = []
        if self.rar:
            if not self.ep:
                # without EP the graph reasons over the concat-baseline fusion conv([X; s])
                c_in = c_v + c_l
                self.fuse_kernel = store.add(f"{prefix}.rar.fuse.kernel", (1, 1, c_in, c_m), fan_in=c_in)
                self.fuse_bias = store.add(f"{prefix}.rar.fuse.bias", (c_m,), fan_in=c_in, init="bias")
            # linear layer from the reshaped multimodal map to vertex features
            self.w_vertex = store.add(f"{prefix}.rar.vertex.w", (c_m, c_m), fan_in=c_m)
            self.b_vertex = store.add(f"{prefix}.rar.vertex.b", (c_m,), fan_in=c_m, init="bias")
            self.w5 = store.add(f"{prefix}.rar.w5", (c_m, c_h), fan_in=c_m)
            self.w6 = store.add(f"{prefix}.rar.w6", (c_l, c_h), fan_in=c_l)
            if share_gc:
                shared = store.add(f"{prefix}.rar.w7", (c_m, c_m), fan_in=c_m)
                self.w7 = [shared] * n_gc
            else:
                self.w7 = [store.add(f"{prefix}.rar.w7_{k}", (c_m, c_m), fan_in=c_m)
                           for k in range(n_gc)]
        c_mid = c_m if (self.ep or self.rar) else 0
        c_out_in = c_v + c_mid + c_l
        self.out_kernel = store.add(f"{prefix}.out.kernel", (1, 1, c_out_in, c_m), fan_in=c_out_in)
        self.out_bias = store.add(f"{prefix}.out.bias", (c_m,), fan_in=c_out_in, init="bias")

    def __call__(self, X, ctx: LinguisticContext):
        """Returns (Y, graph); ``graph`` is None when reasoning is disabled."""
        H, W = X.shape[-3], X.shape[-2]
        parts = [X]
        graph = None
        M = entity_perception(ctx.q, X, self.w3, self.w4) if self.ep else None
        if self.rar:
            if M is None:
                M = conv2d(concat([X, tile(ctx.s, H, W)], axis=-1), self.fuse_kernel, self.fuse_bias)
            M_g = matmul(to_vertices(M), self.w_vertex) + self.b_vertex
            graph = build_adjacency(M_g, ctx.R, self.w5, self.w6, ctx.mask)
            M_bar = graph_convolve(M_g, graph.A, self.w7, self.gc_relu)
            parts.append(from_vertices(M_bar, H, W))
        elif M is not None:
            parts.append(M)
        parts.append(tile(ctx.s, H, W))
        Y = conv2d(concat(parts, axis=-1), self.out_kernel, self.out_bias)
        return Y, graph


def cmpc_forward(X, ctx, block: CmpcBlock):
    return block(X, ctx)[0]
