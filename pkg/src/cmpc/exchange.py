"""Text-guided feature exchange between the three reasoning levels."""

from __future__ import annotations

from .comprehension import to_vertices
from .engine import concat, matmul, sigmoid, softmax


class TgfeParams:
    def __init__(self, store, prefix, c_l, c_m, c_h):
        self.w8 = store.add(f"{prefix}.w8", (c_l, c_h), fan_in=c_l)
        self.w9 = store.add(f"{prefix}.w9", (c_m, c_h), fan_in=c_m)
        self.w_fc = store.add(f"{prefix}.fc.w", (c_l + c_m, c_m), fan_in=c_l + c_m)
        self.b_fc = store.add(f"{prefix}.fc.b", (c_m,), fan_in=c_l + c_m, init="bias")


def pooling_weights(s, Y, params, normalize=True):
    """Lambda over the H*W cells: (s W8) . (Y_p W9), softmax-normalised unless
    ``normalize`` is False."""
    key = matmul(to_vertices(Y), params.w9)
    query = matmul(s, params.w8)
    raw = matmul(key, query.reshape(query.shape + (1,)))
    raw = raw.reshape(raw.shape[:-1])
    return softmax(raw, axis=-1) if normalize else raw


def global_pool(lam, Y):
    """g = sum_p lam_p Y_p."""
    g = matmul(lam.reshape(lam.shape[:-1] + (1, lam.shape[-1])), to_vertices(Y))
    return g.reshape(g.shape[:-2] + (g.shape[-1],))


def context_vector(s, g, params):
    return matmul(concat([s, g], axis=-1), params.w_fc) + params.b_fc


def exchange_round(state, s, params, normalize=True, order=None):
    """One synchronous round over ``state`` ({level: Y}).

    ``params`` is a single TgfeParams shared by all levels or a
    {level: TgfeParams} map. Returns (new_state, {level: lambda}).
    """
    levels = list(state)
    order = levels if order is None else list(order)
    new, lams = {}, {}
    for i in order:
        p = params[i] if isinstance(params, dict) else params
        Y = state[i]
        lam = pooling_weights(s, Y, p, normalize)
        c = context_vector(s, global_pool(lam, Y), p)
        gate = sigmoid(c)
        gate = gate.reshape(gate.shape[:-1] + (1, 1, gate.shape[-1]))
        others = None
        for j in levels:
            if j == i:
                continue
            others = state[j] if others is None else others + state[j]
        new[i] = Y + gate * others
        lams[i] = lam
    return {lv: new[lv] for lv in levels}, lams


def tgfe_forward(state, s, n, params, normalize=True, return_maps=False):
    """n rounds of exchange; n = 0 returns ``state`` untouched."""
    maps = []
    for _ in range(int(n)):
        state, lams = exchange_round(state, s, params, normalize)
        maps.append(lams)
    return (state, maps) if return_maps else state
