import math

import numpy as np
import pytest

from cmpc.comprehension import (
    CmpcBlock,
    LinguisticContext,
    adjacency_from_affinity,
    build_adjacency,
    entity_perception,
    from_vertices,
    graph_convolve,
    tile,
    to_vertices,
)
from cmpc.engine import ParamStore, Tensor, conv2d, concat, sum_
from cmpc.engine.gradcheck import check_gradients

import oracles


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_entity_perception_zero_query_gives_zero():
    rng = np.random.default_rng(0)
    X = T(rng.standard_normal((3, 3, 4)))
    w3 = [T(rng.standard_normal((5, 6))) for _ in range(2)]
    w4 = [T(rng.standard_normal((4, 6))) for _ in range(2)]
    M = entity_perception(T(np.zeros(5)), X, w3, w4)
    assert M.shape == (3, 3, 6)
    assert np.all(M.data == 0)


def test_entity_perception_neutral_gate_is_visual_projection():
    rng = np.random.default_rng(1)
    X = T(rng.standard_normal((2, 3, 4)))
    q = T([1.0, 0.0, 0.0])
    w3 = T(np.vstack([np.ones((1, 5)), rng.standard_normal((2, 5))]))
    w4 = T(rng.standard_normal((4, 5)))
    M = entity_perception(q, X, [w3], [w4])
    np.testing.assert_allclose(M.data, X.data @ w4.data, atol=1e-14)


def test_entity_perception_hand_case_r2():
    # gate_1 = [1, -1], v_1 = [1, 2]; gate_2 = [-1, 1], v_2 = [1, 3] -> M = [0, 1]
    X = T([[[1.0, 2.0]]])
    q = T([1.0, -1.0])
    w3 = [T(np.eye(2)), T([[0.0, 1.0], [1.0, 0.0]])]
    w4 = [T(np.eye(2)), T([[1.0, 1.0], [0.0, 1.0]])]
    np.testing.assert_allclose(entity_perception(q, X, w3, w4).data, [[[0.0, 1.0]]], atol=1e-15)


def test_entity_perception_matches_loop_oracle_batched():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((2, 3, 2, 4))
    q = rng.standard_normal((2, 5))
    w3 = [rng.standard_normal((5, 3)) for _ in range(3)]
    w4 = [rng.standard_normal((4, 3)) for _ in range(3)]
    M = entity_perception(T(q), T(X), [T(w) for w in w3], [T(w) for w in w4]).data
    for b in range(2):
        np.testing.assert_allclose(M[b], oracles.entity_perception(q[b], X[b], w3, w4), atol=1e-12)


def test_adjacency_zero_relational_features_is_uniform():
    rng = np.random.default_rng(3)
    M_g = T(rng.standard_normal((6, 4)))
    g = build_adjacency(M_g, T(np.zeros((3, 5))), T(rng.standard_normal((4, 2))),
                        T(rng.standard_normal((5, 2))))
    assert np.all(g.B.data == 0)
    np.testing.assert_allclose(g.B1.data, 1 / 3, atol=1e-15)
    np.testing.assert_allclose(g.B2.data, 1 / 6, atol=1e-15)
    np.testing.assert_allclose(g.A.data, 1 / 6, atol=1e-15)


def test_adjacency_single_word_router():
    rng = np.random.default_rng(4)
    B = T(rng.standard_normal((5, 1)))
    g = adjacency_from_affinity(B)
    np.testing.assert_array_equal(g.B1.data, np.ones((5, 1)))
    for row in g.A.data:
        np.testing.assert_allclose(row, g.B2.data[0], atol=1e-15)


def test_adjacency_hand_case():
    g = adjacency_from_affinity(T(np.eye(2)))
    a, b = math.e / (1 + math.e), 1 / (1 + math.e)
    expect = np.array([[a * a + b * b, 2 * a * b], [2 * a * b, a * a + b * b]])
    np.testing.assert_allclose(g.A.data, expect, atol=1e-12)


def test_adjacency_matches_loop_oracle_with_padding():
    rng = np.random.default_rng(5)
    for _ in range(10):
        N, T_, C, Cl, Ch = 4, 4, 3, 5, 2
        M_g, R = rng.standard_normal((N, C)), rng.standard_normal((T_, Cl))
        w5, w6 = rng.standard_normal((C, Ch)), rng.standard_normal((Cl, Ch))
        mask = np.array([1.0, 1.0, 1.0, 0.0])
        R[3] = 0.0
        g = build_adjacency(T(M_g), T(R), T(w5), T(w6), mask)
        B, B1, B2, A = oracles.adjacency(M_g, R, w5, w6, mask)
        for got, want in ((g.B, B), (g.B1, B1), (g.B2, B2), (g.A, A)):
            np.testing.assert_allclose(got.data, want, atol=1e-12)
        assert np.all(g.B1.data[:, 3] == 0)


def test_graph_convolve_identity_cases():
    rng = np.random.default_rng(6)
    M = rng.standard_normal((4, 3))
    out = graph_convolve(T(M), T(np.zeros((4, 4))), [T(np.eye(3))])
    np.testing.assert_allclose(out.data, M, atol=1e-15)
    out = graph_convolve(T(M), T(np.full((4, 4), 0.25)), [T(np.eye(3))])
    np.testing.assert_allclose(out.data, M + M.mean(axis=0), atol=1e-14)


def test_graph_convolve_matches_dense_oracle():
    rng = np.random.default_rng(7)
    M, A, W = rng.standard_normal((3, 2)), rng.random((3, 3)), rng.standard_normal((2, 2))
    dense = (A + np.eye(3)) @ M @ W
    got = graph_convolve(T(M), T(A), [T(W)]).data
    np.testing.assert_allclose(got, dense, atol=1e-12)
    np.testing.assert_allclose(got, oracles.graph_convolve(M, A, [W]), atol=1e-12)


def test_graph_convolve_stacked_layers_use_relu():
    rng = np.random.default_rng(8)
    M, A = rng.standard_normal((4, 3)), rng.random((4, 4))
    ws = [rng.standard_normal((3, 3)) for _ in range(2)]
    got = graph_convolve(T(M), T(A), [T(w) for w in ws]).data
    np.testing.assert_allclose(got, oracles.graph_convolve(M, A, ws, relu=True), atol=1e-12)
    assert np.all(got >= 0)
    lin = graph_convolve(T(M), T(A), [T(w) for w in ws], nonlinearity=False).data
    np.testing.assert_allclose(lin, oracles.graph_convolve(M, A, ws, relu=False), atol=1e-12)


def test_vertex_layout_is_row_major():
    M = T(np.arange(2 * 3 * 1, dtype=float).reshape(2, 3, 1))
    V = to_vertices(M)
    assert V.data[1 * 3 + 2, 0] == M.data[1, 2, 0]
    np.testing.assert_array_equal(from_vertices(V, 2, 3).data, M.data)


def _block(seed=0, **kw):
    store = ParamStore(seed)
    args = dict(c_v=6, c_l=5, c_m=4, c_h=3, r=2)
    args.update(kw)
    return CmpcBlock(store, "blk", **args), store


def _ctx(rng, T_=3, c_l=5, R_zero=False, batch=()):
    L = rng.standard_normal(batch + (T_, c_l))
    R = np.zeros_like(L) if R_zero else rng.standard_normal(L.shape)
    return LinguisticContext(q=T(rng.standard_normal(batch + (c_l,)), True), R=T(R, True),
                             s=T(rng.standard_normal(batch + (c_l,)), True))


def test_block_shape_contract_and_parameter_removal():
    rng = np.random.default_rng(9)
    X = T(rng.standard_normal((2, 4, 4, 6)))
    ctx = _ctx(rng, batch=(2,))
    counts = {}
    for ep in (False, True):
        for rar in (False, True):
            blk, store = _block(ep=ep, rar=rar)
            Y, graph = blk(X, ctx)
            assert Y.shape == (2, 4, 4, 4)
            assert (graph is not None) == rar
            names = store.names()
            assert any(".ep." in n for n in names) == ep
            assert any(".rar." in n for n in names) == rar
            counts[ep, rar] = store.count()
    # baseline: conv over [X; s] only
    assert counts[False, False] == (6 + 5) * 4 + 4


def test_block_composition_oracle_with_zero_relations():
    rng = np.random.default_rng(10)
    blk, store = _block(ep=True, rar=True)
    X = rng.standard_normal((4, 4, 6))
    ctx = _ctx(rng, R_zero=True)
    Y, graph = blk(T(X), ctx)
    M = oracles.entity_perception(ctx.q.data, X, [w.data for w in blk.w3], [w.data for w in blk.w4])
    M_g = M.reshape(16, 4) @ blk.w_vertex.data + blk.b_vertex.data
    A = np.full((16, 16), 1 / 16)
    M_bar = oracles.graph_convolve(M_g, A, [blk.w7[0].data])
    feats = np.concatenate([X, M_bar.reshape(4, 4, 4), np.broadcast_to(ctx.s.data, (4, 4, 5))], -1)
    k = blk.out_kernel.data[0, 0]
    expect = feats @ k + blk.out_bias.data
    np.testing.assert_allclose(graph.A.data, A, atol=1e-12)
    np.testing.assert_allclose(Y.data, expect, atol=1e-9)



def test_rar_without_ep_reasons_over_concat_fusion():
    rng = np.random.default_rng(13)
    blk, store = _block(ep=False, rar=True)
    X = rng.standard_normal((4, 4, 6))
    ctx = _ctx(rng, R_zero=True)
    Y, graph = blk(T(X), ctx)
    s_map = np.broadcast_to(ctx.s.data, (4, 4, 5))
    M = np.concatenate([X, s_map], -1) @ blk.fuse_kernel.data[0, 0] + blk.fuse_bias.data
    M_g = M.reshape(16, 4) @ blk.w_vertex.data + blk.b_vertex.data
    M_bar = oracles.graph_convolve(M_g, np.full((16, 16), 1 / 16), [blk.w7[0].data])
    feats = np.concatenate([X, M_bar.reshape(4, 4, 4), s_map], -1)
    expect = feats @ blk.out_kernel.data[0, 0] + blk.out_bias.data
    np.testing.assert_allclose(Y.data, expect, atol=1e-9)
    np.testing.assert_allclose(graph.M_g.data, M_g, atol=1e-12)


def test_block_gradient_check():
    rng = np.random.default_rng(11)
    blk, store = _block(ep=True, rar=True, n_gc=2)
    X = T(rng.standard_normal((4, 4, 6)), True)
    ctx = _ctx(rng)
    wts = T(rng.standard_normal((4, 4, 4)))
    tensors = list(store) + [X, ctx.q, ctx.R, ctx.s]
    err = check_gradients(lambda: sum_(blk(X, ctx)[0] * wts), tensors, max_entries=40)
    assert err < 1e-4


def test_tile_broadcasts_vector():
    v = T([1.0, 2.0])
    out = tile(v, 2, 3)
    assert out.shape == (2, 3, 2)
    np.testing.assert_array_equal(out.data[1, 2], [1.0, 2.0])
    # concat+1x1 conv sanity: tiled vector becomes a constant map
    k = T(np.ones((1, 1, 2, 1)))
    y = conv2d(concat([tile(v, 2, 3)], axis=-1), k)
    assert np.all(y.data == 3.0)


def test_share_gc_reuses_one_weight():
    blk, store = _block(n_gc=3, share_gc=True)
    assert blk.w7[0] is blk.w7[2]
    assert sum(".rar.w7" in n for n in store.names()) == 1


def test_block_channel_mismatch_raises():
    blk, _ = _block()
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError):
        blk(T(rng.standard_normal((4, 4, 5))), _ctx(rng))
