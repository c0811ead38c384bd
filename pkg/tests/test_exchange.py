import numpy as np

from cmpc.engine import ParamStore, Tensor, sum_
from cmpc.engine.gradcheck import check_gradients
from cmpc.exchange import (
    TgfeParams,
    context_vector,
    exchange_round,
    global_pool,
    pooling_weights,
    tgfe_forward,
)

import oracles


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def params(seed=0, c_l=3, c_m=2, c_h=2):
    store = ParamStore(seed)
    return TgfeParams(store, "tgfe", c_l, c_m, c_h), store


def zero(p):
    for t in (p.w8, p.w9, p.w_fc, p.b_fc):
        t.data[...] = 0.0
    return p


def test_pooling_zero_text_is_uniform():
    p, _ = params()
    Y = T(np.random.default_rng(0).standard_normal((2, 2, 2)))
    lam = pooling_weights(T(np.zeros(3)), Y, p)
    np.testing.assert_allclose(lam.data, 0.25, atol=1e-15)


def test_pooling_constant_map_is_uniform():
    p, _ = params()
    Y = T(np.broadcast_to([0.3, -1.2], (3, 3, 2)).copy())
    lam = pooling_weights(T([1.0, 2.0, -1.0]), Y, p)
    np.testing.assert_allclose(lam.data, 1 / 9, atol=1e-15)


def test_pooling_hand_case():
    p, _ = params(c_l=2, c_m=2, c_h=1)
    p.w8.data[...] = [[1.0], [0.0]]
    p.w9.data[...] = [[1.0], [1.0]]
    Y = T([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 2.0], [1.0, 1.0]]])
    # raw = (Y_p . [1, 1]) * (s . [1, 0]) with s = [1, 5] -> [0, 1, 2, 2]
    lam = pooling_weights(T([1.0, 5.0]), Y, p).data
    e = np.exp([0.0, 1.0, 2.0, 2.0])
    np.testing.assert_allclose(lam, e / e.sum(), atol=1e-12)
    raw = pooling_weights(T([1.0, 5.0]), Y, p, normalize=False).data
    np.testing.assert_allclose(raw, [0.0, 1.0, 2.0, 2.0], atol=1e-15)


def test_global_pool_selector_mean_and_oracle():
    rng = np.random.default_rng(1)
    Y = rng.standard_normal((2, 2, 3))
    onehot = np.zeros(4)
    onehot[2] = 1.0
    np.testing.assert_allclose(global_pool(T(onehot), T(Y)).data, Y[1, 0], atol=1e-15)
    np.testing.assert_allclose(global_pool(T(np.full(4, 0.25)), T(Y)).data, Y.mean(axis=(0, 1)), atol=1e-15)
    lam = rng.random(4)
    np.testing.assert_allclose(global_pool(T(lam), T(Y)).data, oracles.global_pool(lam, Y), atol=1e-12)


def test_context_vector_zero_params_and_projection():
    p, _ = params(c_l=3, c_m=2)
    zero(p)
    rng = np.random.default_rng(2)
    s, g = T(rng.standard_normal(3)), T(rng.standard_normal(2))
    c = context_vector(s, g, p)
    assert np.all(c.data == 0)
    np.testing.assert_allclose(0.5 * (1 + np.tanh(0.5 * c.data)), 0.5)
    p.w_fc.data[3:, :] = np.eye(2)
    np.testing.assert_allclose(context_vector(s, g, p).data, g.data, atol=1e-15)


def test_context_vector_gradient():
    p, store = params(c_l=3, c_m=2)
    rng = np.random.default_rng(3)
    s, Y = T(rng.standard_normal(3), True), T(rng.standard_normal((2, 2, 2)), True)

    def f():
        lam = pooling_weights(s, Y, p)
        c = context_vector(s, global_pool(lam, Y), p)
        return sum_(c * c)

    assert check_gradients(f, list(store) + [s, Y]) < 1e-4


def _state(rng, H=2, W=2, C=2):
    return {lv: T(rng.standard_normal((H, W, C)), True) for lv in (3, 4, 5)}


def test_closed_and_open_gates():
    rng = np.random.default_rng(4)
    p, _ = params()
    zero(p)
    state = _state(rng)
    p.b_fc.data[...] = -800.0
    new, _ = exchange_round(state, T(rng.standard_normal(3)), p)
    for lv in state:
        np.testing.assert_array_equal(new[lv].data, state[lv].data)
    p.b_fc.data[...] = 800.0
    new, _ = exchange_round(state, T(rng.standard_normal(3)), p)
    total = sum(state[lv].data for lv in state)
    for lv in state:
        np.testing.assert_allclose(new[lv].data, total, atol=1e-14)


def test_exchange_round_hand_case_1x1():
    p, _ = params(c_l=1, c_m=2, c_h=1)
    p.w8.data[...] = 1.0
    p.w9.data[...] = 1.0
    p.w_fc.data[...] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    p.b_fc.data[...] = [0.0, -1.0]
    state = {3: T([[[1.0, 2.0]]]), 4: T([[[0.0, -1.0]]]), 5: T([[[3.0, 0.5]]])}
    s = T([0.7])
    new, lams = exchange_round(state, s, p)
    sig = lambda x: 1 / (1 + np.exp(-x))
    # on a 1x1 grid lambda = 1 and g = Y_i, so c_i = (Y_i[0], Y_i[1] - 1)
    for i, others in ((3, (4, 5)), (4, (3, 5)), (5, (3, 4))):
        y = state[i].data[0, 0]
        gate = sig(np.array([y[0], y[1] - 1.0]))
        want = y + gate * sum(state[j].data[0, 0] for j in others)
        np.testing.assert_allclose(new[i].data[0, 0], want, atol=1e-12)
        np.testing.assert_allclose(lams[i].data, [1.0])


def test_exchange_round_is_synchronous_and_matches_oracle():
    rng = np.random.default_rng(5)
    for _ in range(5):
        p, _ = params(seed=int(rng.integers(1000)), c_l=3, c_m=2, c_h=2)
        state = _state(rng, 2, 3)
        s = rng.standard_normal(3)
        new, _ = exchange_round(state, T(s), p)
        want = oracles.exchange_round({k: v.data for k, v in state.items()}, s, p.w8.data, p.w9.data,
                                      p.w_fc.data, p.b_fc.data)
        for lv in state:
            np.testing.assert_allclose(new[lv].data, want[lv], atol=1e-9)
        # order of evaluation must not matter
        rev, _ = exchange_round(state, T(s), p, order=(5, 4, 3))
        for lv in state:
            np.testing.assert_array_equal(rev[lv].data, new[lv].data)


def test_tgfe_rounds_compose():
    rng = np.random.default_rng(6)
    p, _ = params()
    state = _state(rng)
    s = rng.standard_normal(3)
    assert tgfe_forward(state, T(s), 0, p) is state
    one = tgfe_forward(state, T(s), 1, p)
    once, _ = exchange_round(state, T(s), p)
    for lv in state:
        np.testing.assert_array_equal(one[lv].data, once[lv].data)
    two, maps = tgfe_forward(state, T(s), 2, p, return_maps=True)
    assert len(maps) == 2
    ref = {k: v.data for k, v in state.items()}
    for _ in range(2):
        ref = oracles.exchange_round(ref, s, p.w8.data, p.w9.data, p.w_fc.data, p.b_fc.data)
    for lv in state:
        np.testing.assert_allclose(two[lv].data, ref[lv], atol=1e-9)


def test_per_level_params_and_unnormalized_pooling():
    rng = np.random.default_rng(7)
    store = ParamStore(0)
    per = {lv: TgfeParams(store, f"tgfe{lv}", 3, 2, 2) for lv in (3, 4, 5)}
    state = _state(rng)
    s = rng.standard_normal(3)
    new, _ = exchange_round(state, T(s), per, normalize=False)
    for lv in state:
        single = {k: v.data for k, v in state.items()}
        p = per[lv]
        want = oracles.exchange_round(single, s, p.w8.data, p.w9.data, p.w_fc.data, p.b_fc.data,
                                      normalize=False)
        np.testing.assert_allclose(new[lv].data, want[lv], atol=1e-9)


def test_exchange_gradient_two_rounds():
    rng = np.random.default_rng(8)
    p, store = params()
    state = _state(rng)
    s = T(rng.standard_normal(3), True)
    w = T(rng.standard_normal((2, 2, 2)))

    def f():
        out = tgfe_forward(state, s, 2, p)
        return sum_((out[3] + out[4] * 2.0 + out[5] * 3.0) * w)

    assert check_gradients(f, list(store) + [s] + list(state.values())) < 1e-4
