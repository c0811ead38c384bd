import numpy as np
import pytest

from cmpc.engine import ContractError, ParamStore, Tensor, sum_
from cmpc.engine.gradcheck import check_gradients
from cmpc.language import (
    PAD,
    UNK,
    LanguageEncoder,
    Vocabulary,
    entity_context,
    necessary_words,
    pad_batch,
    relational_features,
    tokenize,
    unknown_words,
)
from cmpc.synth import default_vocabulary


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def encoder(seed=0, V=6, c_l=4, c_n=3):
    store = ParamStore(seed)
    return LanguageEncoder(store, V, c_l, c_n), store


def test_tokenize_lookup_case_and_empty():
    v = default_vocabulary()
    assert tokenize("the red square", v) == [v.index("the"), v.index("red"), v.index("square")]
    assert tokenize("Red SQUARE", v) == tokenize("red square", v)
    assert tokenize("", v) == [v.stoi[UNK]]
    assert tokenize("the purple square", v)[1] == v.stoi[UNK]
    assert unknown_words("the purple Zebra", v) == ["purple", "zebra"]


def test_vocabulary_round_trip(tmp_path):
    v = default_vocabulary()
    v.save(tmp_path / "vocab.txt")
    assert Vocabulary.load(tmp_path / "vocab.txt") == v
    assert v.itos[:2] == [PAD, UNK]
    with pytest.raises(ValueError):
        Vocabulary.from_tokens(["a", "b"])


def test_pad_batch():
    ids, mask = pad_batch([[3, 4], [5], [6, 7, 8]])
    np.testing.assert_array_equal(ids, [[3, 4, 0], [5, 0, 0], [6, 7, 8]])
    np.testing.assert_array_equal(mask, [[1, 1, 0], [1, 0, 0], [1, 1, 1]])


def test_zero_lstm_gives_zero_states():
    enc, store = encoder()
    for name in ("lang.lstm.w_ih", "lang.lstm.w_hh", "lang.lstm.b"):
        store[name].data[...] = 0.0
    L = enc.encode([2, 3, 4])
    assert L.shape == (3, 4)
    assert np.all(L.data == 0)


def test_zero_weights_depend_only_on_biases():
    enc, store = encoder()
    store["lang.lstm.w_ih"].data[...] = 0.0
    store["lang.lstm.w_hh"].data[...] = 0.0
    a, b = enc.encode([2, 3]).data, enc.encode([4, 5]).data
    np.testing.assert_array_equal(a, b)


def test_unidirectional_causality():
    enc, _ = encoder(1)
    a = enc.encode([2, 3, 4, 5]).data
    b = enc.encode([2, 4, 3, 5]).data
    np.testing.assert_array_equal(a[0], b[0])
    assert not np.allclose(a[1], b[1])
    assert not np.allclose(a[3], b[3])


def test_batched_encode_matches_single():
    enc, _ = encoder(2)
    ids, _ = pad_batch([[2, 3, 4], [5, 1]])
    batch = enc.encode(ids).data
    np.testing.assert_allclose(batch[0], enc.encode([2, 3, 4]).data, atol=1e-15)
    np.testing.assert_allclose(batch[1, :2], enc.encode([5, 1]).data, atol=1e-15)


def test_encode_rejects_out_of_range_and_empty():
    enc, _ = encoder()
    with pytest.raises(ContractError):
        enc.encode([2, 6])
    with pytest.raises(ContractError):
        enc.encode(np.zeros((1, 0), dtype=int))


def test_encode_gradient_wrt_embedding():
    enc, store = encoder(3)
    assert check_gradients(lambda: sum_(enc.encode([2, 3, 2, 5])), [store["lang.embed"]]) < 1e-4


def test_word_type_classifier_cases():
    enc, store = encoder(4)
    L = T(np.random.default_rng(0).standard_normal((3, 4)))
    for n in ("lang.types.w1", "lang.types.b1", "lang.types.w2", "lang.types.b2"):
        store[n].data[...] = 0.0
    np.testing.assert_allclose(enc.classify_word_types(L).data, 0.25, atol=1e-15)
    store["lang.types.b2"].data[...] = [10.0, 0.0, 0.0, 0.0]
    assert np.all(enc.classify_word_types(L).data[:, 0] > 0.999)
    enc2, _ = encoder(5)
    P = enc2.classify_word_types(L).data
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_entity_context_cases():
    L = T([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_array_equal(entity_context(L[0:1], T([[1.0, 0, 0, 0]])).data, [1.0, 2.0])
    np.testing.assert_array_equal(entity_context(L, T([[0, 0, 0.5, 0.5], [0, 0, 1.0, 0]])).data, [0.0, 0.0])
    # rows [0.5, 0.5, 0, 0] and [0, 0, 1, 0] -> 1.0 * l_1
    q = entity_context(L, T([[0.5, 0.5, 0, 0], [0, 0, 1.0, 0]]))
    np.testing.assert_allclose(q.data, [1.0, 2.0], atol=1e-15)


def test_relational_features_cases():
    rng = np.random.default_rng(6)
    L = T(rng.standard_normal((3, 4)))
    P = np.zeros((3, 4))
    P[:, 0] = 1.0
    assert np.all(relational_features(L, T(P)).data == 0)
    P = np.zeros((3, 4))
    P[:, 3] = 1.0
    P[1] = [0, 0, 1, 0]
    R = relational_features(L, T(P)).data
    np.testing.assert_array_equal(R[1], L.data[1])
    assert np.all(R[[0, 2]] == 0)
    P = rng.dirichlet(np.ones(4), size=3)
    np.testing.assert_allclose(relational_features(L, T(P)).data, P[:, 2:3] * L.data, atol=1e-15)


def test_necessary_words_cases_and_mask():
    L = T([[1.0, 2.0], [3.0, -1.0]])
    assert np.all(necessary_words(L, T([[0, 0, 0, 1.0], [0, 0, 0, 1.0]])).data == 0)
    np.testing.assert_allclose(necessary_words(L[0:1], T([[0.2, 0.3, 0.5, 0.0]])).data, [1.0, 2.0])
    P = T([[0.1, 0.2, 0.3, 0.4], [0.5, 0.0, 0.25, 0.25]])
    s = necessary_words(L, P).data
    np.testing.assert_allclose(s, 0.6 * np.array([1.0, 2.0]) + 0.75 * np.array([3.0, -1.0]), atol=1e-15)
    masked = necessary_words(L, P, mask=np.array([1.0, 0.0])).data
    np.testing.assert_allclose(masked, [0.6, 1.2], atol=1e-15)
