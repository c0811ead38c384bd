"""Expression encoding: vocabulary, LSTM word features, word-type routing.

Word-type columns of P are ordered (entity, attribute, relation, unnecessary).
Token batches are right-padded with PAD=0; ``mask`` is 1 on real tokens.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .engine import (
    ContractError,
    concat,
    embedding,
    matmul,
    mul,
    sigmoid,
    softmax,
    sum_,
    tanh,
)

PAD, UNK = "<pad>", "<unk>"
ENT, ATTR, REL, UN = range(4)
WORD_TYPES = ("entity", "attribute", "relation", "unnecessary")


class Vocabulary:
    def __init__(self, tokens=()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for t in tokens:
            self.add(t)

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def index(self, token):
        return self.stoi.get(token, 1)

    def save(self, path):
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_tokens(lines)

    @classmethod
    def from_tokens(cls, itos):
        itos = list(itos)
        if itos[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with <pad>, <unk>")
        return cls(itos[2:])


def tokenize(expression: str, vocab: Vocabulary):
    """Lowercase, whitespace split, unknown words -> UNK; never empty."""
    words = expression.lower().split()
    if not words:
        return [vocab.stoi[UNK]]
    return [vocab.index(w) for w in words]


def unknown_words(expression: str, vocab: Vocabulary):
    return [w for w in expression.lower().split() if w not in vocab.stoi]


def pad_batch(sequences):
    """List of index lists -> (ids[B, T], mask[B, T])."""
    T = max(len(s) for s in sequences)
    ids = np.zeros((len(sequences), T), dtype=np.int64)
    mask = np.zeros((len(sequences), T))
    for b, s in enumerate(sequences):
        ids[b, :len(s)] = s
        mask[b, :len(s)] = 1.0
    return ids, mask


class LanguageEncoder:
    """Embedding + single-layer unidirectional LSTM + word-type classifier.

    The classifier follows p_t = softmax(W2 sigmoid(W1 l_t + b1) + b2).
    """

    def __init__(self, store, vocab_size, c_l=64, c_n=32, prefix="lang"):
        self.vocab_size = int(vocab_size)
        self.c_l = int(c_l)
        p = prefix
        self.embed = store.add(f"{p}.embed", (vocab_size, c_l), fan_in=1)
        self.w_ih = store.add(f"{p}.lstm.w_ih", (c_l, 4 * c_l), fan_in=c_l)
        self.w_hh = store.add(f"{p}.lstm.w_hh", (c_l, 4 * c_l), fan_in=c_l)
        self.b = store.add(f"{p}.lstm.b", (4 * c_l,), fan_in=c_l, init="bias")
        self.w1 = store.add(f"{p}.types.w1", (c_l, c_n), fan_in=c_l)
        self.b1 = store.add(f"{p}.types.b1", (c_n,), fan_in=c_l, init="bias")
        self.w2 = store.add(f"{p}.types.w2", (c_n, 4), fan_in=c_n)
        self.b2 = store.add(f"{p}.types.b2", (4,), fan_in=c_n, init="bias")

    def encode(self, ids):
        """ids: [T] or [B, T] ints -> L: [T, C_l] or [B, T, C_l]."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            out = self.encode(ids[None])
            return out.reshape(out.shape[1:])
        if ids.shape[1] < 1:
            raise ContractError("token sequence must hold at least one token")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise ContractError(f"token index outside vocabulary of size {self.vocab_size}")
        B, T = ids.shape
        C = self.c_l
        x = embedding(self.embed, ids)
        xw = matmul(x, self.w_ih) + self.b
        h = c = None
        steps = []
        for t in range(T):
            gates = xw[:, t, :]
            if h is not None:
                gates = gates + matmul(h, self.w_hh)
            i = sigmoid(gates[:, 0:C])
            f = sigmoid(gates[:, C:2 * C])
            g = tanh(gates[:, 2 * C:3 * C])
            o = sigmoid(gates[:, 3 * C:4 * C])
            c = i * g if c is None else f * c + i * g
            h = o * tanh(c)
            steps.append(h.reshape(B, 1, C))
        return concat(steps, axis=1)

    def classify_word_types(self, L):
        hidden = sigmoid(matmul(L, self.w1) + self.b1)
        return softmax(matmul(hidden, self.w2) + self.b2, axis=-1)


def _weighted_words(L, weights, mask):
    if mask is not None:
        weights = mul(weights, np.asarray(mask, dtype=np.float64))
    w = weights.reshape(weights.shape + (1,))
    return sum_(mul(w, L), axis=-2)


def entity_context(L, P, mask=None):
    """q = sum_t (p_ent + p_attr) l_t over real tokens."""
    return _weighted_words(L, P[..., ENT] + P[..., ATTR], mask)


def relational_features(L, P, mask=None):
    """R[t] = p_rel[t] * l_t, zero on PAD rows."""
    w = P[..., REL]
    if mask is not None:
        w = mul(w, np.asarray(mask, dtype=np.float64))
    return mul(w.reshape(w.shape + (1,)), L)


def necessary_words(L, P, mask=None):
    """s = sum_t (p_ent + p_attr + p_rel) l_t over real tokens."""
    return _weighted_words(L, P[..., ENT] + P[..., ATTR] + P[..., REL], mask)
