"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that touches a tensor with ``requires_grad`` records its
parents and a local-gradient closure. Node creation order is a valid
topological order, so ``backward`` replays recorded nodes in descending
creation order.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation's precondition is violated."""


_ids = itertools.count()
_grad_enabled = True
_debug = False


def set_debug(flag: bool) -> None:
    """Check every forward result for NaN/Inf when enabled."""
    global _debug
    _debug = bool(flag)


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _debug and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values produced by a forward operation")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), bw)


def scale(a, c: float):
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def log(a):
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def softplus(a):
    """log(1 + exp(x)), evaluated without overflow."""
    a = as_tensor(a)
    return _result(np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid(a.data),))


def elementwise(op: str, *args):
    """Dispatch by name: add, mul, sigmoid, tanh, relu, scale."""
    table = {"add": add, "mul": mul, "sigmoid": sigmoid, "tanh": tanh, "relu": relu,
             "scale": scale, "sub": sub, "div": div, "exp": exp}
    try:
        fn = table[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# -------------------------------------------------------------- reductions

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(y, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum_(a, axis, keepdims), 1.0 / n)


# ------------------------------------------------------------------ shapes

def reshape(a, shape):
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return _result(y, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, i, j):
    a = as_tensor(a)
    return _result(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        y = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _result(y.copy(), (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(y, tuple(tensors), bw)


def getitem(a, idx):
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), bw)


def embedding(table, ids):
    """Row lookup ``table[ids]`` for an integer index array."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"token index out of range for table with {table.shape[0]} rows")

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)

    return _result(table.data[ids], (table,), bw)


# ------------------------------------------------------------ linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1:
        out = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1:
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data @ b.data, (a, b), bw)


def softmax(a, axis=-1, mask=None):
    """Max-shifted softmax along ``axis``.

    ``mask`` (broadcastable, 1 = keep, 0 = drop) zeroes dropped entries and
    renormalises over the kept ones.
    """
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ContractError(f"axis {axis} invalid for {a.ndim}-d tensor")
    x = a.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask) > 0, x.shape)
        x = np.where(keep, x, -np.inf)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), bw)


# ----------------------------------------------------------- convolutions

def conv2d(x, kernel, bias=None, stride=1):
    """Same-padded cross-correlation over channels-last maps.

    x: (H, W, Cin) or (B, H, W, Cin); kernel: (k, k, Cin, Cout); bias: (Cout,).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    k = kernel.shape[0]
    if kernel.ndim != 4 or kernel.shape[1] != k or k % 2 == 0:
        raise ContractError(f"kernel must be (k, k, Cin, Cout) with odd k, got {kernel.shape}")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    B, H, W, cin = xd.shape
    if cin != kernel.shape[2]:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    cout = kernel.shape[3]
    s = int(stride)
    Ho, Wo = (H - 1) // s + 1, (W - 1) // s + 1
    kmat = kernel.data.reshape(k * k * cin, cout)

    if k == 1:
        cols = xd[:, ::s, ::s, :]
        cols = cols.reshape(-1, cin)
    else:
        p = k // 2
        xp = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0)))
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        # (B, Ho, Wo, Cin, k, k) -> rows ordered (ki, kj, cin) to match kmat
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, k * k * cin)
    y = cols @ kmat
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.data
    y = y.reshape(B, Ho, Wo, cout)
    if unbatched:
        y = y[0]

    def bw(g):
        g2 = g.reshape(-1, cout)
        gk = (cols.T @ g2).reshape(kernel.shape)
        dcols = g2 @ kmat.T
        if k == 1:
            gx = np.zeros_like(xd)
            gx[:, ::s, ::s, :] = dcols.reshape(B, Ho, Wo, cin)
        else:
            p = k // 2
            dcols = dcols.reshape(B, Ho, Wo, k, k, cin)
            gxp = np.zeros((B, H + 2 * p, W + 2 * p, cin))
            for di in range(k):
                for dj in range(k):
                    gxp[:, di:di + s * Ho:s, dj:dj + s * Wo:s, :] += dcols[:, :, :, di, dj, :]
            gx = gxp[:, p:p + H, p:p + W, :]
        if unbatched:
            gx = gx[0]
        grads = (gx, gk)
        if bias is not None:
            grads = grads + (g2.sum(axis=0),)
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(y, parents, bw)


def _interp_matrix(n_out, n_in):
    """Half-pixel bilinear interpolation weights, rows sum to 1."""
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for o in range(n_out):
        src = min(max((o + 0.5) * ratio - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        w = src - lo
        m[o, lo] += 1.0 - w
        m[o, hi] += w
    return m


def resize_bilinear(x, size):
    """Bilinear resampling of the two spatial axes of (..., H, W, C)."""
    x = as_tensor(x)
    H, W = x.shape[-3], x.shape[-2]
    Ho, Wo = size
    if (Ho, Wo) == (H, W):
        return x
    mh, mw = _interp_matrix(Ho, H), _interp_matrix(Wo, W)
    y = np.einsum("oh,...hwc,pw->...opc", mh, x.data, mw, optimize=True)

    def bw(g):
        return (np.einsum("oh,...opc,pw->...hwc", mh, g, mw, optimize=True),)

    return _result(y, (x,), bw)


# ---------------------------------------------------------------- backward

def _tape(root):
    """Nodes reachable from ``root`` in reverse creation order."""
    seen = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen or not node.requires_grad:
            continue
        seen[node._id] = node
        stack.extend(node._parents)
    return [seen[i] for i in sorted(seen, reverse=True)]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not attached to any tensor requiring grad")
    grads = {loss._id: np.ones_like(loss.data)}
    for node in _tape(loss):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg
