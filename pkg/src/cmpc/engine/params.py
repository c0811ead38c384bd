"""Seeded parameter store and initialisation."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from .tensor import Tensor

INIT_SCHEME = ("weights uniform(-g*sqrt(3/fan_in), +g*sqrt(3/fan_in)) (variance g^2/fan_in), "
               "biases uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); Philox-4x64 generator")


def make_rng(seed: int) -> np.random.Generator:
    """Philox-4x64 counter-based generator; the only entropy source for init."""
    return np.random.Generator(np.random.Philox(int(seed)))


class ParamStore:
    """Ordered name -> Tensor map. Insertion order is the serialisation order."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = make_rng(seed)
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name, shape, fan_in=None, init="weight", gain=1.0):
        """``init``: "weight" (variance gain^2/fan_in), "bias" (+-1/sqrt(fan_in))
        or "zeros"."""
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            data = np.zeros(shape)
        else:
            fan_in = fan_in if fan_in is not None else shape[0]
            if init == "bias":
                bound = 1.0 / math.sqrt(fan_in)
            else:
                bound = gain * math.sqrt(3.0 / fan_in)
            data = self.rng.uniform(-bound, bound, size=shape)
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def count(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def state(self):
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state(self, state):
        if list(state) != list(self._params):
            missing = set(self._params) ^ set(state)
            raise KeyError(f"parameter sets differ: {sorted(missing)[:5]}")
        for k, v in state.items():
            if v.shape != self._params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self._params[k].shape}")
            self._params[k].data = np.array(v, dtype=np.float64)
