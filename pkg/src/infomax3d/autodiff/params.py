"""Named learnable parameters with seeded initialization."""

from __future__ import annotations

import zlib

import numpy as np

from .tensor import Tensor


def stream_seed(seed: int, tag: str) -> list[int]:
    """Deterministic derived seed for an independent rng stream."""
    return [int(seed), zlib.crc32(tag.encode())]


class ParamStore:
    """Uniquely named, shaped learnable tensors plus their gradient slots."""

    def __init__(self, seed=0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape, init="zeros") -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        shape = tuple(shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "normal":
            data = self.rng.standard_normal(shape)
        elif isinstance(init, tuple) and init[0] == "glorot":
            _, fan_in, fan_out = init
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        t.grad = np.zeros(shape)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r} in checkpoint")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {t.data.shape}")
            t.data = arr.copy()
