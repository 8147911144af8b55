"""Layers built on the tensor ops: Linear, BatchNorm, MLP."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParamStore

BN_EPS = 1e-8  # double precision makes a tiny epsilon safe


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int):
        self.W = store.add(f"{name}/W", (d_in, d_out), init=("glorot", d_in, d_out))
        self.b = store.add(f"{name}/b", (d_out,), init="zeros")

    def __call__(self, x):
        return T.add(T.matmul(x, self.W), self.b)


class BatchNorm:
    """Batch normalization over axis 0 with running statistics.

    Running buffers follow running = (1 - momentum) * running + momentum * batch,
    using the biased batch variance. Train mode normalizes by batch statistics,
    eval mode by the running buffers.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, momentum: float, eps: float = BN_EPS):
        self.gamma = store.add(f"{name}/bn_gamma", (dim,), init="ones")
        self.beta = store.add(f"{name}/bn_beta", (dim,), init="zeros")
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps
        self.name = name

    def __call__(self, x, train: bool):
        if train:
            mu = T.mean_reduce(x, axis=0, keepdims=True)
            centered = T.sub(x, mu)
            var = T.mean_reduce(T.mul(centered, centered), axis=0, keepdims=True)
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mu.data.reshape(-1)
            self.running_var = (1.0 - m) * self.running_var + m * var.data.reshape(-1)
            xhat = T.div(centered, T.sqrt(T.add(var, self.eps)))
        else:
            scale = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = T.mul(T.sub(x, self.running_mean), scale)
        return T.add(T.mul(xhat, self.gamma), self.beta)

    def buffers(self) -> dict[str, np.ndarray]:
        return {
            f"{self.name}/bn_running_mean": self.running_mean.copy(),
            f"{self.name}/bn_running_var": self.running_var.copy(),
        }

    def load_buffers(self, arrays: dict[str, np.ndarray]):
        self.running_mean = np.asarray(arrays[f"{self.name}/bn_running_mean"], dtype=np.float64).copy()
        self.running_var = np.asarray(arrays[f"{self.name}/bn_running_var"], dtype=np.float64).copy()


class MLP:
    """Stack of Linear layers with relu between them (last layer affine).

    `hidden_bn` inserts BatchNorm after each hidden activation; `dropout`
    applies after each hidden activation when training.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        dims,
        *,
        hidden_bn: bool = False,
        bn_momentum: float = 0.1,
        dropout: float = 0.0,
    ):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output dims")
        self.linears = [Linear(store, f"{name}/lin{i}", dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        self.batchnorms = []
        if hidden_bn:
            self.batchnorms = [
                BatchNorm(store, f"{name}/hbn{i}", dims[i + 1], bn_momentum) for i in range(len(dims) - 2)
            ]
        self.dropout = dropout

    def __call__(self, x, train: bool = False, rng=None):
        last = len(self.linears) - 1
        for i, lin in enumerate(self.linears):
            x = lin(x)
            if i < last:
                x = T.relu(x)
                if self.batchnorms:
                    x = self.batchnorms[i](x, train)
                if self.dropout > 0.0:
                    x = T.dropout(x, self.dropout, rng, train)
        return x
