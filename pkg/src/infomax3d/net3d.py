"""3D encoder over the complete interatomic-distance graph.

Takes only atom coordinates (never 2D features): distances are lifted by the
frequency encoding, projected to edge vectors, and message passing updates
edges and atoms jointly, with a sigmoid soft edge weight gating each message.
The readout is invariant to rotations, translations, reflections and atom
permutations by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import tensor as T
from .conformers import Conformer, DistanceMatrix, gamma_encode_array, pairwise_distances
from .net2d import READOUT_AGGREGATORS, pool_nodes


@dataclass
class Net3DConfig:
    depth: int = 1
    hidden_dim: int = 20
    edge_hidden_dim: int = 20
    num_frequencies: int = 4
    readout_aggregators: tuple = ("mean", "max", "std")
    readout_mlp_layers: int = 1
    dropout: float = 0.0
    batchnorm: bool = True
    batchnorm_momentum: float = 0.93
    d_z: int = 64
    max_atoms: int = 128

    def __post_init__(self):
        self.readout_aggregators = tuple(self.readout_aggregators)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.num_frequencies < 0:
            raise ValueError("num_frequencies must be >= 0")
        for a in self.readout_aggregators:
            if a not in READOUT_AGGREGATORS:
                raise ValueError(f"unknown readout aggregator {a!r}")

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "hidden_dim": self.hidden_dim,
            "edge_hidden_dim": self.edge_hidden_dim,
            "num_frequencies": self.num_frequencies,
            "readout_aggregators": list(self.readout_aggregators),
            "readout_mlp_layers": self.readout_mlp_layers,
            "dropout": self.dropout,
            "batchnorm": self.batchnorm,
            "batchnorm_momentum": self.batchnorm_momentum,
            "d_z": self.d_z,
            "max_atoms": self.max_atoms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Net3DConfig":
        return cls(**d)


class CloudBatch:
    """Point clouds packed into one table of atoms plus all ordered pairs
    (u, v), u != v, within each cloud. Pairs are grouped by the receiving
    atom u (sorted segment ids)."""

    def __init__(self, conformers: list[Conformer], num_frequencies: int, max_atoms: int = 128):
        owner_all, other_all, gamma_all, graph_ids = [], [], [], []
        offset = 0
        for gi, conf in enumerate(conformers):
            n = conf.n_atoms
            if n > max_atoms:
                raise ValueError(
                    f"conformer has {n} atoms, above the supported cap of {max_atoms} "
                    "(complete-graph cost is quadratic)"
                )
            D = pairwise_distances(conf)
            u, v = np.where(~np.eye(n, dtype=bool))
            owner_all.append(u + offset)
            other_all.append(v + offset)
            gamma_all.append(gamma_encode_array(D.values[u, v], num_frequencies))
            graph_ids.append(np.full(n, gi, dtype=np.int64))
            offset += n
        self.edge_u = np.concatenate(owner_all).astype(np.int64) if owner_all else np.zeros(0, dtype=np.int64)
        self.edge_v = np.concatenate(other_all).astype(np.int64) if other_all else np.zeros(0, dtype=np.int64)
        self.edge_gamma = (
            np.concatenate(gamma_all, axis=0) if gamma_all else np.zeros((0, 2 * num_frequencies + 1))
        )
        self.graph_ids = np.concatenate(graph_ids)
        self.n_nodes = offset
        self.n_graphs = len(conformers)
        self.n_edges = self.edge_u.size


class Net3D:
    def __init__(self, config: Net3DConfig, seed=0):
        self.config = config
        self.store = ad.ParamStore(seed)
        d_h, d_d = config.hidden_dim, config.edge_hidden_dim
        self.h0 = self.store.add("h0", (d_h,), init="normal")
        self.u_init = ad.MLP(self.store, "u_init", [2 * config.num_frequencies + 1, d_d])
        self.layers = []
        for l in range(config.depth):
            layer = {
                "u_edge": ad.MLP(self.store, f"layer{l}/u_edge", [2 * d_h + d_d, d_d]),
                "u_soft": ad.MLP(self.store, f"layer{l}/u_softedge", [d_d, 1]),
                "u_h": ad.MLP(self.store, f"layer{l}/u_h", [d_h + d_d, d_h]),
                "bn": ad.BatchNorm(self.store, f"layer{l}/out", d_h, config.batchnorm_momentum)
                if config.batchnorm
                else None,
            }
            self.layers.append(layer)
        ro_in = len(config.readout_aggregators) * d_h
        ro_dims = [ro_in] + [d_h] * (config.readout_mlp_layers - 1) + [config.d_z]
        self.readout_mlp = ad.MLP(self.store, "readout", ro_dims, dropout=config.dropout)

    def init_edges(self, batch: CloudBatch):
        """Project the encoded pairwise distances to edge vectors (one per
        ordered pair, n^2 - n per cloud)."""
        return self.u_init(T.Tensor(batch.edge_gamma))

    def layer_forward(self, h, d, batch: CloudBatch, layer, train: bool = False, rng=None):
        """One layer: m_uv from (h_u, h_v, d_uv); edges get d + m; atoms get
        the gated message sum through the update map."""
        h_u = T.gather_rows(h, batch.edge_u)
        h_v = T.gather_rows(h, batch.edge_v)
        m = layer["u_edge"](T.concat([h_u, h_v, d], axis=1), train=train, rng=rng)
        d_new = T.add(d, m)
        gate = T.sigmoid(layer["u_soft"](m, train=train, rng=rng))
        agg = T.segment_sum(T.mul(m, gate), batch.edge_u, batch.n_nodes)
        h_new = layer["u_h"](T.concat([h, agg], axis=1), train=train, rng=rng)
        if layer["bn"] is not None:
            h_new = layer["bn"](h_new, train)
        return h_new, d_new

    def forward_batch(self, batch: CloudBatch, train: bool = False, rng=None):
        ones = T.Tensor(np.ones((batch.n_nodes, 1)))
        h = T.mul(ones, T.reshape(self.h0, (1, self.config.hidden_dim)))
        d = self.init_edges(batch)
        for layer in self.layers:
            h, d = self.layer_forward(h, d, batch, layer, train=train, rng=rng)
        pooled = pool_nodes(h, batch.graph_ids, batch.n_graphs, self.config.readout_aggregators)
        return self.readout_mlp(pooled, train=train, rng=rng)

    def encode(self, conformer: Conformer) -> np.ndarray:
        """Eval-mode embedding of one conformer."""
        with ad.no_grad():
            z = self.forward_batch(
                CloudBatch([conformer], self.config.num_frequencies, self.config.max_atoms), train=False
            )
        return z.data[0].copy()

    def batchnorm_modules(self):
        mods = []
        for layer in self.layers:
            if layer["bn"] is not None:
                mods.append(layer["bn"])
        mods.extend(self.readout_mlp.batchnorms)
        return mods

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for bn in self.batchnorm_modules():
            out.update(bn.buffers())
        return out

    def load_buffers(self, arrays: dict[str, np.ndarray]):
        for bn in self.batchnorm_modules():
            bn.load_buffers(arrays)


def init_edges(D: DistanceMatrix, net: Net3D):
    """Edge map of one distance matrix through the network's input projection;
    returns (edge tensor, pair index arrays)."""
    n = D.n
    u, v = np.where(~np.eye(n, dtype=bool))
    gamma = gamma_encode_array(D.values[u, v], net.config.num_frequencies)
    return net.u_init(T.Tensor(gamma)), u, v


def encode3d(conformer: Conformer, net: Net3D) -> np.ndarray:
    """Deterministic eval-mode embedding of one conformer's point cloud."""
    return net.encode(conformer)
