"""2D molecular-graph encoder: message passing with multiple aggregators and
degree scalers, multi-aggregator readout, producing a graph embedding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import tensor as T
from .molgraph import MolecularGraph

AGGREGATORS = ("mean", "max", "min", "std", "sum")
SCALERS = ("identity", "amplification", "attenuation")
READOUT_AGGREGATORS = ("mean", "max", "min", "sum", "std")


@dataclass
class Net2DConfig:
    depth: int = 7
    hidden_dim: int = 200
    message_mlp_layers: int = 2
    update_mlp_layers: int = 1
    aggregators: tuple = ("mean", "max", "min", "std")
    scalers: tuple = ("identity", "amplification", "attenuation")
    readout_aggregators: tuple = ("mean", "max", "min", "sum")
    readout_mlp_layers: int = 2
    dropout: float = 0.0
    batchnorm: bool = True
    batchnorm_momentum: float = 0.1
    d_z: int = 64
    num_outputs: int = 1  # embeddings per molecule (>1 for the set-similarity losses)

    def __post_init__(self):
        self.aggregators = tuple(self.aggregators)
        self.scalers = tuple(self.scalers)
        self.readout_aggregators = tuple(self.readout_aggregators)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.aggregators or not self.scalers:
            raise ValueError("aggregator and scaler lists must be non-empty")
        for a in self.aggregators:
            if a not in AGGREGATORS:
                raise ValueError(f"unknown aggregator {a!r}")
        for s in self.scalers:
            if s not in SCALERS:
                raise ValueError(f"unknown scaler {s!r}")
        for a in self.readout_aggregators:
            if a not in READOUT_AGGREGATORS:
                raise ValueError(f"unknown readout aggregator {a!r}")

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "hidden_dim": self.hidden_dim,
            "message_mlp_layers": self.message_mlp_layers,
            "update_mlp_layers": self.update_mlp_layers,
            "aggregators": list(self.aggregators),
            "scalers": list(self.scalers),
            "readout_aggregators": list(self.readout_aggregators),
            "readout_mlp_layers": self.readout_mlp_layers,
            "dropout": self.dropout,
            "batchnorm": self.batchnorm,
            "batchnorm_momentum": self.batchnorm_momentum,
            "d_z": self.d_z,
            "num_outputs": self.num_outputs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Net2DConfig":
        return cls(**d)


@dataclass
class DegreeStats:
    """Normalizer for the degree scalers: mean of log(degree + 1) over the
    training split's atoms."""

    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")


def compute_degree_stats(graphs) -> DegreeStats:
    logs = []
    for g in graphs:
        logs.append(np.log(g.degrees() + 1.0))
    delta = float(np.concatenate(logs).mean()) if logs else 0.0
    if delta <= 0:
        raise ValueError("training split has no bonds; cannot estimate the degree scaler normalizer")
    return DegreeStats(delta=delta)


class GraphBatch:
    """Several featurized graphs packed into one node/edge table.

    Each undirected bond becomes two directed edges; messages flow src -> dst
    and are aggregated at dst. Edges are sorted by (dst, src) so dst can act
    as sorted segment ids.
    """

    def __init__(self, graphs: list[MolecularGraph]):
        feats = []
        graph_ids = []
        degrees = []
        src_all, dst_all, efeat_all = [], [], []
        offset = 0
        f_bond = None
        for gi, g in enumerate(graphs):
            if g.atom_features is None or g.bond_features is None:
                raise ValueError(f"graph {g.id!r} is not featurized")
            n = g.n_atoms
            feats.append(g.atom_features)
            graph_ids.append(np.full(n, gi, dtype=np.int64))
            degrees.append(g.degrees())
            f_bond = g.bond_features.shape[1]
            for k, b in enumerate(g.bonds):
                src_all.extend((offset + b.v, offset + b.u))
                dst_all.extend((offset + b.u, offset + b.v))
                efeat_all.extend((g.bond_features[k], g.bond_features[k]))
            offset += n

        self.node_feats = np.concatenate(feats, axis=0)
        self.graph_ids = np.concatenate(graph_ids)
        self.degrees = np.concatenate(degrees)
        self.n_nodes = offset
        self.n_graphs = len(graphs)
        if src_all:
            src = np.array(src_all, dtype=np.int64)
            dst = np.array(dst_all, dtype=np.int64)
            efeat = np.stack(efeat_all)
            order = np.lexsort((src, dst))
            self.edge_src = src[order]
            self.edge_dst = dst[order]
            self.edge_feats = efeat[order]
        else:
            self.edge_src = np.zeros(0, dtype=np.int64)
            self.edge_dst = np.zeros(0, dtype=np.int64)
            self.edge_feats = np.zeros((0, f_bond or 0))
        self.n_edges = self.edge_src.size


class PNALayerParams:
    def __init__(self, store, name, d_in, d_hidden, f_bond, config: Net2DConfig):
        n_agg = len(config.aggregators) * len(config.scalers)
        msg_dims = [2 * d_in + f_bond] + [d_hidden] * config.message_mlp_layers
        upd_dims = [d_in + n_agg * d_hidden] + [d_hidden] * config.update_mlp_layers
        self.msg_mlp = ad.MLP(
            store, f"{name}/msg", msg_dims,
            hidden_bn=config.batchnorm, bn_momentum=config.batchnorm_momentum,
            dropout=config.dropout,
        )
        self.upd_mlp = ad.MLP(
            store, f"{name}/upd", upd_dims,
            hidden_bn=config.batchnorm, bn_momentum=config.batchnorm_momentum,
            dropout=config.dropout,
        )
        self.bn = ad.BatchNorm(store, f"{name}/out", d_hidden, config.batchnorm_momentum) if config.batchnorm else None
        self.d_in = d_in
        self.d_out = d_hidden


def _scaler_factors(degrees: np.ndarray, delta: float) -> dict[str, np.ndarray]:
    logd = np.log(degrees + 1.0)
    with np.errstate(divide="ignore"):
        att = np.where(degrees > 0, delta / np.where(logd > 0, logd, 1.0), 0.0)
    return {
        "identity": np.ones_like(logd),
        "amplification": logd / delta,
        "attenuation": att,
    }


def pna_layer(h, batch: GraphBatch, params: PNALayerParams, config: Net2DConfig,
              degree_stats: DegreeStats, train: bool = False, rng=None):
    """One message-passing layer: per-edge messages, multi-aggregator and
    degree-scaled aggregation, node update, residual when widths match,
    then batch norm.

    Degree-0 nodes get zero aggregates and the scalers are bypassed.
    """
    n = batch.n_nodes
    d_hidden = params.d_out
    if batch.n_edges > 0:
        h_dst = T.gather_rows(h, batch.edge_dst)
        h_src = T.gather_rows(h, batch.edge_src)
        msg_in = T.concat([h_dst, h_src, T.Tensor(batch.edge_feats)], axis=1)
        m = params.msg_mlp(msg_in, train=train, rng=rng)
        pooled = {}
        for agg in config.aggregators:
            if agg == "mean":
                pooled[agg] = T.segment_mean(m, batch.edge_dst, n)
            elif agg == "max":
                pooled[agg] = T.segment_max(m, batch.edge_dst, n)
            elif agg == "min":
                pooled[agg] = T.segment_min(m, batch.edge_dst, n)
            elif agg == "std":
                pooled[agg] = T.segment_std(m, batch.edge_dst, n)
            else:
                pooled[agg] = T.segment_sum(m, batch.edge_dst, n)
    else:
        pooled = {agg: T.Tensor(np.zeros((n, d_hidden))) for agg in config.aggregators}

    factors = _scaler_factors(batch.degrees, degree_stats.delta)
    scaled = []
    for agg in config.aggregators:
        for scaler in config.scalers:
            scaled.append(T.mul(pooled[agg], T.Tensor(factors[scaler][:, None])))

    out = params.upd_mlp(T.concat([h] + scaled, axis=1), train=train, rng=rng)
    if params.d_in == params.d_out:
        out = T.add(out, h)
    if params.bn is not None:
        out = params.bn(out, train)
    return out


def pool_nodes(h, graph_ids: np.ndarray, n_graphs: int, aggregators) -> "T.Tensor":
    """Permutation-invariant pooling of node vectors per graph (concatenated)."""
    parts = []
    for agg in aggregators:
        if agg == "mean":
            parts.append(T.segment_mean(h, graph_ids, n_graphs))
        elif agg == "max":
            parts.append(T.segment_max(h, graph_ids, n_graphs))
        elif agg == "min":
            parts.append(T.segment_min(h, graph_ids, n_graphs))
        elif agg == "sum":
            parts.append(T.segment_sum(h, graph_ids, n_graphs))
        else:
            parts.append(T.segment_std(h, graph_ids, n_graphs))
    return T.concat(parts, axis=1)


class Net2D:
    """The 2D encoder; emits one (or `num_outputs`) d_z vectors per graph."""

    def __init__(self, config: Net2DConfig, f_atom: int, f_bond: int,
                 degree_stats: DegreeStats, seed=0):
        self.config = config
        self.f_atom = f_atom
        self.f_bond = f_bond
        self.degree_stats = degree_stats
        self.store = ad.ParamStore(seed)
        self.layers = []
        d_in = f_atom
        for l in range(config.depth):
            self.layers.append(
                PNALayerParams(self.store, f"layer{l}", d_in, config.hidden_dim, f_bond, config)
            )
            d_in = config.hidden_dim
        ro_in = len(config.readout_aggregators) * config.hidden_dim
        ro_dims = [ro_in] + [config.hidden_dim] * (config.readout_mlp_layers - 1) + [config.d_z * config.num_outputs]
        self.readout_mlp = ad.MLP(
            self.store, "readout", ro_dims,
            hidden_bn=config.batchnorm, bn_momentum=config.batchnorm_momentum,
            dropout=config.dropout,
        )

    # -- forward -------------------------------------------------------------
    def node_reps(self, batch: GraphBatch, train: bool = False, rng=None):
        h = T.Tensor(batch.node_feats)
        for layer in self.layers:
            h = pna_layer(h, batch, layer, self.config, self.degree_stats, train=train, rng=rng)
        return h

    def readout(self, h, graph_ids: np.ndarray, n_graphs: int, train: bool = False, rng=None):
        pooled = pool_nodes(h, graph_ids, n_graphs, self.config.readout_aggregators)
        z = self.readout_mlp(pooled, train=train, rng=rng)
        if self.config.num_outputs > 1:
            z = T.reshape(z, (n_graphs, self.config.num_outputs, self.config.d_z))
        return z

    def forward_batch(self, batch: GraphBatch, train: bool = False, rng=None):
        h = self.node_reps(batch, train=train, rng=rng)
        return self.readout(h, batch.graph_ids, batch.n_graphs, train=train, rng=rng)

    def encode(self, graph: MolecularGraph) -> np.ndarray:
        """Eval-mode embedding of a single featurized graph."""
        with ad.no_grad():
            z = self.forward_batch(GraphBatch([graph]), train=False)
        return z.data[0].copy()

    # -- state ----------------------------------------------------------------
    def batchnorm_modules(self):
        mods = []
        for layer in self.layers:
            mods.extend(layer.msg_mlp.batchnorms)
            mods.extend(layer.upd_mlp.batchnorms)
            if layer.bn is not None:
                mods.append(layer.bn)
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


def encode2d(graph: MolecularGraph, net: Net2D) -> np.ndarray:
    """Deterministic eval-mode embedding of one featurized molecular graph."""
    if graph.atom_features is None:
        raise ValueError(f"graph {graph.id!r} is not featurized")
    return net.encode(graph)
