"""Training loops: contrastive pre-training, distance-prediction pre-training,
fine-tuning with transferred weights, and embedding export."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import losses as LS
from .autodiff import tensor as T
from .autodiff.params import stream_seed
from .checkpoint import load_checkpoint, save_checkpoint
from .conformers import gamma_encode_array, pairwise_distances, sample_conformer, select_conformers
from .metrics import metric as compute_metric
from .molgraph import Dataset, compute_target_stats, featurize, node_drop
from .net2d import GraphBatch, Net2D, Net2DConfig, DegreeStats, compute_degree_stats
from .net3d import CloudBatch, Net3D, Net3DConfig
from .optim import Adam
from .schedule import GroupedWarmup, PlateauScheduler, warmup_multiplier

CONFORMER_STRATEGIES = ("lowest", "uniform", "boltzmann")


@dataclass
class TrainConfig:
    loss: str = "ntxent_eq1"
    tau: float = 0.1
    num_conformers: int = 3
    conformer_strategy: str = "lowest"
    node_drop_ratio: float = 0.0
    batch_size: int = 500
    max_epochs: int = 100
    seed: int = 1
    pretrain_lr: float = 8e-5
    pretrain_warmup_steps: int = 700
    pretrain_plateau_factor: float = 0.6
    plateau_patience: int = 25
    plateau_cooldown: int = 20
    finetune_lr: float = 7e-5
    finetune_weight_decay: float = 1e-11
    finetune_batch_size: int = 128
    finetune_warmup_spans: tuple = (700, 700, 350)
    finetune_plateau_factor: float = 0.5
    metric_kind: str = "mae"
    temperature_K: float = 298.15

    def __post_init__(self):
        if self.loss not in LS.LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}; known: {LS.LOSS_KINDS}")
        if self.conformer_strategy not in CONFORMER_STRATEGIES:
            raise ValueError(f"unknown conformer strategy {self.conformer_strategy!r}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.num_conformers < 1:
            raise ValueError("num_conformers must be >= 1")
        self.finetune_warmup_spans = tuple(self.finetune_warmup_spans)


def _fmt(x) -> str:
    return repr(float(x))


def parallel_map(fn, items):
    """Ordered map over items; INFOMAX3D_THREADS > 1 enables a thread pool
    (results are assembled in input order either way)."""
    threads = int(os.environ.get("INFOMAX3D_THREADS", "1") or "1")
    items = list(items)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def prepare_graphs(dataset: Dataset) -> list:
    """Featurize every molecule (pure per-record work, safe to parallelize)."""
    return parallel_map(featurize, dataset.molecules)


def _cloud_parts(conf, num_frequencies: int):
    """Cached (u, v, gamma) arrays of one conformer's complete graph."""
    cache = getattr(conf, "_gamma_cache", None)
    if cache is not None and cache[0] == num_frequencies:
        return cache[1]
    n = conf.n_atoms
    u, v = np.where(~np.eye(n, dtype=bool))
    D = pairwise_distances(conf)
    parts = (u.astype(np.int64), v.astype(np.int64), gamma_encode_array(D.values[u, v], num_frequencies))
    conf._gamma_cache = (num_frequencies, parts)
    return parts


def _cloud_batch(conformers, num_frequencies: int, max_atoms: int) -> CloudBatch:
    batch = CloudBatch.__new__(CloudBatch)
    owner, other, gamma, graph_ids = [], [], [], []
    offset = 0
    for gi, conf in enumerate(conformers):
        n = conf.n_atoms
        if n > max_atoms:
            raise ValueError(f"conformer has {n} atoms, above the supported cap of {max_atoms}")
        u, v, g = _cloud_parts(conf, num_frequencies)
        owner.append(u + offset)
        other.append(v + offset)
        gamma.append(g)
        graph_ids.append(np.full(n, gi, dtype=np.int64))
        offset += n
    batch.edge_u = np.concatenate(owner).astype(np.int64)
    batch.edge_v = np.concatenate(other).astype(np.int64)
    batch.edge_gamma = np.concatenate(gamma, axis=0)
    batch.graph_ids = np.concatenate(graph_ids)
    batch.n_nodes = offset
    batch.n_graphs = len(conformers)
    batch.n_edges = batch.edge_u.size
    return batch


# ---------------------------------------------------------------------------
# contrastive pre-training


@dataclass
class RunResult:
    trace: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    checkpoint_path: str | None = None
    summary: dict = field(default_factory=dict)


def _select_batch_conformers(graphs, cfg: TrainConfig, rng_conf):
    """3D inputs of one batch, per loss kind / sampling strategy."""
    if cfg.loss == "multi3d_eq2" or cfg.loss.startswith("multi2d"):
        chosen = []
        for g in graphs:
            chosen.extend(select_conformers(g.conformers, cfg.num_conformers))
        return chosen
    if cfg.conformer_strategy == "lowest":
        return [select_conformers(g.conformers, 1)[0] for g in graphs]
    return [
        sample_conformer(g.conformers, cfg.conformer_strategy, rng_conf, cfg.temperature_K)
        for g in graphs
    ]


def _contrastive_loss(net2d, net3d, graphs, cfg: TrainConfig, train: bool, rng_conf, rng_drop, rng_dropout):
    if cfg.node_drop_ratio > 0.0 and train:
        dropped = []
        for g in graphs:
            g2, cs2 = node_drop(g, g.conformers, cfg.node_drop_ratio, rng_drop)
            g2.conformers = cs2
            dropped.append(g2)
        graphs = dropped
    conformers = _select_batch_conformers(graphs, cfg, rng_conf)
    za = net2d.forward_batch(GraphBatch(graphs), train=train, rng=rng_dropout)
    zb = net3d.forward_batch(
        _cloud_batch(conformers, net3d.config.num_frequencies, net3d.config.max_atoms),
        train=train,
        rng=rng_dropout,
    )
    n = len(graphs)
    if cfg.loss == "ntxent_eq1":
        return LS.ntxent_eq1(za, zb, cfg.tau)
    if cfg.loss == "multi3d_eq2":
        zb_sets = T.reshape(zb, (n, cfg.num_conformers, net3d.config.d_z))
        return LS.multi3d_eq2(za, zb_sets, cfg.tau)
    zb_sets = T.reshape(zb, (n, cfg.num_conformers, net3d.config.d_z))
    kind = "sim_all" if cfg.loss == "multi2d_simall" else "sim_max"
    return LS.multi2d_loss(kind, za, zb_sets, cfg.tau)


def _batches(n: int, batch_size: int, order=None):
    idx = np.arange(n) if order is None else order
    out = []
    for start in range(0, n, batch_size):
        chunk = idx[start : start + batch_size]
        if chunk.size >= 2:
            out.append(chunk)
    return out


def _epoch_loss(loss_fn, graphs, batches) -> float:
    total, count = 0.0, 0
    for chunk in batches:
        with ad.no_grad():
            loss = loss_fn([graphs[i] for i in chunk], train=False)
        total += loss.item() * chunk.size
        count += chunk.size
    return total / max(count, 1)


def _write_trace(path, records, summary):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(" ".join(f"{k}={v if isinstance(v, str) else _fmt(v)}" for k, v in rec.items()) + "\n")
        fh.write("summary " + " ".join(
            f"{k}={v if isinstance(v, str) else _fmt(v)}" for k, v in summary.items()) + "\n")


def pretrain(train_ds: Dataset, val_ds: Dataset, net2d_cfg: Net2DConfig, net3d_cfg: Net3DConfig,
             cfg: TrainConfig, out_dir: str | None = None) -> RunResult:
    """Jointly train the 2D and 3D encoders with the configured contrastive
    loss; the best-validation epoch's weights go into the checkpoint."""
    if cfg.batch_size < 2:
        raise ValueError("contrastive pre-training needs batch_size >= 2 (at least one negative)")
    if len(val_ds) < 2:
        raise ValueError("validation set needs at least 2 molecules for the contrastive loss")
    for ds, tag in ((train_ds, "train"), (val_ds, "val")):
        for m in ds.molecules:
            if m.conformers is None:
                raise ValueError(f"{tag} molecule {m.id!r} has no conformers; pre-training needs 3D data")
    if net2d_cfg.d_z != net3d_cfg.d_z:
        raise ValueError(f"2D and 3D embedding dims differ: {net2d_cfg.d_z} != {net3d_cfg.d_z}")
    if cfg.loss.startswith("multi2d"):
        net2d_cfg = replace(net2d_cfg, num_outputs=cfg.num_conformers)
    elif net2d_cfg.num_outputs != 1:
        net2d_cfg = replace(net2d_cfg, num_outputs=1)

    train_graphs = prepare_graphs(train_ds)
    val_graphs = prepare_graphs(val_ds)
    f_atom = train_graphs[0].atom_features.shape[1]
    f_bond = train_graphs[0].bond_features.shape[1]
    degree_stats = compute_degree_stats(train_graphs)

    net2d = Net2D(net2d_cfg, f_atom, f_bond, degree_stats, seed=stream_seed(cfg.seed, "net2d"))
    net3d = Net3D(net3d_cfg, seed=stream_seed(cfg.seed, "net3d"))
    params = {f"net2d/{k}": t for k, t in net2d.store.items()}
    params.update({f"net3d/{k}": t for k, t in net3d.store.items()})
    optimizer = Adam(params)
    plateau = PlateauScheduler(cfg.pretrain_plateau_factor, cfg.plateau_patience, cfg.plateau_cooldown)

    rng_batch = np.random.default_rng(stream_seed(cfg.seed, "batches"))
    rng_conf = np.random.default_rng(stream_seed(cfg.seed, "conformers"))
    rng_drop = np.random.default_rng(stream_seed(cfg.seed, "node_drop"))
    rng_dropout = np.random.default_rng(stream_seed(cfg.seed, "dropout"))

    def loss_fn(graphs, train):
        return _contrastive_loss(net2d, net3d, graphs, cfg, train, rng_conf, rng_drop, rng_dropout)

    result = RunResult()
    best_state = None
    step = 0
    val_batches = _batches(len(val_graphs), cfg.batch_size)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng_batch.permutation(len(train_graphs))
        epoch_total, epoch_count = 0.0, 0
        for chunk in _batches(len(train_graphs), cfg.batch_size, order):
            loss = loss_fn([train_graphs[i] for i in chunk], train=True)
            net2d.store.zero_grad()
            net3d.store.zero_grad()
            loss.backward()
            step += 1
            lr = cfg.pretrain_lr * warmup_multiplier(step, (cfg.pretrain_warmup_steps,), 0) * plateau.multiplier
            optimizer.step(lr)
            epoch_total += loss.item() * chunk.size
            epoch_count += chunk.size
        train_loss = epoch_total / max(epoch_count, 1)
        val_loss = _epoch_loss(loss_fn, val_graphs, val_batches)
        lr_now = cfg.pretrain_lr * warmup_multiplier(step, (cfg.pretrain_warmup_steps,), 0) * plateau.multiplier
        result.trace.append(
            {"epoch": epoch, "lr": lr_now, "train_loss": train_loss, "val_loss": val_loss}
        )
        plateau.step(val_loss)
        if val_loss < result.best_val:
            result.best_val = val_loss
            result.best_epoch = epoch
            best_state = _pretrain_state(net2d, net3d, optimizer)

    if best_state is None:
        best_state = _pretrain_state(net2d, net3d, optimizer)
    meta = {
        "kind": "pretrain",
        "loss": cfg.loss,
        "tau": cfg.tau,
        "num_conformers": cfg.num_conformers,
        "seed": cfg.seed,
        "f_atom": f_atom,
        "f_bond": f_bond,
        "degree_delta": degree_stats.delta,
        "net2d_config": net2d_cfg.to_dict(),
        "net3d_config": net3d_cfg.to_dict(),
        "schedule_state": plateau.state(),
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val,
    }
    result.summary = {"best_epoch": result.best_epoch, "best_val_loss": result.best_val}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.checkpoint_path = os.path.join(out_dir, "best.ckpt")
        save_checkpoint(result.checkpoint_path, meta, best_state)
        save_checkpoint(os.path.join(out_dir, "last.ckpt"), meta, _pretrain_state(net2d, net3d, optimizer))
        _write_trace(os.path.join(out_dir, "metrics.txt"), result.trace, result.summary)
    else:
        result.summary["state"] = best_state
        result.summary["meta"] = meta
    return result


def _pretrain_state(net2d, net3d, optimizer) -> dict:
    arrays = {}
    for k, v in net2d.store.state_arrays().items():
        arrays[f"net2d/{k}"] = v
    for k, v in net3d.store.state_arrays().items():
        arrays[f"net3d/{k}"] = v
    for k, v in net2d.buffers().items():
        arrays[f"buffers2d/{k}"] = v
    for k, v in net3d.buffers().items():
        arrays[f"buffers3d/{k}"] = v
    arrays.update(optimizer.state_arrays())
    return arrays


# ---------------------------------------------------------------------------
# distance-prediction pre-training


def _molecule_pairs(graphs):
    """Global (u, v) indices for all unordered atom pairs of each molecule in
    a batch, plus the true lowest-energy-conformer distances."""
    pu, pv, dist = [], [], []
    offset = 0
    for g in graphs:
        n = g.n_atoms
        iu, iv = np.triu_indices(n, k=1)
        pu.append(iu + offset)
        pv.append(iv + offset)
        lowest = select_conformers(g.conformers, 1)[0]
        D = pairwise_distances(lowest)
        dist.append(D.values[iu, iv])
        offset += n
    return np.concatenate(pu), np.concatenate(pv), np.concatenate(dist)


def pretrain_distance(train_ds: Dataset, val_ds: Dataset, net2d_cfg: Net2DConfig,
                      cfg: TrainConfig, out_dir: str | None = None) -> RunResult:
    """Pre-train the 2D encoder to predict all pairwise distances of the
    lowest-energy conformer through the symmetric softplus head."""
    for ds, tag in ((train_ds, "train"), (val_ds, "val")):
        for m in ds.molecules:
            if m.conformers is None:
                raise ValueError(f"{tag} molecule {m.id!r} has no conformers")
    net2d_cfg = replace(net2d_cfg, num_outputs=1)
    train_graphs = prepare_graphs(train_ds)
    val_graphs = prepare_graphs(val_ds)
    f_atom = train_graphs[0].atom_features.shape[1]
    f_bond = train_graphs[0].bond_features.shape[1]
    degree_stats = compute_degree_stats(train_graphs)

    net2d = Net2D(net2d_cfg, f_atom, f_bond, degree_stats, seed=stream_seed(cfg.seed, "net2d"))
    head_store = ad.ParamStore(stream_seed(cfg.seed, "dist_head"))
    head = LS.DistanceHead(head_store, net2d_cfg.hidden_dim, hidden_layers=1)
    params = {f"net2d/{k}": t for k, t in net2d.store.items()}
    params.update({f"dist/{k}": t for k, t in head_store.items()})
    optimizer = Adam(params)
    plateau = PlateauScheduler(cfg.pretrain_plateau_factor, cfg.plateau_patience, cfg.plateau_cooldown)
    rng_batch = np.random.default_rng(stream_seed(cfg.seed, "batches"))
    rng_dropout = np.random.default_rng(stream_seed(cfg.seed, "dropout"))

    def loss_fn(graphs, train):
        batch = GraphBatch(graphs)
        h = net2d.node_reps(batch, train=train, rng=rng_dropout)
        pu, pv, dtrue = _molecule_pairs(graphs)
        pred = head(h, pu, pv, train=train, rng=rng_dropout)
        return LS.distance_mse(pred, dtrue)

    result = RunResult()
    best_state = None
    step = 0
    val_batches = _batches(len(val_graphs), cfg.batch_size) or [np.arange(len(val_graphs))]
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng_batch.permutation(len(train_graphs))
        epoch_total, epoch_count = 0.0, 0
        for start in range(0, len(train_graphs), cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            loss = loss_fn([train_graphs[i] for i in chunk], train=True)
            net2d.store.zero_grad()
            head_store.zero_grad()
            loss.backward()
            step += 1
            lr = cfg.pretrain_lr * warmup_multiplier(step, (cfg.pretrain_warmup_steps,), 0) * plateau.multiplier
            optimizer.step(lr)
            epoch_total += loss.item() * chunk.size
            epoch_count += chunk.size
        train_loss = epoch_total / max(epoch_count, 1)
        total = 0.0
        cnt = 0
        for chunk in val_batches:
            with ad.no_grad():
                vloss = loss_fn([val_graphs[i] for i in chunk], train=False)
            total += vloss.item() * chunk.size
            cnt += chunk.size
        val_loss = total / max(cnt, 1)
        lr_now = cfg.pretrain_lr * warmup_multiplier(step, (cfg.pretrain_warmup_steps,), 0) * plateau.multiplier
        result.trace.append({"epoch": epoch, "lr": lr_now, "train_loss": train_loss, "val_loss": val_loss})
        plateau.step(val_loss)
        if val_loss < result.best_val:
            result.best_val = val_loss
            result.best_epoch = epoch
            best_state = _distance_state(net2d, head_store, optimizer)

    if best_state is None:
        best_state = _distance_state(net2d, head_store, optimizer)
    meta = {
        "kind": "pretrain_distance",
        "seed": cfg.seed,
        "f_atom": f_atom,
        "f_bond": f_bond,
        "degree_delta": degree_stats.delta,
        "net2d_config": net2d_cfg.to_dict(),
        "schedule_state": plateau.state(),
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val,
    }
    result.summary = {"best_epoch": result.best_epoch, "best_val_loss": result.best_val}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.checkpoint_path = os.path.join(out_dir, "best.ckpt")
        save_checkpoint(result.checkpoint_path, meta, best_state)
        save_checkpoint(os.path.join(out_dir, "last.ckpt"), meta, _distance_state(net2d, head_store, optimizer))
        _write_trace(os.path.join(out_dir, "metrics.txt"), result.trace, result.summary)
    else:
        result.summary["state"] = best_state
        result.summary["meta"] = meta
    return result


def _distance_state(net2d, head_store, optimizer) -> dict:
    arrays = {f"net2d/{k}": v for k, v in net2d.store.state_arrays().items()}
    arrays.update({f"dist/{k}": v for k, v in head_store.state_arrays().items()})
    for k, v in net2d.buffers().items():
        arrays[f"buffers2d/{k}"] = v
    arrays.update(optimizer.state_arrays())
    return arrays


# ---------------------------------------------------------------------------
# fine-tuning


def _net2d_from_checkpoint(meta, arrays, seed):
    cfg = Net2DConfig.from_dict(meta["net2d_config"])
    net = Net2D(cfg, meta["f_atom"], meta["f_bond"], DegreeStats(meta["degree_delta"]), seed=seed)
    net.store.load_arrays({k[len("net2d/"):]: v for k, v in arrays.items() if k.startswith("net2d/")})
    buf = {k[len("buffers2d/"):]: v for k, v in arrays.items() if k.startswith("buffers2d/")}
    if buf:
        net.load_buffers(buf)
    return net


def _config_mismatch(requested: dict, stored: dict) -> list[str]:
    return [k for k in stored if k in requested and requested[k] != stored[k]]


def finetune(checkpoint_path: str | None, train_ds: Dataset, val_ds: Dataset, test_ds: Dataset,
             target: str, net2d_cfg: Net2DConfig, cfg: TrainConfig,
             out_dir: str | None = None) -> RunResult:
    """Fine-tune a transferred (or randomly initialized) 2D encoder plus a
    fresh 2-layer head on one prediction target.

    Regression targets are standardized by the training split's statistics
    and reported metrics are de-standardized. Binary 0/1 targets switch to
    logistic loss and default to the roc_auc metric only if configured.
    """
    for ds, name in ((train_ds, "train"), (val_ds, "val"), (test_ds, "test")):
        if target not in ds.target_names:
            raise ValueError(f"target {target!r} not in {name} dataset (has {ds.target_names})")

    train_graphs = prepare_graphs(train_ds)
    val_graphs = prepare_graphs(val_ds)
    test_graphs = prepare_graphs(test_ds)
    f_atom = train_graphs[0].atom_features.shape[1]
    f_bond = train_graphs[0].bond_features.shape[1]

    if checkpoint_path is not None:
        meta, arrays = load_checkpoint(checkpoint_path)
        stored_cfg = meta["net2d_config"]
        mismatches = _config_mismatch(net2d_cfg.to_dict(), {k: v for k, v in stored_cfg.items() if k != "num_outputs"})
        if mismatches:
            detail = ", ".join(f"{k}: requested {net2d_cfg.to_dict()[k]!r} != checkpoint {stored_cfg[k]!r}"
                               for k in mismatches)
            raise ValueError(f"checkpoint config mismatch: {detail}")
        if meta["f_atom"] != f_atom or meta["f_bond"] != f_bond:
            raise ValueError(
                f"feature dims mismatch: checkpoint ({meta['f_atom']}, {meta['f_bond']}) "
                f"vs data ({f_atom}, {f_bond})"
            )
        net2d = _net2d_from_checkpoint(meta, arrays, seed=stream_seed(cfg.seed, "net2d"))
    else:
        degree_stats = compute_degree_stats(train_graphs)
        net2d = Net2D(replace(net2d_cfg, num_outputs=1), f_atom, f_bond, degree_stats,
                      seed=stream_seed(cfg.seed, "net2d"))

    head_store = ad.ParamStore(stream_seed(cfg.seed, "head"))
    d_z = net2d.config.d_z
    head = ad.MLP(head_store, "head", [d_z, d_z, 1])

    labels_train = np.array([m.targets[target] for m in train_ds.molecules])
    classification = set(np.unique(labels_train)) <= {0.0, 1.0} and cfg.metric_kind == "roc_auc"
    stats = train_ds.target_stats.get(target) if train_ds.target_stats else None
    if stats is None:
        stats = compute_target_stats(train_ds)[target]
    t_mean, t_std = (0.0, 1.0) if classification else stats

    params = {f"net2d/{k}": t for k, t in net2d.store.items()}
    params.update({f"head/{k}": t for k, t in head_store.items()})
    optimizer = Adam(params, weight_decay=cfg.finetune_weight_decay)
    warmup = GroupedWarmup(
        spans=cfg.finetune_warmup_spans,
        bn_names=frozenset(n for n in params if "/bn_" in n),
        new_names=frozenset(n for n in params if n.startswith("head/")),
    )
    plateau = PlateauScheduler(cfg.finetune_plateau_factor, cfg.plateau_patience, cfg.plateau_cooldown)
    rng_batch = np.random.default_rng(stream_seed(cfg.seed, "ft_batches"))
    rng_dropout = np.random.default_rng(stream_seed(cfg.seed, "ft_dropout"))

    def forward(graphs, train):
        z = net2d.forward_batch(GraphBatch(graphs), train=train, rng=rng_dropout)
        if z.data.ndim == 3:  # multi-output encoder transferred: average the set
            z = T.mean_reduce(z, axis=1)
        out = head(z, train=train, rng=rng_dropout)
        return T.reshape(out, (len(graphs),))

    def train_loss_fn(graphs, train):
        pred = forward(graphs, train)
        y = np.array([(g.targets[target] - t_mean) / t_std for g in graphs])
        if classification:
            yv = T.Tensor(y)
            pos = T.mul(yv, T.softplus(T.neg(pred)))
            negt = T.mul(T.sub(T.Tensor(np.ones_like(y)), yv), T.softplus(pred))
            return T.mean_reduce(T.add(pos, negt))
        diff = T.sub(pred, T.Tensor(y))
        return T.mean_reduce(T.mul(diff, diff))

    def predictions(graphs) -> np.ndarray:
        out = []
        for start in range(0, len(graphs), cfg.finetune_batch_size):
            chunk = graphs[start : start + cfg.finetune_batch_size]
            with ad.no_grad():
                pred = forward(chunk, train=False)
            out.append(pred.data)
        preds = np.concatenate(out)
        if classification:
            return preds  # raw scores rank identically to probabilities
        return preds * t_std + t_mean

    def evaluate(graphs, molecules) -> float:
        y = np.array([m.targets[target] for m in molecules])
        return compute_metric(cfg.metric_kind, predictions(graphs), y)

    lower_better = cfg.metric_kind != "roc_auc"
    result = RunResult()
    best_state = None
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng_batch.permutation(len(train_graphs))
        epoch_total, epoch_count = 0.0, 0
        for start in range(0, len(train_graphs), cfg.finetune_batch_size):
            chunk = order[start : start + cfg.finetune_batch_size]
            loss = train_loss_fn([train_graphs[i] for i in chunk], train=True)
            net2d.store.zero_grad()
            head_store.zero_grad()
            loss.backward()
            step += 1
            snap = step
            optimizer.step(lambda name: cfg.finetune_lr * warmup.multiplier(name, snap) * plateau.multiplier)
            epoch_total += loss.item() * chunk.size
            epoch_count += chunk.size
        train_loss = epoch_total / max(epoch_count, 1)
        val_total, val_count = 0.0, 0
        for start in range(0, len(val_graphs), cfg.finetune_batch_size):
            chunk = val_graphs[start : start + cfg.finetune_batch_size]
            with ad.no_grad():
                vloss = train_loss_fn(chunk, train=False)
            val_total += vloss.item() * len(chunk)
            val_count += len(chunk)
        val_loss = val_total / max(val_count, 1)
        val_metric = evaluate(val_graphs, val_ds.molecules)
        plateau_metric = val_metric if lower_better else -val_metric
        record = {"epoch": epoch}
        for gi in range(3):
            record[f"lr_group{gi + 1}"] = (
                cfg.finetune_lr * warmup_multiplier(step, cfg.finetune_warmup_spans, gi) * plateau.multiplier
            )
        record["train_loss"] = train_loss
        record["val_loss"] = val_loss
        record[f"val_{cfg.metric_kind}"] = val_metric
        result.trace.append(record)
        plateau.step(plateau_metric)
        if plateau_metric < result.best_val:
            result.best_val = plateau_metric
            result.best_epoch = epoch
            best_state = {
                "net2d": net2d.store.state_arrays(),
                "head": head_store.state_arrays(),
                "buffers": net2d.buffers(),
            }

    if best_state is not None:
        net2d.store.load_arrays(best_state["net2d"])
        head_store.load_arrays(best_state["head"])
        net2d.load_buffers(best_state["buffers"])

    final = {
        "target": target,
        "best_epoch": result.best_epoch,
        f"train_{cfg.metric_kind}": evaluate(train_graphs, train_ds.molecules),
        f"val_{cfg.metric_kind}": evaluate(val_graphs, val_ds.molecules),
        f"test_{cfg.metric_kind}": evaluate(test_graphs, test_ds.molecules),
    }
    result.summary = final

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        arrays = {f"net2d/{k}": v for k, v in net2d.store.state_arrays().items()}
        arrays.update({f"head/{k}": v for k, v in head_store.state_arrays().items()})
        arrays.update({f"buffers2d/{k}": v for k, v in net2d.buffers().items()})
        meta_out = {
            "kind": "finetune",
            "target": target,
            "seed": cfg.seed,
            "f_atom": f_atom,
            "f_bond": f_bond,
            "degree_delta": net2d.degree_stats.delta,
            "net2d_config": net2d.config.to_dict(),
            "target_mean": t_mean,
            "target_std": t_std,
            "classification": bool(classification),
            "schedule_state": plateau.state(),
            "best_epoch": result.best_epoch,
        }
        result.checkpoint_path = os.path.join(out_dir, "best.ckpt")
        save_checkpoint(result.checkpoint_path, meta_out, arrays)
        _write_trace(os.path.join(out_dir, "metrics.txt"), result.trace, final)
    return result


# ---------------------------------------------------------------------------
# embedding export


def embed(checkpoint_path: str, dataset: Dataset, out_path: str, batch_size: int = 128):
    """Write eval-mode 2D embeddings, one `id<TAB>v1,v2,...` line per molecule."""
    meta, arrays = load_checkpoint(checkpoint_path)
    if "net2d_config" not in meta:
        raise ValueError(f"checkpoint {checkpoint_path!r} does not hold a 2D encoder")
    net2d = _net2d_from_checkpoint(meta, arrays, seed=0)
    graphs = prepare_graphs(dataset)
    rows = []
    for start in range(0, len(graphs), batch_size):
        chunk = graphs[start : start + batch_size]
        with ad.no_grad():
            z = net2d.forward_batch(GraphBatch(chunk), train=False)
        rows.append(z.data.mean(axis=1) if z.data.ndim == 3 else z.data)
    z_all = np.concatenate(rows, axis=0)
    tmp = f"{out_path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for mol, vec in zip(dataset.molecules, z_all):
            fh.write(mol.id + "\t" + ",".join(_fmt(v) for v in vec) + "\n")
    os.replace(tmp, out_path)
    return z_all
