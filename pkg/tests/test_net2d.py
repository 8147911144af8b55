import numpy as np
import pytest

from infomax3d import autodiff as ad
from infomax3d.autodiff import tensor as T
from infomax3d.molgraph import Atom, Bond, featurize, make_graph
from infomax3d.net2d import (
    DegreeStats,
    GraphBatch,
    Net2D,
    Net2DConfig,
    compute_degree_stats,
    encode2d,
    pna_layer,
    pool_nodes,
)
from infomax3d.synth import distinct_atom_molecule, make_synthetic_dataset

from conftest import permute_graph


def small_net(graphs, seed=0, **cfg_kwargs):
    cfg_kwargs.setdefault("depth", 2)
    cfg_kwargs.setdefault("hidden_dim", 12)
    cfg_kwargs.setdefault("d_z", 8)
    cfg = Net2DConfig(**cfg_kwargs)
    if any(g.bonds for g in graphs):
        stats = compute_degree_stats(graphs)
    else:
        stats = DegreeStats(np.log(2.0))
    return Net2D(cfg, graphs[0].atom_features.shape[1], graphs[0].bond_features.shape[1], stats, seed=seed)


def relu_np(x):
    return np.maximum(x, 0.0)


class TestConfig:
    def test_defaults_match_published_choices(self):
        cfg = Net2DConfig()
        assert cfg.depth == 7
        assert cfg.hidden_dim == 200
        assert cfg.message_mlp_layers == 2
        assert cfg.update_mlp_layers == 1
        assert cfg.aggregators == ("mean", "max", "min", "std")
        assert cfg.scalers == ("identity", "amplification", "attenuation")
        assert cfg.readout_aggregators == ("mean", "max", "min", "sum")
        assert cfg.readout_mlp_layers == 2
        assert cfg.dropout == 0.0
        assert cfg.batchnorm and cfg.batchnorm_momentum == 0.1

    def test_validation(self):
        with pytest.raises(ValueError):
            Net2DConfig(depth=0)
        with pytest.raises(ValueError):
            Net2DConfig(aggregators=())
        with pytest.raises(ValueError):
            Net2DConfig(aggregators=("median",))
        with pytest.raises(ValueError):
            Net2DConfig(scalers=("linear",))

    def test_degree_stats_positive(self):
        with pytest.raises(ValueError):
            DegreeStats(0.0)
        g = featurize(make_graph("m", [Atom(6), Atom(6)], [Bond(0, 1)]))
        assert compute_degree_stats([g]).delta == pytest.approx(np.log(2.0))


class TestPNALayer:
    def test_single_node_empty_neighborhood(self):
        # h' = MLP_upd(h || zeros) for a bondless molecule, batchnorm off for hand computation
        g = featurize(make_graph("m", [Atom(6)], []))
        net = small_net([g], depth=1, batchnorm=False)
        batch = GraphBatch([g])
        h = net.node_reps(batch, train=False)
        upd = net.layers[0].upd_mlp.linears[0]
        n_agg = len(net.config.aggregators) * len(net.config.scalers)
        manual_in = np.concatenate([g.atom_features[0], np.zeros(n_agg * 12)])
        want = manual_in @ upd.W.data + upd.b.data
        assert np.allclose(h.data[0], want, atol=1e-12)

    def test_permutation_equivariance_exact(self, rng):
        ds = make_synthetic_dataset(4, seed=21, n_atoms_range=(5, 10))
        graphs = [featurize(m) for m in ds.molecules]
        net = small_net(graphs)
        for g in graphs:
            perm = rng.permutation(g.n_atoms)
            g2 = permute_graph(g, perm)
            h1 = net.node_reps(GraphBatch([g]), train=False).data
            h2 = net.node_reps(GraphBatch([g2]), train=False).data
            assert np.array_equal(h2, h1[perm])

    def test_star_graph_identical_leaves_std_zero(self):
        # 4-node star with identical leaves: all messages to the center agree,
        # so the std aggregate is zero and the center update reduces to
        # MLP_upd(h || 0) when std is the only aggregator.
        g = featurize(make_graph("star", [Atom(6), Atom(1), Atom(1), Atom(1)],
                                 [Bond(0, 1), Bond(0, 2), Bond(0, 3)]))
        net = small_net([g], depth=1, aggregators=("std",), scalers=("identity",), batchnorm=False)
        h = net.node_reps(GraphBatch([g]), train=False)
        upd = net.layers[0].upd_mlp.linears[0]
        manual_center = np.concatenate([g.atom_features[0], np.zeros(12)]) @ upd.W.data + upd.b.data
        assert np.allclose(h.data[0], manual_center, atol=1e-12)

    def test_vanilla_reduction_sum_identity(self, rng):
        # aggregators={sum}, scalers={identity} reduces to a plain MPNN layer
        g = featurize(distinct_atom_molecule("m", rng, 6))
        net = small_net([g], depth=1, aggregators=("sum",), scalers=("identity",), batchnorm=False,
                        message_mlp_layers=1)
        batch = GraphBatch([g])
        h = net.node_reps(batch, train=False).data
        msg = net.layers[0].msg_mlp.linears[0]
        upd = net.layers[0].upd_mlp.linears[0]
        X, E = g.atom_features, g.bond_features
        n = g.n_atoms
        agg = np.zeros((n, 12))
        for k, b in enumerate(g.bonds):
            for dst, src in ((b.u, b.v), (b.v, b.u)):
                m = np.concatenate([X[dst], X[src], E[k]]) @ msg.W.data + msg.b.data
                agg[dst] += m
        want = np.stack([np.concatenate([X[u], agg[u]]) @ upd.W.data + upd.b.data for u in range(n)])
        assert np.allclose(h, want, atol=1e-10)

    def test_degree_scalers_values(self, rng):
        # amplification log(d+1)/delta and attenuation delta/log(d+1) against manual computation
        g = featurize(distinct_atom_molecule("m", rng, 5))
        delta = compute_degree_stats([g]).delta
        net = small_net([g], depth=1, aggregators=("mean",),
                        scalers=("identity", "amplification", "attenuation"),
                        batchnorm=False, message_mlp_layers=1)
        batch = GraphBatch([g])
        h = net.node_reps(batch, train=False).data
        msg = net.layers[0].msg_mlp.linears[0]
        upd = net.layers[0].upd_mlp.linears[0]
        X, E = g.atom_features, g.bond_features
        n = g.n_atoms
        mean_agg = np.zeros((n, 12))
        deg = g.degrees()
        for k, b in enumerate(g.bonds):
            for dst, src in ((b.u, b.v), (b.v, b.u)):
                mean_agg[dst] += (np.concatenate([X[dst], X[src], E[k]]) @ msg.W.data + msg.b.data) / deg[dst]
        want = []
        for u in range(n):
            logd = np.log(deg[u] + 1.0)
            scaled = np.concatenate([mean_agg[u], mean_agg[u] * (logd / delta), mean_agg[u] * (delta / logd)])
            want.append(np.concatenate([X[u], scaled]) @ upd.W.data + upd.b.data)
        assert np.allclose(h, np.stack(want), atol=1e-10)

    def test_degree_zero_node_finite(self):
        g = featurize(make_graph("m", [Atom(6), Atom(8), Atom(10)], [Bond(0, 1)]))
        net = small_net([g])
        z = net.encode(g)
        assert np.all(np.isfinite(z))

    def test_residual_only_when_widths_match(self, rng):
        g = featurize(distinct_atom_molecule("m", rng, 5))
        net = small_net([g], depth=2, batchnorm=False)
        batch = GraphBatch([g])
        h0 = T.Tensor(batch.node_feats)
        h1 = pna_layer(h0, batch, net.layers[0], net.config, net.degree_stats)
        # layer 1 widths match: zeroing its update map must leave the pure residual
        upd1 = net.layers[1].upd_mlp.linears[0]
        for p in (upd1.W, upd1.b):
            p.data[...] = 0.0
        h2 = pna_layer(h1, batch, net.layers[1], net.config, net.degree_stats)
        assert np.array_equal(h2.data, h1.data)
        # layer 0 widths differ: zeroing its update map gives zeros, not the input
        upd0 = net.layers[0].upd_mlp.linears[0]
        for p in (upd0.W, upd0.b):
            p.data[...] = 0.0
        h1b = pna_layer(h0, batch, net.layers[0], net.config, net.degree_stats)
        assert np.array_equal(h1b.data, np.zeros_like(h1b.data))


class TestReadout:
    def test_single_node_pools(self):
        h = T.Tensor(np.array([[1.0, -2.0, 3.0]]))
        pooled = pool_nodes(h, np.array([0]), 1, ("mean", "max", "min", "sum"))
        assert np.array_equal(pooled.data, np.array([[1.0, -2, 3, 1, -2, 3, 1, -2, 3, 1, -2, 3]]))

    def test_two_node_hand_computation(self):
        h = T.Tensor(np.array([[1.0, 4.0], [3.0, 2.0]]))
        pooled = pool_nodes(h, np.array([0, 0]), 1, ("mean", "max", "min", "sum"))
        want = np.array([[2.0, 3.0, 3.0, 4.0, 1.0, 2.0, 4.0, 6.0]])
        assert np.allclose(pooled.data, want, atol=1e-12)

    def test_permutation_invariance(self, rng):
        h = rng.normal(size=(6, 4))
        ids = np.zeros(6, dtype=np.int64)
        a = pool_nodes(T.Tensor(h), ids, 1, ("mean", "max", "min", "sum")).data
        b = pool_nodes(T.Tensor(h[rng.permutation(6)]), ids, 1, ("mean", "max", "min", "sum")).data
        assert np.array_equal(a, b)


class TestEncode2D:
    def test_eval_deterministic_bitwise(self, rng):
        g = featurize(distinct_atom_molecule("m", rng, 6))
        net = small_net([g])
        assert np.array_equal(net.encode(g), net.encode(g))

    def test_isomorphic_graphs_identical(self, rng):
        ds = make_synthetic_dataset(5, seed=31, n_atoms_range=(5, 9))
        graphs = [featurize(m) for m in ds.molecules]
        net = small_net(graphs)
        for g in graphs:
            z = net.encode(g)
            for _ in range(3):
                g2 = permute_graph(g, rng.permutation(g.n_atoms))
                assert np.array_equal(net.encode(g2), z)

    def test_output_dim(self, rng):
        g = featurize(distinct_atom_molecule("m", rng, 5))
        net = small_net([g], d_z=17)
        assert net.encode(g).shape == (17,)

    def test_unfeaturized_rejected(self):
        g = make_graph("m", [Atom(6)], [])
        net = small_net([featurize(g)])
        with pytest.raises(ValueError, match="featurized"):
            encode2d(g, net)

    def test_multi_output_shape(self, rng):
        g = featurize(distinct_atom_molecule("m", rng, 5))
        net = small_net([g], num_outputs=3, d_z=8)
        z = net.forward_batch(GraphBatch([g]), train=False)
        assert z.data.shape == (1, 3, 8)

    def test_batch_equals_single(self, rng):
        ds = make_synthetic_dataset(4, seed=41, n_atoms_range=(4, 8))
        graphs = [featurize(m) for m in ds.molecules]
        net = small_net(graphs)
        with ad.no_grad():
            zb = net.forward_batch(GraphBatch(graphs), train=False).data
        for i, g in enumerate(graphs):
            assert np.allclose(net.encode(g), zb[i], atol=1e-12)


class TestGradients:
    def test_encode2d_with_scalar_head(self, rng):
        graphs = [featurize(distinct_atom_molecule(f"g{i}", rng, 6)) for i in range(3)]
        net = small_net(graphs)
        batch = GraphBatch(graphs)
        probe = T.Tensor(rng.normal(size=(3, 8)))

        def f():
            return T.sum_reduce(T.mul(net.forward_batch(batch, train=True), probe))

        assert ad.check_gradients(f, net.store, num_coords=120, rng=rng) <= 1e-4

    def test_training_reduces_simple_objective(self, rng):
        graphs = [featurize(distinct_atom_molecule(f"g{i}", rng, 5)) for i in range(4)]
        net = small_net(graphs)
        from infomax3d.optim import Adam

        opt = Adam({k: t for k, t in net.store.items()})
        target = T.Tensor(rng.normal(size=(4, 8)))
        losses = []
        for _ in range(30):
            z = net.forward_batch(GraphBatch(graphs), train=True)
            diff = T.sub(z, target)
            loss = T.mean_reduce(T.mul(diff, diff))
            net.store.zero_grad()
            loss.backward()
            opt.step(1e-2)
            losses.append(loss.item())
        assert losses[-1] < losses[0] * 0.5
