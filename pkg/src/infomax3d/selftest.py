"""Built-in invariant suite: quick pass/fail checks of the core mathematical
properties, runnable from the CLI without any dataset."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import losses as LS
from .autodiff import tensor as T
from .conformers import Conformer, boltzmann_weights, gamma_encode, select_conformers, ConformerSet
from .molgraph import featurize
from .net2d import GraphBatch, Net2D, Net2DConfig, compute_degree_stats
from .net3d import CloudBatch, Net3D, Net3DConfig
from .schedule import PlateauScheduler, lr_at
from .synth import distinct_atom_molecule, random_molecule


def _random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def run_selftest(seed: int = 1) -> int:
    rng = np.random.default_rng(seed)
    checks = []

    def check(name, fn):
        try:
            ok = bool(fn())
            detail = ""
        except Exception as exc:  # a crash is a failure with its message
            ok = False
            detail = f" ({exc})"
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name}{detail}")

    mols = [random_molecule(f"st{i}", rng, (5, 12), 2) for i in range(8)]
    graphs = [featurize(m) for m in mols]
    stats = compute_degree_stats(graphs)
    net2d = Net2D(Net2DConfig(depth=2, hidden_dim=16, d_z=12), graphs[0].atom_features.shape[1],
                  graphs[0].bond_features.shape[1], stats, seed=seed)
    net3d = Net3D(Net3DConfig(hidden_dim=10, edge_hidden_dim=10, d_z=12), seed=seed)

    def isometry_check():
        conf = mols[0].conformers.conformers[0]
        z = net3d.encode(conf)
        for _ in range(5):
            q = _random_rotation(rng)
            t = rng.normal(size=3)
            moved = Conformer(conf.coords @ q.T + t)
            if np.abs(net3d.encode(moved) - z).max() > 1e-9:
                return False
        refl = Conformer(conf.coords * np.array([-1.0, 1.0, 1.0]))
        return np.abs(net3d.encode(refl) - z).max() <= 1e-9

    check("encode3d isometry + reflection invariance (1e-9)", isometry_check)

    def permutation_check():
        from .molgraph import Bond, make_graph

        g = graphs[1]
        z = net2d.encode(g)
        perm = rng.permutation(g.n_atoms)
        inv = {int(old): new for new, old in enumerate(perm)}
        g2 = make_graph(g.id + "p", [g.atoms[p] for p in perm],
                        [Bond(inv[b.u], inv[b.v], b.order) for b in g.bonds])
        return np.array_equal(net2d.encode(featurize(g2)), z)

    check("encode2d exact permutation invariance", permutation_check)

    def reduction_check():
        za = rng.normal(size=(5, 12))
        zb = rng.normal(size=(5, 1, 12))
        return abs(LS.multi3d_eq2(za, zb, 0.1).item() - LS.ntxent_eq1(za, zb[:, 0], 0.1).item()) <= 1e-12

    check("multi-conformer loss with c=1 equals the pair loss (1e-12)", reduction_check)

    def closed_forms_check():
        za = np.array([[1.0, 0.0], [0.0, 1.0]])
        v1 = LS.ntxent_eq1(za, za * 2.0, 0.1).item()
        z = np.tile(rng.normal(size=(1, 6)), (3, 1))
        v2 = LS.ntxent_eq1(z, z, 0.3).item()
        return abs(v1 + 10.0) <= 1e-9 and abs(v2 - math.log(2)) <= 1e-9

    check("contrastive loss closed forms (-10 and log 2)", closed_forms_check)

    def gamma_check():
        for F in (0, 3, 4, 8, 10, 50):
            if gamma_encode(1.234, F).shape != (2 * F + 1,):
                return False
        g0 = gamma_encode(0.0, 4)
        want0 = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
        gpi = gamma_encode(math.pi, 2)
        wantpi = np.array([math.pi, 0.0, -1.0, 1.0, 0.0])
        return np.abs(g0 - want0).max() <= 1e-12 and np.abs(gpi - wantpi).max() <= 1e-12

    check("distance frequency encoding lengths and closed forms", gamma_check)

    grad_mols = [featurize(distinct_atom_molecule(f"gc{i}", rng, 7)) for i in range(3)]

    def gradcheck_2d():
        batch = GraphBatch(grad_mols)
        probe = T.Tensor(rng.normal(size=(3, 12)))
        err = ad.check_gradients(
            lambda: T.sum_reduce(T.mul(net2d.forward_batch(batch, train=True), probe)),
            net2d.store, num_coords=80, rng=rng,
        )
        return err <= 1e-4

    check("encode2d finite-difference gradients (1e-4)", gradcheck_2d)

    def gradcheck_3d():
        confs = [m.conformers.conformers[0] for m in grad_mols]
        batch = CloudBatch(confs, net3d.config.num_frequencies)
        probe = T.Tensor(rng.normal(size=(3, 12)))
        err = ad.check_gradients(
            lambda: T.sum_reduce(T.mul(net3d.forward_batch(batch, train=True), probe)),
            net3d.store, num_coords=80, rng=rng,
        )
        return err <= 1e-4

    check("encode3d finite-difference gradients (1e-4)", gradcheck_3d)

    def scheduler_check():
        if lr_at(350, base_lr=8e-5, warmup_spans=(700,)) != 4e-5:
            return False
        if lr_at(900, base_lr=8e-5, warmup_spans=(700,)) != 8e-5:
            return False
        sched = PlateauScheduler(factor=0.6, patience=25, cooldown=20)
        sched.step(1.0)
        fired_at = None
        for i in range(2, 40):
            if sched.step(2.0):
                fired_at = i
                break
        return fired_at == 27  # first eval set the best; 26 bad evals later it fires

    check("warmup midpoint and plateau firing epoch", scheduler_check)

    def padding_check():
        c1 = Conformer(np.zeros((2, 3)), energy=1.0)
        c2 = Conformer(np.ones((2, 3)), energy=2.0)
        sel = select_conformers(ConformerSet([c2, c1]), 3)
        return [s.energy for s in sel] == [1.0, 2.0, 1.0] and sel[2] is sel[0]

    check("conformer padding repeats the lowest-energy conformer", padding_check)

    def boltzmann_check():
        w = boltzmann_weights([0.0, 0.5928], 298.15)
        shifted = boltzmann_weights([100.0, 100.5928], 298.15)
        return abs(w.sum() - 1.0) <= 1e-12 and np.abs(w - shifted).max() <= 1e-12 and abs(w[0] - 0.731) < 5e-4

    check("Boltzmann weights normalize and ignore energy offsets", boltzmann_check)

    failures = sum(1 for ok in checks if not ok)
    print(f"{len(checks) - failures}/{len(checks)} properties passed")
    return failures
