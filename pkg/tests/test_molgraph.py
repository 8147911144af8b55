import numpy as np
import pytest

from infomax3d.conformers import Conformer, ConformerSet, pairwise_distances
from infomax3d.molgraph import (
    ATOM_FEATURE_DIM,
    Atom,
    Bond,
    Dataset,
    DatasetFormatError,
    MoleculeError,
    featurize,
    make_graph,
    node_drop,
    parse_dataset,
    serialize_dataset,
    serialize_molecule,
    split_random,
)
from infomax3d.synth import make_synthetic_dataset

from conftest import permute_graph


def write(tmp_path, text, name="data.mol"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestParse:
    def test_minimal_record(self, tmp_path):
        path = write(tmp_path, "id=m1; atoms=C,O; bonds=0-1:1; coords3d=[(0,0,0),(1.2,0,0)]\n")
        ds = parse_dataset(path)
        assert len(ds) == 1
        mol = ds.molecules[0]
        assert mol.id == "m1"
        assert mol.n_atoms == 2
        assert len(mol.bonds) == 1 and mol.bonds[0].order == "single"
        assert len(mol.conformers) == 1
        assert np.allclose(mol.conformers.conformers[0].coords, [[0, 0, 0], [1.2, 0, 0]])

    def test_atom_index_out_of_range(self, tmp_path):
        path = write(tmp_path, "id=m1; atoms=C,O; bonds=0-5:1\n")
        with pytest.raises(DatasetFormatError, match="atom index out of range"):
            parse_dataset(path)

    def test_roundtrip_64_molecules(self, tmp_path):
        # serializer is the oracle: parse(serialize(ds)) must reproduce the data model
        ds = make_synthetic_dataset(64, seed=3, n_atoms_range=(4, 9))
        path = str(tmp_path / "syn.mol")
        serialize_dataset(ds, path)
        ds2 = parse_dataset(path)
        assert len(ds2) == 64
        assert ds.ids() == ds2.ids()  # order-preserving
        for a, b in zip(ds.molecules, ds2.molecules):
            assert [x.atomic_number for x in a.atoms] == [x.atomic_number for x in b.atoms]
            assert [(x.u, x.v, x.order) for x in a.bonds] == [(x.u, x.v, x.order) for x in b.bonds]
            assert a.targets == b.targets
            for ca, cb in zip(a.conformers, b.conformers):
                assert np.array_equal(ca.coords, cb.coords)
                assert ca.energy == cb.energy

    def test_double_roundtrip_identity(self, tmp_path):
        ds = make_synthetic_dataset(8, seed=5, n_atoms_range=(4, 7))
        p1, p2 = str(tmp_path / "a.mol"), str(tmp_path / "b.mol")
        serialize_dataset(ds, p1)
        serialize_dataset(parse_dataset(p1), p2)
        assert open(p1).read() == open(p2).read()

    def test_comments_and_blank_lines(self, tmp_path):
        path = write(tmp_path, "# header\n\nid=m1; atoms=C\n  # indented comment\nid=m2; atoms=O\n")
        assert parse_dataset(path).ids() == ["m1", "m2"]

    def test_duplicate_id_reports_line(self, tmp_path):
        path = write(tmp_path, "id=m1; atoms=C\nid=m1; atoms=O\n")
        with pytest.raises(DatasetFormatError) as exc:
            parse_dataset(path)
        (line, col, msg) = exc.value.errors[0]
        assert line == 2 and "duplicate molecule id" in msg

    def test_all_errors_collected(self, tmp_path):
        path = write(tmp_path, "id=m1; atoms=C,Zz\nid=m2; atoms=C\nid=m3; atoms=C; bonds=0-0:1\n")
        with pytest.raises(DatasetFormatError) as exc:
            parse_dataset(path)
        assert [e[0] for e in exc.value.errors] == [1, 3]

    @pytest.mark.parametrize(
        "line,err",
        [
            ("atoms=C", "missing id"),
            ("id=m1", "missing atoms"),
            ("id=m1; atoms=C; bogus=1", "unknown field"),
            ("id=m1; atoms=C,O; bonds=0-1:9", "unknown bond order"),
            ("id=m1; atoms=C,O; bonds=01", "bad bond token"),
            ("id=m1; atoms=C; coords3d=[(0,0)]", "3"),
            ("id=m1; atoms=C; coords3d=[(0,0,0),(1,1,1)]", "coordinates for 1 atoms"),
            ("id=m1; atoms=C; energies=1.0", "without coords3d"),
            ("id=m1; atoms=C,O; charges=0", "charges for 2 atoms"),
            ("id=m1; atoms=C; targets=x", "bad target token"),
            ("id=m1; atoms=C; coords3d=[(0,0,0)]; coords3d=[(9,9,9)]; energies=1,2; weights=0.5,0.6",
             "weights sum"),
        ],
    )
    def test_malformed_records(self, tmp_path, line, err):
        with pytest.raises(DatasetFormatError, match=err):
            parse_dataset(write(tmp_path, line + "\n"))

    def test_syntax_error_reports_column(self, tmp_path):
        path = write(tmp_path, "id=m1; atoms=C,O; bonds=0-1:bogus\n")
        with pytest.raises(DatasetFormatError) as exc:
            parse_dataset(path)
        line, col, _ = exc.value.errors[0]
        assert line == 1
        assert col == len("id=m1; atoms=C,O; ") + 1

    def test_charges_and_multiple_conformers(self, tmp_path):
        path = write(
            tmp_path,
            "id=m1; atoms=N,H; bonds=0-1:1; charges=1,0; "
            "coords3d=[(0,0,0),(1,0,0)]; coords3d=[(0,0,0),(0,1,0)]; energies=2.0,1.0; targets=y:3.5\n",
        )
        mol = parse_dataset(path).molecules[0]
        assert mol.atoms[0].formal_charge == 1
        # sorted ascending by energy
        assert [c.energy for c in mol.conformers] == [1.0, 2.0]
        assert mol.targets == {"y": 3.5}


class TestGraphInvariants:
    def test_self_loop_rejected(self):
        with pytest.raises(MoleculeError, match="self-loop"):
            Bond(1, 1)

    def test_duplicate_bond_rejected(self):
        with pytest.raises(MoleculeError, match="duplicate bond"):
            make_graph("m", [Atom(6), Atom(8)], [Bond(0, 1), Bond(1, 0)])

    def test_atomic_number_range(self):
        with pytest.raises(MoleculeError):
            Atom(0)
        with pytest.raises(MoleculeError):
            Atom(119)

    def test_degree_derived(self):
        g = make_graph("m", [Atom(6), Atom(8), Atom(1)], [Bond(0, 1), Bond(0, 2)])
        assert [a.degree for a in g.atoms] == [2, 1, 1]


class TestFeaturize:
    def test_one_hot_counts(self):
        g = make_graph("m", [Atom(6), Atom(6), Atom(6)], [Bond(0, 1), Bond(1, 2)])
        f = featurize(g)
        # carbon, degree 2, charge 0 -> exactly 3 ones in the middle atom's row
        assert f.atom_features[1].sum() == 3.0
        assert f.atom_features.shape == (3, ATOM_FEATURE_DIM)
        assert ATOM_FEATURE_DIM == 50
        assert f.bond_features.shape == (2, 4)
        assert np.array_equal(f.bond_features.sum(axis=1), np.ones(2))

    def test_permutation_equivariance(self, rng):
        ds = make_synthetic_dataset(6, seed=11, n_atoms_range=(4, 9))
        for mol in ds.molecules:
            f = featurize(mol)
            perm = rng.permutation(mol.n_atoms)
            f2 = permute_graph(f, perm)
            assert np.array_equal(f2.atom_features, f.atom_features[perm])

    def test_other_buckets(self):
        g = make_graph("m", [Atom(92, formal_charge=-3)], [])  # uranium, charge outside -2..2
        f = featurize(g)
        row = f.atom_features[0]
        assert row[36] == 1.0  # element "other"
        assert row.sum() == 3.0

    def test_degree_buckets_cap(self):
        atoms = [Atom(6)] + [Atom(1) for _ in range(7)]
        g = make_graph("m", atoms, [Bond(0, i) for i in range(1, 8)])
        f = featurize(g)
        assert f.atom_features[0][37 + 6] == 1.0  # degree >= 6 bucket

    def test_unknown_scheme(self):
        g = make_graph("m", [Atom(6)], [])
        with pytest.raises(ValueError, match="unknown feature scheme"):
            featurize(g, scheme="nope")


class TestSplit:
    def test_sizes_and_determinism(self):
        ds = make_synthetic_dataset(10, seed=2, n_atoms_range=(4, 6))
        a = split_random(ds, (0.8, 0.1, 0.1), seed=7)
        b = split_random(ds, (0.8, 0.1, 0.1), seed=7)
        assert [len(x) for x in a] == [8, 1, 1]
        for x, y in zip(a, b):
            assert x.ids() == y.ids()

    def test_partition(self):
        ds = make_synthetic_dataset(23, seed=4, n_atoms_range=(4, 6))
        tr, va, te = split_random(ds, (0.6, 0.2, 0.2), seed=3)
        ids = tr.ids() + va.ids() + te.ids()
        assert sorted(ids) == sorted(ds.ids())
        assert len(set(ids)) == len(ids)

    def test_stats_from_train_only(self):
        ds = make_synthetic_dataset(20, seed=9, n_atoms_range=(4, 6))
        tr, va, te = split_random(ds, (0.5, 0.25, 0.25), seed=1)
        vals = np.array([m.targets["mean_dist"] for m in tr.molecules])
        mean, std = tr.target_stats["mean_dist"]
        assert mean == pytest.approx(vals.mean())
        assert va.target_stats == tr.target_stats
        assert te.target_stats == tr.target_stats

    def test_empty_split_rejected(self):
        ds = make_synthetic_dataset(5, seed=2, n_atoms_range=(4, 5))
        with pytest.raises(ValueError, match="empty"):
            split_random(ds, (0.9, 0.05, 0.05), seed=0)

    def test_bad_ratios(self):
        ds = make_synthetic_dataset(5, seed=2, n_atoms_range=(4, 5))
        with pytest.raises(ValueError, match="sum"):
            split_random(ds, (0.8, 0.1, 0.2), seed=0)
        with pytest.raises(ValueError, match="positive"):
            split_random(ds, (1.0, 0.0, 0.0), seed=0)


class TestNodeDrop:
    def _mol(self, n=10, seed=0):
        rng = np.random.default_rng(seed)
        atoms = [Atom(6) for _ in range(n)]
        bonds = [Bond(int(rng.integers(0, i)), i) for i in range(1, n)]
        coords = rng.normal(size=(n, 3))
        cs = ConformerSet([Conformer(coords, energy=0.0), Conformer(coords * 1.2, energy=1.0)])
        return featurize(make_graph("m", atoms, bonds)), cs

    def test_ratio_zero_identity(self):
        g, cs = self._mol()
        g2, cs2 = node_drop(g, cs, 0.0, np.random.default_rng(0))
        assert g2 is g and cs2 is cs

    def test_counts_and_no_dangling(self):
        g, cs = self._mol(n=10)
        g2, cs2 = node_drop(g, cs, 0.2, np.random.default_rng(1))
        assert g2.n_atoms == 8
        assert all(0 <= b.u < 8 and 0 <= b.v < 8 for b in g2.bonds)
        g2.validate()
        assert all(c.n_atoms == 8 for c in cs2)

    def test_distance_rows_removed(self):
        # rebuilt distance matrix must equal brute-force rebuild from surviving coords
        g, cs = self._mol(n=9, seed=3)
        rng = np.random.default_rng(5)
        g2, cs2 = node_drop(g, cs, 0.3, rng)
        # recover kept indices by matching coordinate rows
        orig = cs.conformers[0].coords
        kept_rows = [int(np.where((orig == row).all(axis=1))[0][0]) for row in cs2.conformers[0].coords]
        D_new = pairwise_distances(cs2.conformers[0]).values
        D_old = pairwise_distances(cs.conformers[0]).values
        assert np.array_equal(D_new, D_old[np.ix_(kept_rows, kept_rows)])
        dropped = set(range(9)) - set(kept_rows)
        assert len(dropped) == 2
        assert D_new.shape == (7, 7)

    def test_features_travel_with_atoms(self):
        g, cs = self._mol(n=8, seed=2)
        marker = np.arange(8, dtype=np.float64)
        g.atom_features = g.atom_features.copy()
        g.atom_features[:, 0] = marker  # tag rows
        g2, _ = node_drop(g, cs, 0.25, np.random.default_rng(7))
        assert set(g2.atom_features[:, 0]) < set(marker)
        assert g2.atom_features.shape[0] == 6
        assert g2.bond_features.shape[0] == len(g2.bonds)

    def test_would_empty_rejected(self):
        g = featurize(make_graph("m", [Atom(6)], []))
        with pytest.raises(ValueError, match="outside"):
            node_drop(g, None, 1.0, np.random.default_rng(0))

    def test_invariants_hold_after_drop(self, rng):
        ds = make_synthetic_dataset(10, seed=8, n_atoms_range=(5, 12))
        for mol in ds.molecules:
            g = featurize(mol)
            g2, cs2 = node_drop(g, mol.conformers, 0.2, rng)
            g2.validate()
            assert len(cs2) == len(mol.conformers)


class TestDataset:
    def test_target_name_consistency(self):
        g1 = make_graph("a", [Atom(6)], [], targets={"y": 1.0})
        g2 = make_graph("b", [Atom(6)], [], targets={"z": 1.0})
        with pytest.raises(MoleculeError, match="target names"):
            Dataset([g1, g2], target_names=["y"])

    def test_serialize_molecule_fields(self):
        g = make_graph("mol-1", [Atom(6), Atom(8, formal_charge=-1)], [Bond(0, 1, "aromatic")],
                       targets={"gap": 1.25})
        line = serialize_molecule(g)
        assert "id=mol-1" in line and "bonds=0-1:ar" in line and "charges=0,-1" in line
        assert "targets=gap:1.25" in line
