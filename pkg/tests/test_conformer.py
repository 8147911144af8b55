import math

import numpy as np
import pytest

from infomax3d.conformers import (
    Conformer,
    ConformerSet,
    DistanceMatrix,
    boltzmann_weights,
    gamma_encode,
    gamma_encode_array,
    pairwise_distances,
    sample_conformer,
    select_conformers,
)

from conftest import random_rotation


class TestPairwiseDistances:
    def test_3_4_5_triangle(self):
        D = pairwise_distances(Conformer(np.array([[0.0, 0, 0], [3.0, 4.0, 0]])))
        assert D.values[0, 1] == 5.0
        assert D.values[1, 0] == 5.0
        assert D.values[0, 0] == 0.0

    def test_isometry_invariance(self, rng):
        coords = rng.normal(size=(7, 3))
        D = pairwise_distances(Conformer(coords)).values
        for _ in range(10):
            q = random_rotation(rng)
            t = rng.normal(size=3)
            D2 = pairwise_distances(Conformer(coords @ q.T + t)).values
            assert np.abs(D - D2).max() <= 1e-9

    def test_matches_bruteforce_exactly(self, rng):
        coords = rng.normal(size=(6, 3)) * 3.0
        D = pairwise_distances(Conformer(coords)).values
        for u in range(6):
            for v in range(6):
                dx, dy, dz = coords[u] - coords[v]
                assert D[u, v] == math.sqrt((dx * dx + dy * dy) + dz * dz)

    def test_informative_entries(self):
        n = 5
        D = pairwise_distances(Conformer(np.arange(n * 3, dtype=float).reshape(n, 3) ** 1.1))
        assert int((D.values > 0).sum()) == n * n - n

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            Conformer(np.array([[0.0, 0, 0], [np.nan, 0, 0]]))

    def test_single_atom(self):
        D = pairwise_distances(Conformer(np.zeros((1, 3))))
        assert D.values.shape == (1, 1) and D.values[0, 0] == 0.0


class TestDistanceMatrixInvariants:
    def test_validation_accepts_real_distances(self, rng):
        coords = rng.normal(size=(8, 3))
        pairwise_distances(Conformer(coords), validate=True)

    def test_asymmetry_rejected(self):
        bad = np.array([[0.0, 1.0], [2.0, 0.0]])
        with pytest.raises(ValueError, match="symmetric"):
            DistanceMatrix(bad)

    def test_nonzero_diagonal_rejected(self):
        with pytest.raises(ValueError, match="diagonal"):
            DistanceMatrix(np.eye(3))

    def test_negative_rejected(self):
        bad = np.array([[0.0, -1.0], [-1.0, 0.0]])
        with pytest.raises(ValueError, match="negative"):
            DistanceMatrix(bad)

    def test_triangle_inequality_rejected(self):
        bad = np.array([[0.0, 1.0, 5.0], [1.0, 0.0, 1.0], [5.0, 1.0, 0.0]])
        with pytest.raises(ValueError, match="triangle"):
            DistanceMatrix(bad)


class TestGammaEncode:
    def test_zero_closed_form(self):
        out = gamma_encode(0.0, 4)
        assert np.array_equal(out, np.array([0.0, 0, 1, 0, 1, 0, 1, 0, 1]))
        assert out.shape == (9,)

    def test_f8_length(self):
        assert gamma_encode(1.7, 8).shape == (17,)

    def test_pi_closed_form(self):
        out = gamma_encode(math.pi, 2)
        want = np.array([math.pi, 0.0, -1.0, 1.0, 0.0])
        assert np.abs(out - want).max() <= 1e-12

    @pytest.mark.parametrize("F", [0, 3, 4, 8, 10, 50])
    def test_lengths(self, F):
        assert gamma_encode(2.5, F).shape == (2 * F + 1,)

    def test_first_component_is_distance(self, rng):
        for d in rng.uniform(0, 20, size=20):
            assert gamma_encode(float(d), 4)[0] == d

    def test_terms_follow_frequency_pattern(self, rng):
        d = float(rng.uniform(0.1, 10))
        F = 6
        out = gamma_encode(d, F)
        for f in range(F):
            assert out[1 + 2 * f] == np.sin(d / 2**f)
            assert out[2 + 2 * f] == np.cos(d / 2**f)

    def test_array_version_matches_scalar(self, rng):
        ds = rng.uniform(0, 5, size=(3, 4))
        arr = gamma_encode_array(ds, 4)
        assert arr.shape == (3, 4, 9)
        for i in range(3):
            for j in range(4):
                assert np.array_equal(arr[i, j], gamma_encode(float(ds[i, j]), 4))

    def test_errors(self):
        with pytest.raises(ValueError):
            gamma_encode(np.inf, 4)
        with pytest.raises(ValueError):
            gamma_encode(1.0, -1)


def _set(energies):
    return ConformerSet(
        [Conformer(np.full((2, 3), float(i)), energy=e) for i, e in enumerate(energies)]
    )


class TestSelectConformers:
    def test_padding_rule(self):
        cs = _set([1.0, 2.0])
        sel = select_conformers(cs, 3)
        assert [c.energy for c in sel] == [1.0, 2.0, 1.0]
        # padded entry is bit-identical to the lowest-energy conformer
        assert sel[2] is sel[0]

    def test_lowest_single(self):
        cs = _set([5.0, 3.0, 4.0, 1.0, 2.0])
        sel = select_conformers(cs, 1)
        assert sel[0].energy == 1.0

    def test_no_energy_file_order(self):
        cs = ConformerSet([Conformer(np.full((1, 3), float(i))) for i in range(3)])
        sel = select_conformers(cs, 2)
        assert sel[0].coords[0, 0] == 0.0 and sel[1].coords[0, 0] == 1.0

    def test_count_error(self):
        with pytest.raises(ValueError):
            select_conformers(_set([1.0]), 0)

    def test_output_length_always_c(self):
        for n_avail in (1, 2, 5):
            cs = _set(list(map(float, range(n_avail))))
            for c in (1, 2, 3, 7):
                assert len(select_conformers(cs, c)) == c

    def test_energy_sort_is_stable(self):
        c0 = Conformer(np.zeros((1, 3)), energy=1.0)
        c1 = Conformer(np.ones((1, 3)), energy=1.0)
        cs = ConformerSet([c0, c1])
        assert cs.conformers[0] is c0 and cs.conformers[1] is c1


class TestSampling:
    def test_uniform_frequencies(self):
        cs = _set([0.0, 1.0, 2.0, 3.0])
        rng = np.random.default_rng(0)
        counts = np.zeros(4)
        for _ in range(20000):
            c = sample_conformer(cs, "uniform", rng)
            counts[int(c.coords[0, 0])] += 1
        assert np.abs(counts / 20000 - 0.25).max() < 0.01

    def test_boltzmann_with_stored_weights(self):
        confs = [
            Conformer(np.full((1, 3), float(i)), weight=w) for i, w in enumerate((0.7, 0.2, 0.1))
        ]
        cs = ConformerSet(confs)
        rng = np.random.default_rng(1)
        counts = np.zeros(3)
        n = 30000
        for _ in range(n):
            counts[int(sample_conformer(cs, "boltzmann", rng).coords[0, 0])] += 1
        assert np.abs(counts / n - np.array([0.7, 0.2, 0.1])).max() < 0.01

    def test_boltzmann_from_energies(self):
        cs = _set([0.0, 0.5928])
        rng = np.random.default_rng(2)
        n = 30000
        hits = sum(sample_conformer(cs, "boltzmann", rng).coords[0, 0] == 0.0 for _ in range(n))
        assert abs(hits / n - 0.731) < 0.01

    def test_single_conformer(self):
        cs = _set([1.0])
        rng = np.random.default_rng(3)
        for _ in range(5):
            assert sample_conformer(cs, "uniform", rng) is cs.conformers[0]

    def test_boltzmann_requires_info(self):
        cs = ConformerSet([Conformer(np.zeros((1, 3))), Conformer(np.ones((1, 3)))])
        with pytest.raises(ValueError, match="boltzmann"):
            sample_conformer(cs, "boltzmann", np.random.default_rng(0))

    def test_unknown_strategy(self):
        with pytest.raises(ValueError, match="strategy"):
            sample_conformer(_set([1.0]), "magic", np.random.default_rng(0))


class TestBoltzmannWeights:
    def test_equal_energies_uniform(self):
        w = boltzmann_weights([2.0, 2.0, 2.0], 300.0)
        assert np.abs(w - 1 / 3).max() <= 1e-12

    def test_large_gap_limit(self):
        w = boltzmann_weights([0.0, 50.0], 298.15)
        assert w[0] > 1 - 1e-12

    def test_derived_value(self):
        # delta E / (kB T) = 1 at E = 0.5928 kcal/mol, T = 298.15 K
        w = boltzmann_weights([0.0, 0.5928], 298.15)
        assert w[0] == pytest.approx(0.731, abs=5e-4)
        assert w[1] == pytest.approx(0.269, abs=5e-4)

    def test_sum_and_offset_invariance(self, rng):
        for _ in range(20):
            e = rng.normal(size=5) * 3
            w = boltzmann_weights(e, 298.15)
            assert abs(w.sum() - 1.0) <= 1e-12
            w2 = boltzmann_weights(e + 123.456, 298.15)
            assert np.abs(w - w2).max() <= 1e-12

    def test_errors(self):
        with pytest.raises(ValueError):
            boltzmann_weights([0.0, np.inf], 300.0)
        with pytest.raises(ValueError):
            boltzmann_weights([0.0], -1.0)


class TestConformerSet:
    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            ConformerSet([])

    def test_mixed_sizes_rejected(self):
        with pytest.raises(ValueError, match="atom counts"):
            ConformerSet([Conformer(np.zeros((2, 3))), Conformer(np.zeros((3, 3)))])

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            ConformerSet(
                [Conformer(np.zeros((1, 3)), weight=0.5), Conformer(np.ones((1, 3)), weight=0.6)]
            )
