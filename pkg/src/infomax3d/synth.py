"""Synthetic molecule generator for tests, the self-test suite, and demos.

Graphs are random trees with occasional ring closures over a small element
set. Conformers start from the graph's spectral layout (Laplacian
eigenvectors), perturbed per conformer, then a force relaxation pulls bonded
atoms toward a target length and pushes non-bonded ones apart; a strain
energy orders the conformers. Starting from the spectral layout makes the
geometry a stable function of the topology, so geometric targets are
learnable from the 2D graph with enough data. The regression target
`mean_dist` is the mean pairwise distance of the lowest-energy conformer:
a pure function of 3D geometry that never appears in the 2D features.
"""

from __future__ import annotations

import numpy as np

from .conformers import Conformer, ConformerSet
from .molgraph import Atom, Bond, Dataset, make_graph

ELEMENTS = ("C", "C", "C", "N", "O", "F", "H")  # carbon-weighted draw
_Z = {"C": 6, "N": 7, "O": 8, "F": 9, "H": 1}

BOND_LENGTH = 1.5
REPULSION_DIST = 2.2


def _relax(coords: np.ndarray, bonds: list[tuple[int, int]], iters: int = 120, step: float = 0.05) -> np.ndarray:
    n = coords.shape[0]
    bond_mask = np.zeros((n, n), dtype=bool)
    for u, v in bonds:
        bond_mask[u, v] = bond_mask[v, u] = True
    pos = coords.copy()
    for _ in range(iters):
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(dist, 1.0)
        unit = diff / dist[:, :, None]
        force = np.zeros_like(pos)
        # springs toward the bond length
        stretch = np.where(bond_mask, dist - BOND_LENGTH, 0.0)
        force -= (stretch[:, :, None] * unit).sum(axis=1)
        # short-range repulsion between non-bonded atoms
        overlap = np.where(~bond_mask & (dist < REPULSION_DIST), REPULSION_DIST - dist, 0.0)
        np.fill_diagonal(overlap, 0.0)
        force += (overlap[:, :, None] * unit).sum(axis=1)
        pos = pos + step * force
    return pos


def _strain_energy(pos: np.ndarray, bonds: list[tuple[int, int]]) -> float:
    n = pos.shape[0]
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    bond_mask = np.zeros((n, n), dtype=bool)
    for u, v in bonds:
        bond_mask[u, v] = bond_mask[v, u] = True
    e_bond = ((dist - BOND_LENGTH)[bond_mask] ** 2).sum() / 2.0
    nb = ~bond_mask & ~np.eye(n, dtype=bool)
    e_rep = (np.maximum(0.0, REPULSION_DIST - dist)[nb] ** 2).sum() / 2.0
    return float(e_bond + e_rep)


def _spectral_layout(n: int, bonds: list[tuple[int, int]]) -> np.ndarray:
    """Deterministic 3D coordinates from the three lowest non-trivial
    Laplacian eigenvectors (a pure function of the topology)."""
    lap = np.zeros((n, n))
    for u, v in bonds:
        lap[u, v] -= 1.0
        lap[v, u] -= 1.0
        lap[u, u] += 1.0
        lap[v, v] += 1.0
    _, vecs = np.linalg.eigh(lap)
    coords = vecs[:, 1:4]
    if coords.shape[1] < 3:
        coords = np.pad(coords, ((0, 0), (0, 3 - coords.shape[1])))
    # sign convention so eigenvector flips cannot leak in
    for k in range(3):
        col = coords[:, k]
        j = int(np.argmax(np.abs(col)))
        if col[j] < 0:
            coords[:, k] = -col
    return coords * (0.7 * BOND_LENGTH * np.sqrt(n))


def random_molecule(mol_id: str, rng: np.random.Generator, n_atoms_range=(6, 16),
                    n_conformers: int = 3) -> "tuple":
    """One random molecule graph plus its conformer set and geometry targets."""
    n = int(rng.integers(n_atoms_range[0], n_atoms_range[1] + 1))
    symbols = [str(rng.choice(ELEMENTS)) for _ in range(n)]
    bonds = []
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        bonds.append((parent, i))
    # a few ring closures on non-adjacent pairs
    n_extra = int(rng.integers(0, max(1, n // 5) + 1))
    existing = set(bonds)
    for _ in range(n_extra):
        u, v = sorted(rng.choice(n, size=2, replace=False).tolist())
        if (u, v) not in existing and u != v:
            existing.add((u, v))
            bonds.append((u, v))

    base = _spectral_layout(n, bonds)
    confs = []
    for j in range(n_conformers):
        init = base + rng.normal(size=(n, 3)) * (0.05 + 0.45 * j)
        pos = _relax(init, bonds)
        confs.append(Conformer(pos, energy=_strain_energy(pos, bonds)))
    conf_set = ConformerSet(confs)

    lowest = conf_set.conformers[0]
    diff = lowest.coords[:, None, :] - lowest.coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    iu = np.triu_indices(n, k=1)
    targets = {"mean_dist": float(dist[iu].mean())}

    atoms = [Atom(_Z[s]) for s in symbols]
    bond_objs = [Bond(u, v, "single") for u, v in bonds]
    graph = make_graph(mol_id, atoms, bond_objs, targets=targets, conformers=conf_set)
    return graph


def distinct_atom_molecule(mol_id: str, rng: np.random.Generator, n_atoms: int = 8,
                           n_conformers: int = 2):
    """A random molecule whose atoms are pairwise distinguishable (distinct
    elements). Useful for gradient checks: aggregation extrema are untied and
    message variances stay away from zero, so finite differences are valid.
    """
    if n_atoms > 36:
        raise ValueError("at most 36 distinct elements available")
    zs = rng.permutation(36)[:n_atoms] + 1
    bonds = [(int(rng.integers(0, i)), i) for i in range(1, n_atoms)]
    confs = []
    for _ in range(n_conformers):
        pos = _relax(rng.normal(size=(n_atoms, 3)) * 1.5, bonds)
        confs.append(Conformer(pos, energy=_strain_energy(pos, bonds)))
    conf_set = ConformerSet(confs)
    atoms = [Atom(int(z)) for z in zs]
    bond_objs = [Bond(u, v, "single") for u, v in bonds]
    return make_graph(mol_id, atoms, bond_objs, conformers=conf_set)


def make_synthetic_dataset(n_molecules: int, seed: int, n_atoms_range=(6, 16),
                           n_conformers: int = 3) -> Dataset:
    rng = np.random.default_rng(seed)
    molecules = [
        random_molecule(f"syn{seed}_{i}", rng, n_atoms_range, n_conformers) for i in range(n_molecules)
    ]
    return Dataset(molecules=molecules, target_names=["mean_dist"])


def main(argv=None):
    import argparse

    from .molgraph import serialize_dataset

    p = argparse.ArgumentParser(description="Write a synthetic molecule dataset file")
    p.add_argument("out", help="output dataset path")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--conformers", type=int, default=3)
    p.add_argument("--min-atoms", type=int, default=6)
    p.add_argument("--max-atoms", type=int, default=16)
    args = p.parse_args(argv)
    ds = make_synthetic_dataset(args.n, args.seed, (args.min_atoms, args.max_atoms), args.conformers)
    serialize_dataset(ds, args.out)
    print(f"wrote {len(ds)} molecules to {args.out}")


if __name__ == "__main__":
    main()
