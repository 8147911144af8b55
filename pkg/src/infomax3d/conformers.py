"""3D conformer geometry: point clouds, distance matrices, the frequency
encoding of distances, conformer selection/padding and sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Boltzmann constant in kcal/(mol*K)
KB_KCAL_PER_MOL_K = 0.0019872041
DEFAULT_TEMPERATURE_K = 298.15


@dataclass
class Conformer:
    """One 3D arrangement of a molecule's atoms (coords in Angstrom)."""

    coords: np.ndarray
    energy: float | None = None  # kcal/mol
    weight: float | None = None  # Boltzmann weight in [0, 1]

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValueError(f"coords must be (n, 3), got {self.coords.shape}")
        if self.coords.shape[0] < 1:
            raise ValueError("conformer needs at least one atom")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("non-finite coordinates")
        if self.weight is not None and not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight {self.weight} outside [0, 1]")

    @property
    def n_atoms(self) -> int:
        return self.coords.shape[0]


class ConformerSet:
    """Non-empty list of same-size conformers, sorted ascending by energy
    when energies are present (stable sort, so equal energies keep file order).

    Conformers without energies are treated as already sorted in input order.
    """

    def __init__(self, conformers):
        conformers = list(conformers)
        if not conformers:
            raise ValueError("empty conformer set")
        n = conformers[0].n_atoms
        if any(c.n_atoms != n for c in conformers):
            raise ValueError("conformers have differing atom counts")
        if all(c.energy is not None for c in conformers):
            conformers = sorted(conformers, key=lambda c: c.energy)
        weights = [c.weight for c in conformers]
        if all(w is not None for w in weights):
            total = sum(weights)
            if abs(total - 1.0) > 1e-6:
                raise ValueError(f"conformer weights sum to {total}, expected 1 within 1e-6")
        self.conformers = conformers

    def __len__(self):
        return len(self.conformers)

    def __iter__(self):
        return iter(self.conformers)

    @property
    def n_atoms(self) -> int:
        return self.conformers[0].n_atoms


class DistanceMatrix:
    """Symmetric, zero-diagonal, nonnegative pairwise distances (Angstrom)."""

    def __init__(self, values: np.ndarray, validate: bool = True):
        values = np.asarray(values, dtype=np.float64)
        if validate:
            n = values.shape[0]
            if values.ndim != 2 or values.shape[1] != n:
                raise ValueError(f"distance matrix must be square, got {values.shape}")
            if not np.all(np.isfinite(values)):
                raise ValueError("non-finite distances")
            if not np.allclose(values, values.T, atol=0.0):
                raise ValueError("distance matrix not symmetric")
            if np.any(np.diagonal(values) != 0.0):
                raise ValueError("distance matrix diagonal not zero")
            if np.any(values < 0.0):
                raise ValueError("negative distances")
            # d(u,v) <= min_k d(u,k) + d(k,v), within tolerance
            if n >= 3:
                via = np.min(values[:, :, None] + values[None, :, :], axis=1)
                if np.any(values > via + 1e-6):
                    raise ValueError("triangle inequality violated beyond 1e-6")
        self.values = values

    @property
    def n(self) -> int:
        return self.values.shape[0]


def pairwise_distances(conf: Conformer, validate: bool = False) -> DistanceMatrix:
    """Euclidean distances between all atom pairs of a conformer.

    Isometry-invariant by construction; n**2 - n informative entries.
    """
    coords = conf.coords
    if not np.all(np.isfinite(coords)):
        raise ValueError("non-finite coordinates")
    diff = coords[:, None, :] - coords[None, :, :]
    values = np.sqrt(np.einsum("uvk,uvk->uv", diff, diff))
    np.fill_diagonal(values, 0.0)
    return DistanceMatrix(values, validate=validate)


def gamma_encode(d: float, num_frequencies: int = 4) -> np.ndarray:
    """Lift a scalar distance to 2F+1 components:
    (d, sin(d/2^0), cos(d/2^0), ..., sin(d/2^(F-1)), cos(d/2^(F-1))).
    """
    if num_frequencies < 0:
        raise ValueError("number of frequencies must be >= 0")
    if not np.isfinite(d):
        raise ValueError(f"non-finite distance {d}")
    out = np.empty(2 * num_frequencies + 1, dtype=np.float64)
    out[0] = d
    for f in range(num_frequencies):
        scaled = d / (2.0**f)
        out[1 + 2 * f] = np.sin(scaled)
        out[2 + 2 * f] = np.cos(scaled)
    return out


def gamma_encode_array(d: np.ndarray, num_frequencies: int = 4) -> np.ndarray:
    """Vectorized gamma encoding; appends an axis of length 2F+1."""
    if num_frequencies < 0:
        raise ValueError("number of frequencies must be >= 0")
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite distances")
    out = np.empty(d.shape + (2 * num_frequencies + 1,), dtype=np.float64)
    out[..., 0] = d
    for f in range(num_frequencies):
        scaled = d / (2.0**f)
        out[..., 1 + 2 * f] = np.sin(scaled)
        out[..., 2 + 2 * f] = np.cos(scaled)
    return out


def select_conformers(conf_set: ConformerSet, count: int) -> list[Conformer]:
    """The `count` lowest-energy conformers in energy order; when fewer exist,
    the lowest-energy conformer is repeated until the list has length `count`.
    """
    if count < 1:
        raise ValueError(f"conformer count must be >= 1, got {count}")
    ordered = conf_set.conformers  # sorted at construction when energies present
    selected = list(ordered[:count])
    while len(selected) < count:
        selected.append(ordered[0])
    return selected


def boltzmann_weights(energies, temperature: float = DEFAULT_TEMPERATURE_K) -> np.ndarray:
    """Normalized Boltzmann probabilities exp(-(E - min E) / (kB T)).

    Shifting by min E makes the computation overflow-free and leaves the
    result invariant to adding any constant to all energies.
    """
    energies = np.asarray(energies, dtype=np.float64)
    if not np.all(np.isfinite(energies)):
        raise ValueError("non-finite energies")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    shifted = energies - energies.min()
    w = np.exp(-shifted / (KB_KCAL_PER_MOL_K * temperature))
    return w / w.sum()


def sample_conformer(
    conf_set: ConformerSet,
    strategy: str,
    rng: np.random.Generator,
    temperature: float = DEFAULT_TEMPERATURE_K,
) -> Conformer:
    """Draw one conformer: uniformly, or by stored/derived Boltzmann weight."""
    k = len(conf_set)
    if strategy == "uniform":
        return conf_set.conformers[int(rng.integers(k))]
    if strategy == "boltzmann":
        weights = [c.weight for c in conf_set.conformers]
        if all(w is not None for w in weights):
            p = np.asarray(weights, dtype=np.float64)
            p = p / p.sum()
        elif all(c.energy is not None for c in conf_set.conformers):
            p = boltzmann_weights([c.energy for c in conf_set.conformers], temperature)
        else:
            raise ValueError("boltzmann sampling requires stored weights or energies")
        return conf_set.conformers[int(rng.choice(k, p=p))]
    raise ValueError(f"unknown sampling strategy {strategy!r}")
