"""2D molecular graphs: parsing, validation, featurization, splitting, augmentation.

The dataset file format is line oriented, one molecule per line, with
``key=value`` fields separated by ``;``:

    id=m1; atoms=C,O; bonds=0-1:1; coords3d=[(0,0,0),(1.2,0,0)]; targets=homo:1.5

Recognized keys: ``id``, ``atoms`` (element symbols), ``bonds``
(``u-v:order`` with order in 1|2|3|ar), optional ``charges`` (per atom),
optional repeated ``coords3d`` (one per conformer, Angstrom), optional
``energies`` (kcal/mol, one per conformer), optional ``weights``
(Boltzmann weights), optional ``targets`` (``name:value``). Lines starting
with ``#`` are comments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .conformers import Conformer, ConformerSet
from .elements import ATOMIC_NUMBER, MAX_ATOMIC_NUMBER, z_to_symbol

BOND_ORDERS = ("single", "double", "triple", "aromatic")
_ORDER_CODE = {"1": "single", "2": "double", "3": "triple", "ar": "aromatic"}
_CODE_ORDER = {v: k for k, v in _ORDER_CODE.items()}


class MoleculeError(ValueError):
    """A molecule violates a structural invariant."""


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries (line, column, message) entries."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"line {ln}, col {col}: {msg}" for ln, col, msg in self.errors)
        super().__init__(f"{len(self.errors)} malformed record(s): {lines}")


@dataclass(frozen=True)
class Atom:
    atomic_number: int
    formal_charge: int = 0
    degree: int = 0  # derived from bonds at graph construction

    def __post_init__(self):
        if not 1 <= self.atomic_number <= MAX_ATOMIC_NUMBER:
            raise MoleculeError(f"atomic number {self.atomic_number} outside [1, {MAX_ATOMIC_NUMBER}]")
        if self.degree < 0:
            raise MoleculeError("negative degree")


@dataclass(frozen=True)
class Bond:
    u: int
    v: int
    order: str = "single"

    def __post_init__(self):
        if self.u == self.v:
            raise MoleculeError(f"self-loop bond {self.u}-{self.v}")
        if self.order not in BOND_ORDERS:
            raise MoleculeError(f"unknown bond order {self.order!r}")


@dataclass
class MolecularGraph:
    """An undirected molecular graph with optional features, targets and conformers."""

    id: str
    atoms: list[Atom]
    bonds: list[Bond]
    atom_features: np.ndarray | None = None
    bond_features: np.ndarray | None = None
    targets: dict[str, float] = field(default_factory=dict)
    conformers: ConformerSet | None = None

    def __post_init__(self):
        self.validate()

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def validate(self):
        n = len(self.atoms)
        if n < 1:
            raise MoleculeError(f"molecule {self.id!r} has no atoms")
        seen = set()
        degree = [0] * n
        for b in self.bonds:
            if not (0 <= b.u < n and 0 <= b.v < n):
                raise MoleculeError(f"molecule {self.id!r}: atom index out of range in bond {b.u}-{b.v}")
            key = (min(b.u, b.v), max(b.u, b.v))
            if key in seen:
                raise MoleculeError(f"molecule {self.id!r}: duplicate bond {b.u}-{b.v}")
            seen.add(key)
            degree[b.u] += 1
            degree[b.v] += 1
        for i, a in enumerate(self.atoms):
            if a.degree != degree[i]:
                raise MoleculeError(f"molecule {self.id!r}: atom {i} degree {a.degree} != incident bonds {degree[i]}")
        if self.atom_features is not None and self.atom_features.shape[0] != n:
            raise MoleculeError(f"molecule {self.id!r}: atom feature rows != atom count")
        if self.bond_features is not None and self.bond_features.shape[0] != len(self.bonds):
            raise MoleculeError(f"molecule {self.id!r}: bond feature rows != bond count")
        if self.conformers is not None:
            for c in self.conformers.conformers:
                if c.coords.shape[0] != n:
                    raise MoleculeError(f"molecule {self.id!r}: conformer has {c.coords.shape[0]} rows, expected {n}")

    def degrees(self) -> np.ndarray:
        return np.array([a.degree for a in self.atoms], dtype=np.int64)


def _with_degrees(atoms: list[Atom], bonds: list[Bond]) -> list[Atom]:
    degree = [0] * len(atoms)
    for b in bonds:
        if 0 <= b.u < len(atoms) and 0 <= b.v < len(atoms):
            degree[b.u] += 1
            degree[b.v] += 1
    return [replace(a, degree=d) for a, d in zip(atoms, degree)]


def make_graph(gid, atoms, bonds, targets=None, conformers=None) -> MolecularGraph:
    """Build a validated graph, deriving atom degrees from the bond list."""
    return MolecularGraph(
        id=gid,
        atoms=_with_degrees(list(atoms), list(bonds)),
        bonds=list(bonds),
        targets=dict(targets or {}),
        conformers=conformers,
    )


@dataclass
class Dataset:
    molecules: list[MolecularGraph]
    target_names: list[str] = field(default_factory=list)
    target_stats: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        names = set(self.target_names)
        for m in self.molecules:
            if set(m.targets) != names:
                raise MoleculeError(
                    f"molecule {m.id!r} target names {sorted(m.targets)} != dataset target names {sorted(names)}"
                )

    def __len__(self):
        return len(self.molecules)

    def ids(self) -> list[str]:
        return [m.id for m in self.molecules]


# ---------------------------------------------------------------------------
# parsing / serialization


def _parse_floats(text, line_no, col, what):
    out = []
    for part in text.split(","):
        part = part.strip()
        try:
            out.append(float(part))
        except ValueError:
            raise _err(line_no, col, f"bad {what} value {part!r}")
    return out


def _err(line_no, col, msg):
    return DatasetFormatError([(line_no, col, msg)])


def _parse_coords(text, line_no, col):
    """Parse '[(x,y,z),(x,y,z)]' into an (n, 3) array."""
    body = text.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise _err(line_no, col, "coords3d must be bracketed: [(x,y,z),...]")
    body = body[1:-1].strip()
    pts = []
    i = 0
    while i < len(body):
        if body[i] in ", \t":
            i += 1
            continue
        if body[i] != "(":
            raise _err(line_no, col + i, f"expected '(' in coords3d, found {body[i]!r}")
        j = body.find(")", i)
        if j < 0:
            raise _err(line_no, col + i, "unterminated coordinate tuple")
        triple = _parse_floats(body[i + 1 : j], line_no, col + i, "coordinate")
        if len(triple) != 3:
            raise _err(line_no, col + i, f"coordinate tuple has {len(triple)} components, expected 3")
        pts.append(triple)
        i = j + 1
    if not pts:
        raise _err(line_no, col, "empty coords3d")
    return np.array(pts, dtype=np.float64)


def _parse_record(line: str, line_no: int) -> MolecularGraph:
    fields = []
    pos = 0
    for chunk in line.split(";"):
        stripped = chunk.strip()
        if stripped:
            col = pos + chunk.index(stripped[0]) + 1  # 1-based column of the field
            if "=" not in stripped:
                raise _err(line_no, col, f"field {stripped!r} is not key=value")
            key, value = stripped.split("=", 1)
            fields.append((key.strip(), value.strip(), col))
        pos += len(chunk) + 1

    seen = {}
    coords_list = []
    for key, value, col in fields:
        if key == "coords3d":
            coords_list.append((value, col))
        elif key in seen:
            raise _err(line_no, col, f"duplicate field {key!r}")
        else:
            seen[key] = (value, col)

    if "id" not in seen:
        raise _err(line_no, 1, "missing id field")
    if "atoms" not in seen:
        raise _err(line_no, 1, "missing atoms field")
    gid = seen["id"][0]

    value, col = seen["atoms"]
    symbols = [s.strip() for s in value.split(",") if s.strip()]
    if not symbols:
        raise _err(line_no, col, "empty atoms field")
    zs = []
    for s in symbols:
        if s not in ATOMIC_NUMBER:
            raise _err(line_no, col, f"unknown element symbol {s!r}")
        zs.append(ATOMIC_NUMBER[s])

    charges = [0] * len(zs)
    if "charges" in seen:
        value, col = seen["charges"]
        vals = _parse_floats(value, line_no, col, "charge")
        if len(vals) != len(zs):
            raise _err(line_no, col, f"{len(vals)} charges for {len(zs)} atoms")
        charges = [int(v) for v in vals]

    bonds = []
    if "bonds" in seen and seen["bonds"][0]:
        value, col = seen["bonds"]
        for tok in value.split(","):
            tok = tok.strip()
            if not tok:
                continue
            try:
                endpoints, order_code = tok.split(":")
                u_s, v_s = endpoints.split("-")
                u, v = int(u_s), int(v_s)
            except ValueError:
                raise _err(line_no, col, f"bad bond token {tok!r}, expected u-v:order")
            if order_code not in _ORDER_CODE:
                raise _err(line_no, col, f"unknown bond order code {order_code!r}")
            if not (0 <= u < len(zs) and 0 <= v < len(zs)):
                raise _err(line_no, col, f"atom index out of range in bond {tok!r}")
            try:
                bonds.append(Bond(u, v, _ORDER_CODE[order_code]))
            except MoleculeError as exc:
                raise _err(line_no, col, str(exc))

    targets = {}
    if "targets" in seen:
        value, col = seen["targets"]
        for tok in value.split(","):
            tok = tok.strip()
            if not tok:
                continue
            if ":" not in tok:
                raise _err(line_no, col, f"bad target token {tok!r}, expected name:value")
            name, val_s = tok.split(":", 1)
            try:
                targets[name.strip()] = float(val_s)
            except ValueError:
                raise _err(line_no, col, f"bad target value {val_s!r}")

    conformers = None
    if coords_list:
        coords = [_parse_coords(v, line_no, c) for v, c in coords_list]
        for arr in coords:
            if arr.shape[0] != len(zs):
                raise _err(line_no, 1, f"conformer has {arr.shape[0]} coordinates for {len(zs)} atoms")
        energies = [None] * len(coords)
        weights = [None] * len(coords)
        if "energies" in seen:
            value, col = seen["energies"]
            energies = _parse_floats(value, line_no, col, "energy")
            if len(energies) != len(coords):
                raise _err(line_no, col, f"{len(energies)} energies for {len(coords)} conformers")
        if "weights" in seen:
            value, col = seen["weights"]
            weights = _parse_floats(value, line_no, col, "weight")
            if len(weights) != len(coords):
                raise _err(line_no, col, f"{len(weights)} weights for {len(coords)} conformers")
        try:
            conformers = ConformerSet(
                [Conformer(c, energy=e, weight=w) for c, e, w in zip(coords, energies, weights)]
            )
        except ValueError as exc:
            raise _err(line_no, 1, str(exc))
    elif "energies" in seen or "weights" in seen:
        raise _err(line_no, seen.get("energies", seen.get("weights"))[1], "energies/weights without coords3d")

    known = {"id", "atoms", "bonds", "charges", "energies", "weights", "targets"}
    for key, (value, col) in seen.items():
        if key not in known:
            raise _err(line_no, col, f"unknown field {key!r}")

    atoms = [Atom(z, formal_charge=q) for z, q in zip(zs, charges)]
    try:
        return make_graph(gid, atoms, bonds, targets=targets, conformers=conformers)
    except MoleculeError as exc:
        raise _err(line_no, 1, str(exc))


def parse_dataset(path) -> Dataset:
    """Parse a dataset file; raises DatasetFormatError listing every malformed record."""
    molecules = []
    errors = []
    ids = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                mol = _parse_record(line, line_no)
            except DatasetFormatError as exc:
                errors.extend(exc.errors)
                continue
            if mol.id in ids:
                errors.append((line_no, 1, f"duplicate molecule id {mol.id!r} (first seen line {ids[mol.id]})"))
                continue
            ids[mol.id] = line_no
            molecules.append(mol)
    if errors:
        raise DatasetFormatError(errors)

    names = sorted(molecules[0].targets) if molecules else []
    return Dataset(molecules=molecules, target_names=names)


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_molecule(mol: MolecularGraph) -> str:
    parts = [f"id={mol.id}", "atoms=" + ",".join(z_to_symbol(a.atomic_number) for a in mol.atoms)]
    if mol.bonds:
        parts.append("bonds=" + ",".join(f"{b.u}-{b.v}:{_CODE_ORDER[b.order]}" for b in mol.bonds))
    if any(a.formal_charge != 0 for a in mol.atoms):
        parts.append("charges=" + ",".join(str(a.formal_charge) for a in mol.atoms))
    if mol.conformers is not None:
        for c in mol.conformers.conformers:
            pts = ",".join(f"({_fmt(x)},{_fmt(y)},{_fmt(z)})" for x, y, z in c.coords)
            parts.append(f"coords3d=[{pts}]")
        energies = [c.energy for c in mol.conformers.conformers]
        if all(e is not None for e in energies):
            parts.append("energies=" + ",".join(_fmt(e) for e in energies))
        weights = [c.weight for c in mol.conformers.conformers]
        if all(w is not None for w in weights):
            parts.append("weights=" + ",".join(_fmt(w) for w in weights))
    if mol.targets:
        parts.append("targets=" + ",".join(f"{k}:{_fmt(v)}" for k, v in sorted(mol.targets.items())))
    return "; ".join(parts)


def serialize_dataset(dataset: Dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        for mol in dataset.molecules:
            fh.write(serialize_molecule(mol) + "\n")


# ---------------------------------------------------------------------------
# featurization

FEATURE_SCHEMES = ("basic",)

_N_ELEMENT_BUCKETS = 36 + 1         # first 36 elements + "other"
_N_DEGREE_BUCKETS = 6 + 1           # 0..5 + ">=6"
_CHARGE_VALUES = (-2, -1, 0, 1, 2)  # + "other"
_N_CHARGE_BUCKETS = len(_CHARGE_VALUES) + 1

ATOM_FEATURE_DIM = _N_ELEMENT_BUCKETS + _N_DEGREE_BUCKETS + _N_CHARGE_BUCKETS
BOND_FEATURE_DIM = len(BOND_ORDERS)


def atom_feature_row(atom: Atom) -> np.ndarray:
    row = np.zeros(ATOM_FEATURE_DIM, dtype=np.float64)
    z_idx = atom.atomic_number - 1 if atom.atomic_number <= 36 else 36
    row[z_idx] = 1.0
    d_idx = atom.degree if atom.degree <= 5 else 6
    row[_N_ELEMENT_BUCKETS + d_idx] = 1.0
    try:
        q_idx = _CHARGE_VALUES.index(atom.formal_charge)
    except ValueError:
        q_idx = len(_CHARGE_VALUES)
    row[_N_ELEMENT_BUCKETS + _N_DEGREE_BUCKETS + q_idx] = 1.0
    return row


def bond_feature_row(bond: Bond) -> np.ndarray:
    row = np.zeros(BOND_FEATURE_DIM, dtype=np.float64)
    row[BOND_ORDERS.index(bond.order)] = 1.0
    return row


def featurize(graph: MolecularGraph, scheme: str = "basic") -> MolecularGraph:
    """Return a copy of the graph with one-hot atom/bond feature matrices attached."""
    if scheme not in FEATURE_SCHEMES:
        raise ValueError(f"unknown feature scheme {scheme!r}; known: {FEATURE_SCHEMES}")
    atom_features = np.stack([atom_feature_row(a) for a in graph.atoms])
    if graph.bonds:
        bond_features = np.stack([bond_feature_row(b) for b in graph.bonds])
    else:
        bond_features = np.zeros((0, BOND_FEATURE_DIM), dtype=np.float64)
    return MolecularGraph(
        id=graph.id,
        atoms=graph.atoms,
        bonds=graph.bonds,
        atom_features=atom_features,
        bond_features=bond_features,
        targets=dict(graph.targets),
        conformers=graph.conformers,
    )


# ---------------------------------------------------------------------------
# splitting

def compute_target_stats(dataset: Dataset) -> dict[str, tuple[float, float]]:
    """Per-target (mean, std) over the dataset; std floored at 1e-12."""
    stats = {}
    for name in dataset.target_names:
        vals = np.array([m.targets[name] for m in dataset.molecules], dtype=np.float64)
        stats[name] = (float(vals.mean()), float(max(vals.std(), 1e-12)))
    return stats


def split_random(dataset: Dataset, ratios, seed: int):
    """Disjoint, exhaustive, seed-deterministic (train, val, test) split.

    Train gets floor(r_tr*n), val floor(r_v*n), test the remainder. Target
    stats of all three outputs come from the training split.
    """
    r_tr, r_v, r_te = ratios
    if min(r_tr, r_v, r_te) <= 0:
        raise ValueError("split ratios must be positive")
    if abs(r_tr + r_v + r_te - 1.0) > 1e-9:
        raise ValueError(f"split ratios sum to {r_tr + r_v + r_te}, expected 1")
    n = len(dataset)
    n_tr = math.floor(r_tr * n)
    n_v = math.floor(r_v * n)
    n_te = n - n_tr - n_v
    if min(n_tr, n_v, n_te) == 0:
        raise ValueError(f"split of {n} molecules with ratios {ratios} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    parts = (perm[:n_tr], perm[n_tr : n_tr + n_v], perm[n_tr + n_v :])
    train = Dataset([dataset.molecules[i] for i in parts[0]], list(dataset.target_names))
    stats = compute_target_stats(train)
    out = []
    for idx in parts:
        ds = Dataset([dataset.molecules[i] for i in idx], list(dataset.target_names))
        ds.target_stats = dict(stats)
        out.append(ds)
    return tuple(out)


# ---------------------------------------------------------------------------
# augmentation

def node_drop(graph: MolecularGraph, conformers: ConformerSet | None, ratio: float, rng: np.random.Generator):
    """Drop floor(ratio*n) atoms uniformly without replacement.

    Incident bonds are removed, indices compacted, and the same rows are
    removed from every conformer point cloud so all pairwise distances of a
    dropped atom disappear. Feature matrices, if present, are dropped
    row-wise too.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"drop ratio {ratio} outside [0, 1)")
    n = graph.n_atoms
    k = math.floor(ratio * n)
    if n - k < 1:
        raise ValueError(f"dropping {k} of {n} atoms would empty the molecule")
    if k == 0:
        return graph, conformers

    dropped = set(rng.choice(n, size=k, replace=False).tolist())
    keep = [i for i in range(n) if i not in dropped]
    remap = {old: new for new, old in enumerate(keep)}

    atoms = [graph.atoms[i] for i in keep]
    bonds = [
        Bond(remap[b.u], remap[b.v], b.order)
        for b in graph.bonds
        if b.u not in dropped and b.v not in dropped
    ]
    new_graph = make_graph(graph.id, atoms, bonds, targets=graph.targets)
    if graph.atom_features is not None:
        new_graph.atom_features = graph.atom_features[keep]
        kept_bond_rows = [
            i for i, b in enumerate(graph.bonds) if b.u not in dropped and b.v not in dropped
        ]
        new_graph.bond_features = (
            graph.bond_features[kept_bond_rows]
            if graph.bond_features is not None
            else None
        )
        new_graph.validate()

    new_set = None
    if conformers is not None:
        new_set = ConformerSet(
            [Conformer(c.coords[keep], energy=c.energy, weight=c.weight) for c in conformers.conformers]
        )
    return new_graph, new_set
