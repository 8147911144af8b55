import numpy as np
import pytest

from infomax3d.molgraph import Atom, Bond, featurize, make_graph


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def tiny_graph(gid="m", orders=("double", "single")):
    """C=O-H chain, featurized."""
    g = make_graph(gid, [Atom(6), Atom(8), Atom(1)], [Bond(0, 1, orders[0]), Bond(1, 2, orders[1])])
    return featurize(g)


def permute_graph(graph, perm):
    """Relabeled copy (perm[new] = old), featurized if the input was."""
    inv = {int(old): new for new, old in enumerate(perm)}
    g = make_graph(
        graph.id + "_perm",
        [graph.atoms[p] for p in perm],
        [Bond(inv[b.u], inv[b.v], b.order) for b in graph.bonds],
        targets=graph.targets,
    )
    return featurize(g) if graph.atom_features is not None else g


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240)
