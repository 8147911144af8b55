"""Contrastive objectives over paired 2D/3D embedding batches, the set
similarities for multi-embedding variants, and the distance-prediction head.

All loss kinds share the same structure: the positive term(s) of molecule i
sit in the numerator, the denominator sums over the other molecules k != i
only (the positive pair is excluded, matching the trained objective exactly;
`include_positive` restores the conventional form for ablations). Log-sum-exp
is stabilized by subtracting the row max, so small temperatures stay finite.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import tensor as T

LOSS_KINDS = ("ntxent_eq1", "multi3d_eq2", "multi2d_simall", "multi2d_simmax", "distance_mse")

_NEG_INF = -1e30  # additive mask; finite so no nan can leak through exp


def _lift(x) -> T.Tensor:
    return x if isinstance(x, T.Tensor) else T.Tensor(x)


def _check_nonzero_rows(data: np.ndarray, name: str):
    flat = data.reshape(-1, data.shape[-1])
    norms = np.sqrt((flat * flat).sum(axis=1))
    if np.any(norms == 0.0):
        raise ValueError(f"{name} contains a zero vector; cosine similarity is undefined")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{name} contains non-finite entries")


def _row_normalize(z: T.Tensor) -> T.Tensor:
    sq = T.sum_reduce(T.mul(z, z), axis=1, keepdims=True)
    return T.div(z, T.sqrt(sq))


def cosine_sim(a, b) -> T.Tensor:
    """Cosine similarity of two non-zero vectors."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ValueError(f"cosine_sim expects two equal-length vectors, got {a.data.shape} and {b.data.shape}")
    _check_nonzero_rows(a.data[None, :], "a")
    _check_nonzero_rows(b.data[None, :], "b")
    dot = T.sum_reduce(T.mul(a, b))
    return T.div(dot, T.mul(ad.l2_norm(a), ad.l2_norm(b)))


def _masked_lse(scores: T.Tensor, mask: np.ndarray) -> T.Tensor:
    """Row-wise log-sum-exp of scores + mask (mask uses 0 / -1e30 entries)."""
    s = T.add(scores, T.Tensor(mask))
    m = T.max_reduce(s, axis=1, keepdims=True)
    shifted = T.sub(s, m)
    lse = T.log(T.sum_reduce(T.exp(shifted), axis=1))
    return T.add(lse, T.reshape(m, (m.data.shape[0],)))


def ntxent_eq1(za, zb, tau: float, include_positive: bool = False) -> T.Tensor:
    """Contrastive loss over N positive pairs with negatives-only denominator:

        -(1/N) sum_i log[ exp(sim(za_i, zb_i)/tau) / sum_{k != i} exp(sim(za_i, zb_k)/tau) ]
    """
    za, zb = _lift(za), _lift(zb)
    if za.data.ndim != 2 or zb.data.ndim != 2 or za.data.shape != zb.data.shape:
        raise ValueError(f"expected matching N x d_z batches, got {za.data.shape} and {zb.data.shape}")
    n = za.data.shape[0]
    if n < 2:
        raise ValueError(f"contrastive loss needs at least 2 molecules for a negative pair, got {n}")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    _check_nonzero_rows(za.data, "za")
    _check_nonzero_rows(zb.data, "zb")

    sims = T.matmul(_row_normalize(za), T.transpose(_row_normalize(zb)))
    scores = T.div(sims, tau)
    eye = np.eye(n)
    pos = T.sum_reduce(T.mul(scores, T.Tensor(eye)), axis=1)
    neg_mask = np.zeros((n, n)) if include_positive else _NEG_INF * eye
    denom = _masked_lse(scores, neg_mask)
    return T.mean_reduce(T.sub(denom, pos))


def multi3d_eq2(za, zb_sets, tau: float, include_positive: bool = False) -> T.Tensor:
    """Multi-conformer contrastive loss: numerator sums the c positives of
    molecule i, denominator sums all conformer embeddings of the other
    molecules:

        -(1/N) sum_i log[ sum_j exp(sim(za_i, zb_{i,j})/tau)
                          / sum_{k != i} sum_j exp(sim(za_i, zb_{k,j})/tau) ]
    """
    za, zb_sets = _lift(za), _lift(zb_sets)
    if za.data.ndim != 2 or zb_sets.data.ndim != 3:
        raise ValueError(f"expected (N,d) and (N,c,d) batches, got {za.data.shape} and {zb_sets.data.shape}")
    n, d = za.data.shape
    n_b, c, d_b = zb_sets.data.shape
    if n != n_b or d != d_b:
        raise ValueError(f"batch shapes disagree: {za.data.shape} vs {zb_sets.data.shape}")
    if n < 2:
        raise ValueError(f"contrastive loss needs at least 2 molecules for a negative pair, got {n}")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    _check_nonzero_rows(za.data, "za")
    _check_nonzero_rows(zb_sets.data, "zb_sets")

    zb_flat = T.reshape(zb_sets, (n * c, d))
    sims = T.matmul(_row_normalize(za), T.transpose(_row_normalize(zb_flat)))  # (N, N*c)
    scores = T.div(sims, tau)
    block = np.repeat(np.eye(n), c, axis=1)  # 1 where column belongs to molecule i
    pos_mask = _NEG_INF * (1.0 - block)
    neg_mask = np.zeros((n, n * c)) if include_positive else _NEG_INF * block
    num = _masked_lse(scores, pos_mask)
    denom = _masked_lse(scores, neg_mask)
    return T.mean_reduce(T.sub(denom, num))


def sim_all(set_a, set_b) -> T.Tensor:
    """Sum of all pairwise cosine similarities between two same-size sets."""
    set_a, set_b = _lift(set_a), _lift(set_b)
    if set_a.data.ndim != 2 or set_b.data.ndim != 2 or set_a.data.shape != set_b.data.shape:
        raise ValueError(f"expected matching c x d sets, got {set_a.data.shape} and {set_b.data.shape}")
    _check_nonzero_rows(set_a.data, "set_a")
    _check_nonzero_rows(set_b.data, "set_b")
    sims = T.matmul(_row_normalize(set_a), T.transpose(_row_normalize(set_b)))
    return T.sum_reduce(sims)


def sim_max(set_a, set_b) -> T.Tensor:
    """For every vector of set_b, the best-matching cosine similarity over
    set_a, summed; an upper bound on the optimal matching (not symmetric)."""
    set_a, set_b = _lift(set_a), _lift(set_b)
    if set_a.data.ndim != 2 or set_b.data.ndim != 2 or set_a.data.shape != set_b.data.shape:
        raise ValueError(f"expected matching c x d sets, got {set_a.data.shape} and {set_b.data.shape}")
    _check_nonzero_rows(set_a.data, "set_a")
    _check_nonzero_rows(set_b.data, "set_b")
    sims = T.matmul(_row_normalize(set_a), T.transpose(_row_normalize(set_b)))  # (c_a, c_b)
    return T.sum_reduce(T.max_reduce(sims, axis=0))


def _set_similarity_matrix(za_sets: T.Tensor, zb_sets: T.Tensor, kind: str) -> T.Tensor:
    """(N, N) matrix of set similarities between every 2D set i and 3D set k."""
    n, c, d = za_sets.data.shape
    a_flat = _row_normalize(T.reshape(za_sets, (n * c, d)))
    b_flat = _row_normalize(T.reshape(zb_sets, (n * c, d)))
    sims = T.reshape(T.matmul(a_flat, T.transpose(b_flat)), (n, c, n, c))
    if kind == "sim_all":
        return T.sum_reduce(T.sum_reduce(sims, axis=3), axis=1)
    # sim_max: best 2D vector (axis 1) for every 3D vector, summed over them
    return T.sum_reduce(T.max_reduce(sims, axis=1), axis=2)


def multi2d_loss(kind: str, za_sets, zb_sets, tau: float, include_positive: bool = False) -> T.Tensor:
    """Contrastive loss with the cosine similarity replaced by a set
    similarity (`sim_all` or `sim_max`) between per-molecule embedding sets."""
    if kind not in ("sim_all", "sim_max"):
        raise ValueError(f"unknown set similarity {kind!r}")
    za_sets, zb_sets = _lift(za_sets), _lift(zb_sets)
    if za_sets.data.ndim != 3 or zb_sets.data.ndim != 3 or za_sets.data.shape != zb_sets.data.shape:
        raise ValueError(
            f"expected matching N x c x d batches, got {za_sets.data.shape} and {zb_sets.data.shape}"
        )
    n = za_sets.data.shape[0]
    if n < 2:
        raise ValueError(f"contrastive loss needs at least 2 molecules for a negative pair, got {n}")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    _check_nonzero_rows(za_sets.data, "za_sets")
    _check_nonzero_rows(zb_sets.data, "zb_sets")

    scores = T.div(_set_similarity_matrix(za_sets, zb_sets, kind), tau)
    eye = np.eye(n)
    pos = T.sum_reduce(T.mul(scores, T.Tensor(eye)), axis=1)
    neg_mask = np.zeros((n, n)) if include_positive else _NEG_INF * eye
    denom = _masked_lse(scores, neg_mask)
    return T.mean_reduce(T.sub(denom, pos))


class DistanceHead:
    """Symmetric, strictly positive pairwise distance predictor:
    softplus(U(h_v || h_u) + U(h_u || h_v)) with a scalar-valued MLP U."""

    def __init__(self, store, d_h: int, hidden_layers: int = 1, name: str = "dist_head"):
        dims = [2 * d_h] + [d_h] * hidden_layers + [1]
        self.u = ad.MLP(store, name, dims)

    def __call__(self, h, pair_u, pair_v, train: bool = False, rng=None) -> T.Tensor:
        h_u = T.gather_rows(h, np.asarray(pair_u, dtype=np.int64))
        h_v = T.gather_rows(h, np.asarray(pair_v, dtype=np.int64))
        uv = self.u(T.concat([h_v, h_u], axis=1), train=train, rng=rng)
        vu = self.u(T.concat([h_u, h_v], axis=1), train=train, rng=rng)
        return T.reshape(T.softplus(T.add(uv, vu)), (h_u.data.shape[0],))


def distance_mse(pred: T.Tensor, true_distances) -> T.Tensor:
    """Mean squared error over the (unordered) atom pairs of a molecule."""
    pred = _lift(pred)
    true_distances = np.asarray(true_distances, dtype=np.float64)
    if pred.data.shape != true_distances.shape:
        raise ValueError(
            f"pair sets disagree: {pred.data.shape[0]} predictions vs {true_distances.shape[0]} distances"
        )
    diff = T.sub(pred, T.Tensor(true_distances))
    return T.mean_reduce(T.mul(diff, diff))
