"""Pure-numpy segment/scatter kernels (fallback backend).

Segment functions require `ids` sorted non-decreasing; scatter functions
accept any index order. Empty segments yield zeros (and -1 arg indices).

Sum/mean accumulate each segment's column values in ascending value order
(padding zeros are exact no-ops under IEEE addition), so results depend
only on the value multiset per segment - exactly permutation invariant and
bitwise identical to the compiled backend.
"""

import numpy as np

NAME = "numpy"


def _segment_layout(ids, n):
    counts = np.bincount(ids, minlength=n).astype(np.int64) if ids.size else np.zeros(n, dtype=np.int64)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return counts, starts


def segment_sum(src, ids, n):
    d = src.shape[1]
    if ids.size == 0:
        return np.zeros((n, d), dtype=np.float64)
    counts, starts = _segment_layout(ids, n)
    max_c = int(counts.max())
    buf = np.zeros((n, max_c, d), dtype=np.float64)
    pos = np.arange(ids.size, dtype=np.int64) - starts[ids]
    buf[ids, pos] = src
    buf.sort(axis=1)
    # sequential left-to-right accumulation of the sorted values
    return np.cumsum(buf, axis=1)[:, -1, :]


def segment_mean(src, ids, n):
    out = segment_sum(src, ids, n)
    counts, _ = _segment_layout(ids, n) if ids.size else (np.zeros(n, dtype=np.int64), None)
    denom = np.maximum(counts, 1).astype(np.float64)
    out = out / denom[:, None]
    return out, counts


def _segment_extreme(src, ids, n, ufunc):
    d = src.shape[1]
    vals = np.zeros((n, d), dtype=np.float64)
    args = np.full((n, d), -1, dtype=np.int64)
    if ids.size == 0:
        return vals, args
    counts, starts = _segment_layout(ids, n)
    nonempty = counts > 0
    ne_starts = starts[nonempty]
    vals[nonempty] = ufunc.reduceat(src, ne_starts, axis=0)
    # first row attaining the extreme, per segment and column
    row_idx = np.arange(src.shape[0], dtype=np.int64)[:, None]
    hit = src == vals[ids]
    cand = np.where(hit, row_idx, src.shape[0])
    args[nonempty] = np.minimum.reduceat(cand, ne_starts, axis=0)
    return vals, args


def segment_max(src, ids, n):
    return _segment_extreme(src, ids, n, np.maximum)


def segment_min(src, ids, n):
    return _segment_extreme(src, ids, n, np.minimum)


def scatter_rows(src, idx, n):
    """out[idx[e]] += src[e]; idx in any order."""
    out = np.zeros((n, src.shape[1]), dtype=np.float64)
    if idx.size:
        np.add.at(out, idx, src)
    return out


def scatter_args(args, grad, m):
    """out[args[s, c], c] += grad[s, c] wherever args >= 0."""
    out = np.zeros((m, grad.shape[1]), dtype=np.float64)
    if args.size == 0:
        return out
    rows = args.ravel()
    mask = rows >= 0
    cols = np.tile(np.arange(grad.shape[1], dtype=np.int64), args.shape[0])
    np.add.at(out, (rows[mask], cols[mask]), grad.ravel()[mask])
    return out
