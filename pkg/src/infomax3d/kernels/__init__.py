"""Segment/scatter kernel backend selection.

The compiled Cython backend is used when the extension built successfully;
otherwise (or when INFOMAX3D_PURE_PYTHON is set) the numpy fallback runs.
Both produce identical results; the compiled one is faster on the per-edge
aggregation loops.
"""

import os

import numpy as np

from . import _numpy as numpy_backend

compiled_backend = None
try:
    from . import _ckernels as compiled_backend  # type: ignore[no-redef]
except ImportError:
    pass

if compiled_backend is not None and not os.environ.get("INFOMAX3D_PURE_PYTHON"):
    _active = compiled_backend
else:
    _active = numpy_backend

BACKEND = _active.NAME


def _prep(src, ids):
    src = np.ascontiguousarray(src, dtype=np.float64)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    return src, ids


def segment_sum(src, ids, n):
    src, ids = _prep(src, ids)
    return _active.segment_sum(src, ids, n)


def segment_mean(src, ids, n):
    src, ids = _prep(src, ids)
    return _active.segment_mean(src, ids, n)


def segment_max(src, ids, n):
    src, ids = _prep(src, ids)
    return _active.segment_max(src, ids, n)


def segment_min(src, ids, n):
    src, ids = _prep(src, ids)
    return _active.segment_min(src, ids, n)


def scatter_rows(src, idx, n):
    src, idx = _prep(src, idx)
    return _active.scatter_rows(src, idx, n)


def scatter_args(args, grad, m):
    args = np.ascontiguousarray(args, dtype=np.int64)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    return _active.scatter_args(args, grad, m)
