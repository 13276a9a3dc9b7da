"""Top-k distance kernel with a compiled core and a numpy fallback.

The Cython extension is picked at import time when it was built;
setting CPKNN_DISABLE_EXT=1 forces the numpy path. Both backends
implement the identical contract (see fallback.topk_distances) and
agree to within floating-point accumulation order (< 1e-12).
"""

from __future__ import annotations

import os

import numpy as np

from cpknn._kernels import fallback

try:
    from cpknn._kernels import _topk as _compiled
except ImportError:
    _compiled = None

_disabled = os.environ.get("CPKNN_DISABLE_EXT", "") not in ("", "0")
BACKEND: str = "numpy" if (_compiled is None or _disabled) else "compiled"


def topk_distances(
    xs: np.ndarray,
    queries: np.ndarray,
    k: int,
    exclude_rows: np.ndarray | None = None,
) -> np.ndarray:
    """Ascending k smallest cosine distances from each query to rows of xs.

    (n_queries, k) float64, +inf padded; see fallback.topk_distances for
    the full contract. Dispatches to the active backend.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if BACKEND == "compiled":
        t = queries.shape[0]
        if exclude_rows is None:
            excl = np.full(t, -1, dtype=np.int64)
        else:
            excl = np.ascontiguousarray(exclude_rows, dtype=np.int64)
        out = np.empty((t, k))
        # scratch for one matmul block of the distance matrix (~32 MB cap)
        block = min(max(t, 1), max(1, 4_000_000 // max(xs.shape[0], 1)))
        work = np.empty((block, xs.shape[0]))
        _compiled.topk_distances(xs, queries, k, excl, out, work)
        return out
    return fallback.topk_distances(xs, queries, k, exclude_rows)
