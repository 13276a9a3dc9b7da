"""Pure-numpy implementation of the top-k cosine-distance kernel.

Same contract as the compiled version in _topk.pyx; used when the
extension is not built or is disabled via CPKNN_DISABLE_EXT.
"""

from __future__ import annotations

import numpy as np


def topk_distances(
    xs: np.ndarray,
    queries: np.ndarray,
    k: int,
    exclude_rows: np.ndarray | None = None,
) -> np.ndarray:
    """Ascending k smallest cosine distances from each query to rows of xs.

    Returns a (n_queries, k) float64 array padded with +inf where fewer
    than k candidate rows exist. ``exclude_rows`` marks at most one row
    of xs to skip per query (-1 for none). Distances clamped to [0, 2].
    """
    t = queries.shape[0]
    m = xs.shape[0]
    out = np.full((t, k), np.inf)
    if m == 0 or t == 0:
        return out
    dists = 1.0 - queries @ xs.T
    np.clip(dists, 0.0, 2.0, out=dists)
    if exclude_rows is not None:
        rows = np.nonzero(exclude_rows >= 0)[0]
        dists[rows, exclude_rows[rows]] = np.inf
    kk = min(k, m)
    if kk < m:
        sel = np.partition(dists, kk - 1, axis=1)[:, :kk]
        sel.sort(axis=1)
    else:
        dists.sort(axis=1)
        sel = dists
    out[:, :kk] = sel
    return out
