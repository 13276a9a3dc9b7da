# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled top-k cosine-distance kernel.

Dot products come from a blocked BLAS matmul (one query block against all
candidates), and the k smallest distances per query are then selected by a
pruned insertion scan, so the full distance matrix is never materialized
and nothing beyond the k-slot prefix is ever sorted.

Selection is stable in scan order, so with candidate rows stored in
ascending id order, exact distance ties at the k-th neighbor resolve to
the smaller id. The returned distance values do not depend on tie order
either way.
"""

from libc.math cimport INFINITY

from scipy.linalg.cython_blas cimport dgemm


def topk_distances(const double[:, ::1] xs, const double[:, ::1] queries,
                   Py_ssize_t k, const long[::1] exclude_rows,
                   double[:, ::1] out, double[:, ::1] work):
    """Fill ``out`` (n_queries, k) with ascending distances, +inf padded.

    ``exclude_rows[i]`` names one row of ``xs`` to skip for query i (-1
    for none). ``work`` is (block, n_candidates) scratch whose first
    dimension sets the matmul block size. Distances are clamped to [0, 2].
    """
    cdef Py_ssize_t m = xs.shape[0]
    cdef Py_ssize_t d = xs.shape[1]
    cdef Py_ssize_t t = queries.shape[0]
    cdef Py_ssize_t block = work.shape[0]
    cdef Py_ssize_t start, b, i, j, pos, filled, row
    cdef long skip
    cdef double dist
    cdef int bm, bn, bk, lda, ldb, ldc
    cdef double one = 1.0, zero = 0.0
    cdef char trans_t = b'T', trans_n = b'N'

    for i in range(t):
        for pos in range(k):
            out[i, pos] = INFINITY
    if t == 0 or m == 0:
        return

    start = 0
    while start < t:
        b = block
        if start + b > t:
            b = t - start
        # work[:b] = queries[start:start+b] @ xs.T, phrased for Fortran
        # dgemm over the same row-major buffers
        bm = <int> m
        bn = <int> b
        bk = <int> d
        lda = <int> d
        ldb = <int> d
        ldc = <int> m
        dgemm(&trans_t, &trans_n, &bm, &bn, &bk, &one,
              <double*><void*>&xs[0, 0], &lda,
              <double*><void*>&queries[start, 0], &ldb,
              &zero, &work[0, 0], &ldc)
        for row in range(b):
            i = start + row
            skip = exclude_rows[i]
            filled = 0
            for j in range(m):
                if j == skip:
                    continue
                dist = 1.0 - work[row, j]
                if dist < 0.0:
                    dist = 0.0
                elif dist > 2.0:
                    dist = 2.0
                if filled == k:
                    if dist >= out[i, k - 1]:
                        continue
                    pos = k - 1
                else:
                    pos = filled
                    filled += 1
                # insert into the sorted prefix; strict > keeps earlier
                # rows in front on ties
                while pos > 0 and out[i, pos - 1] > dist:
                    out[i, pos] = out[i, pos - 1]
                    pos -= 1
                out[i, pos] = dist
        start += b
