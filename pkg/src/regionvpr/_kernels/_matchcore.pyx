# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Blocked GEMM + fused argmax core for mutual nearest-neighbor matching.

Computes row and column argmax of q @ c.T without materializing the full
similarity matrix: BLAS sgemm fills one column block at a time and a fused
SIMD pass updates the running maxima in cache.
"""
import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport sgemm

cdef extern from "argmax_pass.h":
    void fused_block_pass(const float *blk, long kq, long nb, long j0,
                          float *row_max, int *row_arg, int *col_arg) nogil


def blocked_argmax(float[:, ::1] q, float[:, ::1] c,
                   float[::1, :] work, float[::1] row_max,
                   int[::1] row_arg, int[::1] col_arg):
    """Fill row_arg (len kq) and col_arg (len kc) with argmax indices of q @ c.T.

    q, c: C-contiguous float32 (kq, d) and (kc, d) with matching d.
    work: F-contiguous (kq, block) scratch; row_max: length-kq scratch.
    Ties resolve to the smallest index, matching np.argmax.
    """
    cdef int kq = q.shape[0], kc = c.shape[0], d = q.shape[1]
    cdef int block = work.shape[1]
    cdef int j0, nb
    cdef float alpha = 1.0, beta = 0.0
    cdef int m, n, k, lda, ldb, ldc
    cdef char *transa = "T"
    cdef char *transb = "N"
    if c.shape[1] != d:
        raise ValueError("descriptor width mismatch")
    if work.shape[0] != kq or row_max.shape[0] != kq or row_arg.shape[0] != kq:
        raise ValueError("workspace sized for a different query")
    if col_arg.shape[0] != kc:
        raise ValueError("col_arg sized for a different candidate")
    with nogil:
        for m in range(kq):
            row_max[m] = -3.4e38
            row_arg[m] = 0
        j0 = 0
        while j0 < kc:
            nb = block if block < kc - j0 else kc - j0
            # column-major S block (kq x nb) = q @ c[j0:j0+nb].T
            m = kq; n = nb; k = d
            lda = d; ldb = d; ldc = kq
            sgemm(transa, transb, &m, &n, &k, &alpha,
                  &q[0, 0], &lda, &c[j0, 0], &ldb, &beta, &work[0, 0], &ldc)
            fused_block_pass(&work[0, 0], kq, nb, j0,
                             &row_max[0], &row_arg[0], &col_arg[0])
            j0 += nb
