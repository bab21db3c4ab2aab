/* Fused row/col argmax over one column block of a similarity matrix.
 *
 * The block is column-major (Fortran order, leading dimension kq) holding
 * similarities S[i, j0+jj] for jj in [0, nb).  Running row maxima/argmax are
 * updated in place; column argmax is final per column.  Strict > comparisons
 * reproduce NumPy's first-occurrence tie rule exactly, provided columns are
 * visited in ascending j order.  Inputs must be finite.
 */
#include "argmax_pass.h"

#if defined(__AVX512F__)
#include <immintrin.h>

void fused_block_pass(const float *blk, int64_t kq, int64_t nb, int64_t j0,
                      float *row_max, int32_t *row_arg, int32_t *col_arg)
{
    static const int32_t lane_off[16] = {0, 1, 2, 3, 4, 5, 6, 7,
                                         8, 9, 10, 11, 12, 13, 14, 15};
    const __m512i lanes = _mm512_loadu_si512((const void *)lane_off);
    for (int64_t jj = 0; jj < nb; jj++) {
        const float *col = blk + jj * kq;
        const int32_t j = (int32_t)(j0 + jj);
        const __m512i jvec = _mm512_set1_epi32(j);
        __m512 cbest = _mm512_set1_ps(-__builtin_inff());
        __m512i cidx = _mm512_setzero_si512();
        int64_t i = 0;
        for (; i + 16 <= kq; i += 16) {
            __m512 v = _mm512_loadu_ps(col + i);
            __m512 rm = _mm512_loadu_ps(row_max + i);
            __mmask16 m = _mm512_cmp_ps_mask(v, rm, _CMP_GT_OQ);
            _mm512_mask_storeu_ps(row_max + i, m, v);
            _mm512_mask_storeu_epi32(row_arg + i, m, jvec);
            __mmask16 mc = _mm512_cmp_ps_mask(v, cbest, _CMP_GT_OQ);
            cbest = _mm512_mask_mov_ps(cbest, mc, v);
            __m512i ivec = _mm512_add_epi32(_mm512_set1_epi32((int32_t)i), lanes);
            cidx = _mm512_mask_mov_epi32(cidx, mc, ivec);
        }
        if (i < kq) {
            __mmask16 tail = (__mmask16)((1u << (kq - i)) - 1u);
            __m512 v = _mm512_maskz_loadu_ps(tail, col + i);
            __m512 rm = _mm512_maskz_loadu_ps(tail, row_max + i);
            __mmask16 m = _mm512_mask_cmp_ps_mask(tail, v, rm, _CMP_GT_OQ);
            _mm512_mask_storeu_ps(row_max + i, m, v);
            _mm512_mask_storeu_epi32(row_arg + i, m, jvec);
            __mmask16 mc = _mm512_mask_cmp_ps_mask(tail, v, cbest, _CMP_GT_OQ);
            cbest = _mm512_mask_mov_ps(cbest, mc, v);
            __m512i ivec = _mm512_add_epi32(_mm512_set1_epi32((int32_t)i), lanes);
            cidx = _mm512_mask_mov_epi32(cidx, mc, ivec);
        }
        /* Smallest index among lanes attaining the column max. */
        float h = _mm512_reduce_max_ps(cbest);
        __mmask16 at = _mm512_cmp_ps_mask(cbest, _mm512_set1_ps(h), _CMP_EQ_OQ);
        col_arg[j0 + jj] = _mm512_mask_reduce_min_epi32(at, cidx);
    }
}

#else /* portable scalar version */

void fused_block_pass(const float *blk, int64_t kq, int64_t nb, int64_t j0,
                      float *row_max, int32_t *row_arg, int32_t *col_arg)
{
    for (int64_t jj = 0; jj < nb; jj++) {
        const float *col = blk + jj * kq;
        const int32_t j = (int32_t)(j0 + jj);
        float cb = col[0];
        int32_t ci = 0;
        for (int64_t i = 0; i < kq; i++) {
            float v = col[i];
            if (v > row_max[i]) { row_max[i] = v; row_arg[i] = j; }
            if (v > cb) { cb = v; ci = (int32_t)i; }
        }
        col_arg[j0 + jj] = ci;
    }
}

#endif
