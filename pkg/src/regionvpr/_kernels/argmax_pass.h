#ifndef REGIONVPR_ARGMAX_PASS_H
#define REGIONVPR_ARGMAX_PASS_H

#include <stdint.h>

void fused_block_pass(const float *blk, int64_t kq, int64_t nb, int64_t j0,
                      float *row_max, int32_t *row_arg, int32_t *col_arg);

#endif
