#pragma once

#include "stbq/tensor.hpp"

#include <cstddef>
#include <vector>

namespace stbq {

// Upper Cholesky factor of the damped inverse Hessian: hc is dim x dim
// row-major with U^T U = (H + lambda I)^{-1}, H = 2 X^T X over the
// calibration features. The diagonal is strictly positive.
struct HessianContext {
    std::size_t dim = 0;
    std::vector<double> hc;
    double lambda_used = 0.0;
    std::size_t block_size = 0;

    double at(std::size_t i, std::size_t j) const { return hc[i * dim + j]; }
    // diag slice for one column block, as the quantizer consumes it
    std::vector<double> diag_slice(std::size_t col_start, std::size_t col_end) const;
};

// lambda starts at lambda_rel * mean(diag H) and is escalated x10 (up to
// 5 retries) whenever either factorization is not positive definite; throws
// NotPositiveDefinite once retries run out.
HessianContext build_hessian(const Tensor2D & x, double lambda_rel, std::size_t block_size);

// Block-wise OBC update: E = (W_blk - B_blk) with column j scaled by
// 1/hc[j,j], then W[:, col_end:] -= E * hc[block rows, tail columns].
// Columns before col_end are untouched.
void compensate_block(Tensor2D & w, const Tensor2D & b_block, const HessianContext & ctx,
                      std::size_t col_start, std::size_t col_end);

}  // namespace stbq
