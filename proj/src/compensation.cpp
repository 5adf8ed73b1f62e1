#include "stbq/compensation.hpp"

#include "stbq/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <string>

namespace stbq {

std::vector<double> HessianContext::diag_slice(std::size_t col_start, std::size_t col_end) const {
    if (col_start >= col_end || col_end > dim) {
        throw Error(ErrorCode::InvalidArgument, "diag_slice: bad column range");
    }
    std::vector<double> out;
    out.reserve(col_end - col_start);
    for (std::size_t j = col_start; j < col_end; j++) {
        out.push_back(at(j, j));
    }
    return out;
}

HessianContext build_hessian(const Tensor2D & x, double lambda_rel, std::size_t block_size) {
    if (x.rows < 1 || x.cols < 1) {
        throw Error(ErrorCode::InvalidArgument, "build_hessian: empty calibration matrix");
    }
    if (!(lambda_rel > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "build_hessian: lambda_rel must be positive");
    }
    const std::size_t d = x.cols;

    Eigen::MatrixXd xd(x.rows, d);
    for (std::size_t i = 0; i < x.rows; i++) {
        for (std::size_t j = 0; j < d; j++) {
            xd(i, j) = (double)x.at(i, j);
        }
    }
    // feature-space Gram: the l2 layer-output Hessian, one entry per weight column
    Eigen::MatrixXd h = 2.0 * (xd.transpose() * xd);

    double lambda = lambda_rel * h.diagonal().mean();
    if (!(lambda > 0.0)) {
        lambda = lambda_rel;  // all-zero calibration: damping still gives a valid factor
    }

    const int max_retries = 5;
    for (int attempt = 0;; attempt++) {
        Eigen::MatrixXd damped = h;
        damped.diagonal().array() += lambda;
        Eigen::LLT<Eigen::MatrixXd> llt(damped);
        if (llt.info() == Eigen::Success) {
            Eigen::MatrixXd inv =
                llt.solve(Eigen::MatrixXd::Identity((Eigen::Index)d, (Eigen::Index)d));
            Eigen::LLT<Eigen::MatrixXd> llt_inv(inv);
            if (llt_inv.info() == Eigen::Success) {
                Eigen::MatrixXd u = llt_inv.matrixU();  // inv = U^T U
                HessianContext ctx;
                ctx.dim = d;
                ctx.block_size = block_size;
                ctx.lambda_used = lambda;
                ctx.hc.assign(d * d, 0.0);
                for (std::size_t i = 0; i < d; i++) {
                    for (std::size_t j = 0; j < d; j++) {
                        ctx.hc[i * d + j] = u((Eigen::Index)i, (Eigen::Index)j);
                    }
                }
                return ctx;
            }
        }
        if (attempt >= max_retries) {
            throw Error(ErrorCode::NotPositiveDefinite,
                        "build_hessian: factorization failed after escalating lambda to " +
                            std::to_string(lambda));
        }
        lambda *= 10.0;
    }
}

void compensate_block(Tensor2D & w, const Tensor2D & b_block, const HessianContext & ctx,
                      std::size_t col_start, std::size_t col_end) {
    if (col_start >= col_end || col_end > w.cols || ctx.dim != w.cols) {
        throw Error(ErrorCode::InvalidArgument, "compensate_block: bad column range");
    }
    const std::size_t width = col_end - col_start;
    if (b_block.rows != w.rows || b_block.cols != width) {
        throw Error(ErrorCode::ShapeMismatch, "compensate_block: block shape mismatch");
    }
    if (col_end == w.cols) {
        return;  // last block: no tail to update
    }

    // E[i][j] = (W[i][col_start+j] - B[i][j]) / hc[col_start+j, col_start+j]
    std::vector<double> e(w.rows * width);
    for (std::size_t i = 0; i < w.rows; i++) {
        for (std::size_t j = 0; j < width; j++) {
            const std::size_t cj = col_start + j;
            e[i * width + j] =
                ((double)w.at(i, cj) - (double)b_block.at(i, j)) / ctx.at(cj, cj);
        }
    }
    for (std::size_t i = 0; i < w.rows; i++) {
        for (std::size_t t = col_end; t < w.cols; t++) {
            double acc = 0.0;
            for (std::size_t j = 0; j < width; j++) {
                acc += e[i * width + j] * ctx.at(col_start + j, t);
            }
            w.at(i, t) = (float)((double)w.at(i, t) - acc);
        }
    }
}

}  // namespace stbq
