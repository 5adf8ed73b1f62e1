#include "stbq/quantizer.hpp"

#include "stbq/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace stbq {

BinaryAtom binarize_rowwise(const Tensor2D & w, const std::vector<uint8_t> & support) {
    if (support.size() != w.size()) {
        throw Error(ErrorCode::ShapeMismatch, "binarize_rowwise: support size " +
                                                  std::to_string(support.size()) + " vs matrix " +
                                                  std::to_string(w.size()));
    }
    BinaryAtom atom;
    atom.rows = w.rows;
    atom.cols = w.cols;
    atom.alpha.assign(w.rows, 0.0f);
    atom.signs.assign(w.size(), 0);
    atom.support = support;
    for (std::size_t i = 0; i < w.rows; i++) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t j = 0; j < w.cols; j++) {
            const std::size_t k = i * w.cols + j;
            if (!support[k]) {
                continue;
            }
            const float v = w.data[k];
            sum += std::fabs((double)v);
            count++;
            atom.signs[k] = v >= 0.0f ? 1 : -1;  // sign(0) = +1
        }
        if (count > 0) {
            atom.alpha[i] = (float)(sum / (double)count);
        }
    }
    return atom;
}

// squared error of reconstructing the supported entries as alpha * sign
static double binarize_error(const Tensor2D & w, const std::vector<uint8_t> & support) {
    double err = 0.0;
    for (std::size_t i = 0; i < w.rows; i++) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t j = 0; j < w.cols; j++) {
            const std::size_t k = i * w.cols + j;
            if (support[k]) {
                sum += std::fabs((double)w.data[k]);
                count++;
            }
        }
        if (count == 0) {
            continue;
        }
        const double alpha = (double)(float)(sum / (double)count);
        for (std::size_t j = 0; j < w.cols; j++) {
            const std::size_t k = i * w.cols + j;
            if (support[k]) {
                const double d = std::fabs((double)w.data[k]) - alpha;
                err += d * d;
            }
        }
    }
    return err;
}

std::vector<uint8_t> apply_nm_mask(const ScoreMatrix & scores, int n, int m,
                                   std::size_t bank_offset) {
    nm_validate({n, m});
    std::vector<uint8_t> mask(scores.rows * scores.cols, 0);
    std::vector<std::size_t> idx;
    idx.reserve(m);
    // first bank covering column 0 of this slice, in absolute coordinates
    const std::size_t first_bank = bank_offset / m * m;
    for (std::size_t i = 0; i < scores.rows; i++) {
        for (std::size_t bank = first_bank; bank < bank_offset + scores.cols; bank += m) {
            const std::size_t lo = bank > bank_offset ? bank - bank_offset : 0;
            const std::size_t hi = std::min<std::size_t>(scores.cols, bank + m - bank_offset);
            idx.clear();
            for (std::size_t j = lo; j < hi; j++) {
                idx.push_back(j);
            }
            const std::size_t keep = std::min<std::size_t>(n, idx.size());
            std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                const float sa = scores.at(i, a), sb = scores.at(i, b);
                return sa != sb ? sa > sb : a < b;
            });
            for (std::size_t t = 0; t < keep; t++) {
                mask[i * scores.cols + idx[t]] = 1;
            }
        }
    }
    return mask;
}

std::vector<uint32_t> select_salient(const Tensor2D & w, const std::vector<uint8_t> & mask,
                                     const std::vector<double> & hc_diag, double budget_cap) {
    if (mask.size() != w.size() || hc_diag.size() != w.cols) {
        throw Error(ErrorCode::ShapeMismatch, "select_salient: mask/diag shape mismatch");
    }
    for (std::size_t j = 0; j < hc_diag.size(); j++) {
        if (!(hc_diag[j] > 0.0) || !std::isfinite(hc_diag[j])) {
            throw Error(ErrorCode::DegenerateHessian,
                        "select_salient: nonpositive Cholesky diagonal at column " +
                            std::to_string(j));
        }
    }

    // column saliency over kept entries: sum_i w_ij^2 / d_j^2
    std::vector<double> saliency(w.cols, 0.0);
    for (std::size_t i = 0; i < w.rows; i++) {
        for (std::size_t j = 0; j < w.cols; j++) {
            const std::size_t k = i * w.cols + j;
            if (mask[k]) {
                const double v = (double)w.data[k];
                saliency[j] += v * v / (hc_diag[j] * hc_diag[j]);
            }
        }
    }
    std::vector<uint32_t> order(w.cols);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        return saliency[a] != saliency[b] ? saliency[a] > saliency[b] : a < b;
    });

    std::size_t k_max = (std::size_t)std::ceil(budget_cap * (double)w.cols);
    k_max = std::clamp<std::size_t>(k_max, 1, w.cols);

    // grow the salient prefix one ranked column at a time, scoring each split
    std::vector<uint8_t> sal_sup(w.size(), 0);
    std::vector<uint8_t> ns_sup = mask;
    std::size_t best_n = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t prefix = 1; prefix <= k_max; prefix++) {
        const uint32_t col = order[prefix - 1];
        for (std::size_t i = 0; i < w.rows; i++) {
            const std::size_t k = i * w.cols + col;
            if (mask[k]) {
                sal_sup[k] = 1;
                ns_sup[k] = 0;
            }
        }
        const double err = binarize_error(w, sal_sup) + binarize_error(w, ns_sup);
        if (err < best_err) {
            best_err = err;
            best_n = prefix;
        }
    }

    std::vector<uint32_t> out(order.begin(), order.begin() + best_n);
    std::sort(out.begin(), out.end());
    return out;
}

std::pair<BinaryAtom, BinaryAtom> residual_binarize(const Tensor2D & w,
                                                    const std::vector<uint8_t> & support) {
    BinaryAtom base = binarize_rowwise(w, support);
    Tensor2D residual(w.rows, w.cols);
    for (std::size_t i = 0; i < w.rows; i++) {
        for (std::size_t j = 0; j < w.cols; j++) {
            const std::size_t k = i * w.cols + j;
            if (support[k]) {
                residual.data[k] =
                    (float)((double)w.data[k] - (double)base.alpha[i] * (double)base.signs[k]);
            }
        }
    }
    BinaryAtom res = binarize_rowwise(residual, support);
    return {std::move(base), std::move(res)};
}

TrisectionParams trisection_search(const Tensor2D & w, const std::vector<uint8_t> & support,
                                   float sigma_ratio, int grid_points, double * achieved_err) {
    if (support.size() != w.size()) {
        throw Error(ErrorCode::ShapeMismatch, "trisection_search: support shape mismatch");
    }
    if (!(sigma_ratio > 1.0f)) {
        throw Error(ErrorCode::InvalidArgument, "trisection_search: sigma_ratio must be > 1");
    }
    if (grid_points < 2) {
        throw Error(ErrorCode::InvalidArgument, "trisection_search: need at least 2 grid points");
    }
    double maxabs = -1.0;
    double total_sq = 0.0;
    for (std::size_t k = 0; k < w.size(); k++) {
        if (support[k]) {
            const double a = std::fabs((double)w.data[k]);
            maxabs = std::max(maxabs, a);
            total_sq += a * a;
        }
    }
    if (maxabs < 0.0) {
        throw Error(ErrorCode::InvalidArgument, "trisection_search: empty support");
    }

    const double sigma = (double)sigma_ratio;
    // per-row |w| sums and counts for the three magnitude bands
    std::vector<double> sum(3 * w.rows);
    std::vector<std::size_t> cnt(3 * w.rows);

    double best_err = std::numeric_limits<double>::infinity();
    double best_p1 = -1.0, best_p2 = -1.0;
    bool any = false;
    for (int g = 0; g < grid_points; g++) {
        const double f = 0.1 + 0.8 * (double)g / (double)(grid_points - 1);
        // scale-free feasibility: p2 <= 0.9 max|w|  <=>  sigma f <= 0.9
        if (sigma * f > 0.9 + 1e-12) {
            continue;
        }
        any = true;
        const double p1 = f * maxabs;
        const double p2 = sigma * p1;
        std::fill(sum.begin(), sum.end(), 0.0);
        std::fill(cnt.begin(), cnt.end(), 0u);
        for (std::size_t i = 0; i < w.rows; i++) {
            for (std::size_t j = 0; j < w.cols; j++) {
                const std::size_t k = i * w.cols + j;
                if (!support[k]) {
                    continue;
                }
                const double a = std::fabs((double)w.data[k]);
                const int region = a > p2 ? 0 : (a > p1 ? 1 : 2);
                sum[region * w.rows + i] += a;
                cnt[region * w.rows + i]++;
            }
        }
        // err = sum w^2 - sum_regions sum_rows S^2/c  (alpha = S/c per row)
        double err = total_sq;
        for (std::size_t t = 0; t < sum.size(); t++) {
            if (cnt[t] > 0) {
                err -= sum[t] * sum[t] / (double)cnt[t];
            }
        }
        if (err < best_err) {
            best_err = err;
            best_p1 = p1;
            best_p2 = p2;
        }
    }
    if (!any) {
        throw Error(ErrorCode::NoFeasibleCandidate,
                    "trisection_search: every break-point candidate exceeds 0.9 max|w| (sigma " +
                        std::to_string(sigma_ratio) + ")");
    }
    if (achieved_err) {
        *achieved_err = best_err;
    }
    TrisectionParams params;
    params.p1 = (float)best_p1;
    params.p2 = (float)best_p2;
    params.sigma_ratio = sigma_ratio;
    return params;
}

TrisectionResult trisection_quantize(const Tensor2D & w, const std::vector<uint8_t> & support,
                                     const TrisectionParams & params) {
    if (support.size() != w.size()) {
        throw Error(ErrorCode::ShapeMismatch, "trisection_quantize: support shape mismatch");
    }
    TrisectionResult res;
    res.codes.assign(w.size(), RegionCode::Pruned);
    std::vector<uint8_t> sup_sparse(w.size(), 0), sup_inter(w.size(), 0), sup_dense(w.size(), 0);
    const double p1 = (double)params.p1;
    const double p2 = (double)params.p2;
    for (std::size_t k = 0; k < w.size(); k++) {
        if (!support[k]) {
            continue;
        }
        const double a = std::fabs((double)w.data[k]);
        if (a > p2) {
            sup_sparse[k] = 1;
            res.codes[k] = RegionCode::Sparse;
        } else if (a > p1) {
            sup_inter[k] = 1;
            res.codes[k] = RegionCode::Intermediate;
        } else {
            sup_dense[k] = 1;
            res.codes[k] = RegionCode::Dense;
        }
    }
    res.sparse = binarize_rowwise(w, sup_sparse);
    res.intermediate = binarize_rowwise(w, sup_inter);
    res.dense = binarize_rowwise(w, sup_dense);
    return res;
}

BlockQuantResult quantize_block(const Tensor2D & w_layer, std::size_t col_start,
                                std::size_t col_end, const ScoreMatrix & scores, NMRatio nm,
                                const std::vector<double> & hc_diag, const QuantizerParams & params,
                                BlockStageTimes * times) {
    if (col_start >= col_end || col_end > w_layer.cols) {
        throw Error(ErrorCode::InvalidArgument, "quantize_block: bad column range");
    }
    if (scores.rows != w_layer.rows || scores.cols != w_layer.cols) {
        throw Error(ErrorCode::ShapeMismatch, "quantize_block: score shape mismatch");
    }
    const std::size_t width = col_end - col_start;
    if (hc_diag.size() != width) {
        throw Error(ErrorCode::ShapeMismatch, "quantize_block: Cholesky diagonal slice mismatch");
    }

    BlockQuantResult blk;
    blk.col_start = col_start;
    blk.col_end = col_end;
    blk.rows = w_layer.rows;

    Tensor2D w_block(w_layer.rows, width);
    ScoreMatrix s_block(w_layer.rows, width);
    for (std::size_t i = 0; i < w_layer.rows; i++) {
        for (std::size_t j = 0; j < width; j++) {
            w_block.at(i, j) = w_layer.at(i, col_start + j);
            s_block.at(i, j) = scores.at(i, col_start + j);
        }
    }

    const auto t0 = std::chrono::steady_clock::now();
    auto ms_since = [&t0](std::chrono::steady_clock::time_point t) {
        return std::chrono::duration<double, std::milli>(t - t0).count();
    };

    auto t_mask = std::chrono::steady_clock::now();
    blk.nm_mask = apply_nm_mask(s_block, nm.n, nm.m, col_start);
    auto t_sal = std::chrono::steady_clock::now();
    blk.salient_cols = select_salient(w_block, blk.nm_mask, hc_diag, params.salient_cap);
    auto t_sal_end = std::chrono::steady_clock::now();
    if (times) {
        times->mask_start_ms = ms_since(t_mask);
        times->mask_ms = ms_since(t_sal) - times->mask_start_ms;
        times->salient_start_ms = ms_since(t_sal);
        times->salient_ms = ms_since(t_sal_end) - times->salient_start_ms;
    }

    std::vector<uint8_t> is_salient_col(width, 0);
    for (uint32_t c : blk.salient_cols) {
        is_salient_col[c] = 1;
    }
    std::vector<uint8_t> sal_sup(w_block.size(), 0), ns_sup(w_block.size(), 0);
    std::size_t ns_count = 0;
    for (std::size_t i = 0; i < w_block.rows; i++) {
        for (std::size_t j = 0; j < width; j++) {
            const std::size_t k = i * width + j;
            if (!blk.nm_mask[k]) {
                continue;
            }
            if (is_salient_col[j]) {
                sal_sup[k] = 1;
            } else {
                ns_sup[k] = 1;
                ns_count++;
            }
        }
    }

    auto [base, resid] = residual_binarize(w_block, sal_sup);
    blk.salient_base = std::move(base);
    blk.salient_residual = std::move(resid);

    auto t_tri = std::chrono::steady_clock::now();
    TrisectionResult tri;
    if (ns_count > 0) {
        blk.trisection =
            trisection_search(w_block, ns_sup, params.sigma_ratio, params.grid_points);
        tri = trisection_quantize(w_block, ns_sup, blk.trisection);
    } else {
        blk.trisection = TrisectionParams{0.0f, 0.0f, params.sigma_ratio};
        tri = trisection_quantize(w_block, ns_sup, blk.trisection);
    }
    if (times) {
        times->trisection_start_ms = ms_since(t_tri);
        times->trisection_ms = ms_since(std::chrono::steady_clock::now()) -
                               times->trisection_start_ms;
    }
    blk.sparse_atom = std::move(tri.sparse);
    blk.intermediate_atom = std::move(tri.intermediate);
    blk.dense_atom = std::move(tri.dense);

    blk.region_codes.assign(w_block.size(), RegionCode::Pruned);
    for (std::size_t k = 0; k < w_block.size(); k++) {
        if (sal_sup[k]) {
            blk.region_codes[k] = RegionCode::Salient;
        } else if (ns_sup[k]) {
            blk.region_codes[k] = tri.codes[k];
        }
    }
    return blk;
}

Tensor2D reconstruct_block(const BlockQuantResult & block) {
    const std::size_t width = block.width();
    Tensor2D out(block.rows, width);
    for (std::size_t i = 0; i < block.rows; i++) {
        for (std::size_t j = 0; j < width; j++) {
            const std::size_t k = i * width + j;
            switch (block.region_codes[k]) {
                case RegionCode::Pruned:
                    break;
                case RegionCode::Salient:
                    out.data[k] = (float)((double)block.salient_base.alpha[i] *
                                              (double)block.salient_base.signs[k] +
                                          (double)block.salient_residual.alpha[i] *
                                              (double)block.salient_residual.signs[k]);
                    break;
                case RegionCode::Sparse:
                    out.data[k] = block.sparse_atom.alpha[i] * (float)block.sparse_atom.signs[k];
                    break;
                case RegionCode::Intermediate:
                    out.data[k] = block.intermediate_atom.alpha[i] *
                                  (float)block.intermediate_atom.signs[k];
                    break;
                case RegionCode::Dense:
                    out.data[k] = block.dense_atom.alpha[i] * (float)block.dense_atom.signs[k];
                    break;
            }
        }
    }
    return out;
}

Tensor2D reconstruct(const StructuredBinaryLayer & layer) {
    Tensor2D out(layer.rows, layer.cols);
    for (const auto & blk : layer.blocks) {
        Tensor2D b = reconstruct_block(blk);
        for (std::size_t i = 0; i < blk.rows; i++) {
            for (std::size_t j = 0; j < blk.width(); j++) {
                out.at(i, blk.col_start + j) = b.at(i, j);
            }
        }
    }
    return out;
}

BinaryAtom & region_atom(BlockQuantResult & block, RegionCode code) {
    switch (code) {
        case RegionCode::Sparse:       return block.sparse_atom;
        case RegionCode::Intermediate: return block.intermediate_atom;
        case RegionCode::Dense:        return block.dense_atom;
        default:
            throw Error(ErrorCode::InvalidArgument, "region_atom: not a trisection region");
    }
}

const BinaryAtom & region_atom(const BlockQuantResult & block, RegionCode code) {
    return region_atom(const_cast<BlockQuantResult &>(block), code);
}

}  // namespace stbq
