#pragma once

#include "stbq/allocation.hpp"
#include "stbq/scoring.hpp"
#include "stbq/tensor.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace stbq {

// One sign/scale pair covering a subset of a block: reconstruction of a
// covered entry (i,j) is alpha[i] * signs[i*cols + j].  Canonical form keeps
// signs at 0 off-support so whole atoms compare bitwise.
struct BinaryAtom {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> alpha;      // per row; 0 when the row has no support
    std::vector<int8_t> signs;     // +-1 on support, 0 elsewhere
    std::vector<uint8_t> support;  // 1 = covered by this atom

    bool operator==(const BinaryAtom &) const = default;
};

enum class RegionCode : uint8_t {
    Pruned = 0,        // dropped by the N:M mask
    Salient = 1,       // kept, double-binarized column
    Sparse = 2,        // kept non-salient, |w| >  p2
    Intermediate = 3,  // kept non-salient, p1 < |w| <= p2
    Dense = 4,         // kept non-salient, |w| <= p1
};

// Break-points of the three-way magnitude split.  sigma_ratio is the search
// knob that tied p2 to sigma * p1; it is derived metadata after decode, so
// equality looks at the break-points only.
struct TrisectionParams {
    float p1 = 0.0f;
    float p2 = 0.0f;
    float sigma_ratio = 2.0f;

    bool operator==(const TrisectionParams & o) const { return p1 == o.p1 && p2 == o.p2; }
};

struct BlockQuantResult {
    std::size_t col_start = 0;  // [col_start, col_end) within the layer
    std::size_t col_end = 0;
    std::size_t rows = 0;
    std::vector<uint8_t> nm_mask;        // rows x width, 1 = kept
    std::vector<uint32_t> salient_cols;  // sorted block-local column indices
    BinaryAtom salient_base;
    BinaryAtom salient_residual;
    BinaryAtom sparse_atom;
    BinaryAtom intermediate_atom;
    BinaryAtom dense_atom;
    TrisectionParams trisection;
    std::vector<RegionCode> region_codes;  // rows x width, partitions all entries

    std::size_t width() const { return col_end - col_start; }

    bool operator==(const BlockQuantResult &) const = default;
};

struct StructuredBinaryLayer {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t block_size = 0;
    NMRatio nm;
    std::vector<BlockQuantResult> blocks;  // tile [0, cols) in order

    bool operator==(const StructuredBinaryLayer &) const = default;
};

// Search/selection knobs of the per-block core.
struct QuantizerParams {
    float sigma_ratio = 2.0f;  // p2 = sigma_ratio * p1
    int grid_points = 160;     // break-point grid resolution
    double salient_cap = 0.3;  // candidate columns as a fraction of block width
};

// alpha[i] = mean |w| over the supported entries of row i (0 if none);
// signs = sign(w) with sign(0) = +1.  w is rows x cols, support same shape.
BinaryAtom binarize_rowwise(const Tensor2D & w, const std::vector<uint8_t> & support);

// Keeps, per row and per bank of m consecutive absolute columns, the
// min(n, bank width) highest-scoring entries; ties go to the lower column.
// bank_offset is the absolute column index of scores' column 0, so banks stay
// aligned to the layer no matter how it is sliced into blocks.
std::vector<uint8_t> apply_nm_mask(const ScoreMatrix & scores, int n, int m,
                                   std::size_t bank_offset);

// Ranks columns by sum_i w_ij^2 / hc_diag[j]^2 (ties to the lower index) and
// returns the prefix, of size in [1, ceil(budget_cap * width)], that minimizes
// the squared error of binarizing prefix and complement separately.  Only
// masked-in entries participate.  Result is sorted ascending.
std::vector<uint32_t> select_salient(const Tensor2D & w, const std::vector<uint8_t> & mask,
                                     const std::vector<double> & hc_diag, double budget_cap);

// Two-stage binarization: first atom approximates w, second approximates the
// leftover w - alpha * sign(w).  Shared support.
std::pair<BinaryAtom, BinaryAtom> residual_binarize(const Tensor2D & w,
                                                    const std::vector<uint8_t> & support);

// Scans grid_points fractions f in [0.1, 0.9]; candidate p1 = f * max|w|,
// p2 = sigma_ratio * p1, skipped when p2 would exceed 0.9 * max|w|.  Returns
// the candidate whose three-region binarization error is smallest (ties to the
// smaller p1).  achieved_err, when given, receives that squared error.
TrisectionParams trisection_search(const Tensor2D & w, const std::vector<uint8_t> & support,
                                   float sigma_ratio, int grid_points,
                                   double * achieved_err = nullptr);

struct TrisectionResult {
    BinaryAtom sparse;
    BinaryAtom intermediate;
    BinaryAtom dense;
    std::vector<RegionCode> codes;  // region per supported entry, Pruned elsewhere
};

TrisectionResult trisection_quantize(const Tensor2D & w, const std::vector<uint8_t> & support,
                                     const TrisectionParams & params);

// Stage wall-clock spans relative to the quantize_block call, for the
// pipeline's timing report.
struct BlockStageTimes {
    double mask_start_ms = 0.0, mask_ms = 0.0;
    double salient_start_ms = 0.0, salient_ms = 0.0;
    double trisection_start_ms = 0.0, trisection_ms = 0.0;
};

// Full per-block pass over the current weights: slice scores, apply the N:M
// mask, pick salient columns, double-binarize them, trisect the rest.
// scores covers the whole layer; hc_diag covers just [col_start, col_end).
BlockQuantResult quantize_block(const Tensor2D & w_layer, std::size_t col_start,
                                std::size_t col_end, const ScoreMatrix & scores, NMRatio nm,
                                const std::vector<double> & hc_diag, const QuantizerParams & params,
                                BlockStageTimes * times = nullptr);

// Dense realization: pruned entries 0, salient entries base + residual,
// region entries alpha * sign.
Tensor2D reconstruct_block(const BlockQuantResult & block);
Tensor2D reconstruct(const StructuredBinaryLayer & layer);

// The atom holding a given non-salient kept region (for sign surgery).
BinaryAtom & region_atom(BlockQuantResult & block, RegionCode code);
const BinaryAtom & region_atom(const BlockQuantResult & block, RegionCode code);

}  // namespace stbq
