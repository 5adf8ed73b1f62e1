#pragma once

#include "stbq/tensor.hpp"

#include <string>

namespace stbq {

// Same shape as the weight it scores; all entries finite.
struct ScoreMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> scores;  // row-major

    ScoreMatrix() = default;
    ScoreMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), scores(r * c, 0.0f) {}

    float at(std::size_t i, std::size_t j) const { return scores[i * cols + j]; }
    float & at(std::size_t i, std::size_t j) { return scores[i * cols + j]; }
};

enum class ScorerKind {
    StandardizedImportance,
    Magnitude,
    ActivationWeighted,  // |W| * L2 norm of the matching activation column
};

const char * scorer_name(ScorerKind kind);
ScorerKind scorer_from_name(const std::string & name);

// Relative magnitude: |W_ij| / (row-i L1 sum) + |W_ij| / (column-j L1 sum).
// An all-zero row or column contributes 0 for its term (0/0 -> 0).
ScoreMatrix relative_magnitude(const Tensor2D & w);

// (x - mean) / std over all entries, population std. A constant input maps to
// all zeros.
ScoreMatrix standardize(const ScoreMatrix & mu);

// standardize(relative_magnitude(W)) scaled per column by the L2 norm of the
// matching calibration column. Statistics are taken over the full matrix, so
// slicing score columns for a block is equivalent to scoring the block with
// whole-layer statistics.
ScoreMatrix si_scores(const Tensor2D & w, const Tensor2D & x);

ScoreMatrix baseline_scores(ScorerKind kind, const Tensor2D & w, const Tensor2D & x);

}  // namespace stbq
