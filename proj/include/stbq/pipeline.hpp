#pragma once

#include "stbq/allocation.hpp"
#include "stbq/compensation.hpp"
#include "stbq/packing.hpp"
#include "stbq/quantizer.hpp"
#include "stbq/scoring.hpp"
#include "stbq/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace stbq {

struct QuantConfig {
    ScorerKind scorer = ScorerKind::StandardizedImportance;
    AllocStrategy strategy = AllocStrategy::Adaptive;
    NMRatio nm{4, 8};
    std::size_t block_size = 128;
    double lambda_rel = 0.01;
    float sigma_ratio = 2.0f;
    int grid_points = 160;
    double salient_cap = 0.3;
    bool renormalize = true;
    bool compensate = true;  // block-wise OBC tail update
    uint64_t seed = 0;
    int threads = 0;  // layer workers; 0 = one per layer up to the hardware
};

// Rejects inconsistent knobs; in particular block_size must be a positive
// multiple of m so no N:M bank ever straddles a compensation block.
void validate_config(const QuantConfig & cfg);

enum Stage {
    StageScore = 0,
    StageMask,
    StageSalient,
    StageTrisection,
    StageCompensate,
    StageCount,
};

const char * stage_name(int stage);

// Wall-clock per stage, ms relative to the layer start. Kept in memory (and
// printed by the CLI) but never serialized, so report files stay byte-stable
// across identical runs.
struct StageTimings {
    std::array<double, StageCount> first_start_ms{};
    std::array<double, StageCount> total_ms{};
    double hessian_ms = 0.0;  // factorization happens before every stage
};

struct LayerQuantResult {
    StructuredBinaryLayer layer;
    double lambda_used = 0.0;
    StageTimings timings;
};

// One layer end to end: Hessian, layer-global scores, then per block
// mask / salient / trisect / compensate-the-tail.
LayerQuantResult quantize_layer(const Tensor2D & w, const Tensor2D & x, const std::string & name,
                                NMRatio nm, const QuantConfig & cfg);

struct LayerEval {
    double frob_err = 0.0;    // ||W - B||_F
    double output_err = 0.0;  // ||(W - B) X^T||_F
    // squared-error split by region; sums to frob_err^2
    double sq_salient = 0.0;
    double sq_sparse = 0.0;
    double sq_intermediate = 0.0;
    double sq_dense = 0.0;
    double sq_pruned = 0.0;
};

LayerEval evaluate_layer(const Tensor2D & w_orig, const StructuredBinaryLayer & layer,
                         const Tensor2D & x);

struct LayerReportRow {
    std::string name;
    std::size_t rows = 0, cols = 0;
    NMRatio nm;
    std::size_t num_blocks = 0;
    double lambda_used = 0.0;
    BitReport bits;
    LayerEval eval;
    double mean_p1 = 0.0, mean_p2 = 0.0;  // across blocks
};

struct ModelQuantResult {
    AllocationPlan plan;
    QuantConfig config;
    std::vector<StructuredBinaryLayer> layers;  // manifest order
    std::vector<std::vector<uint8_t>> packed;   // encode() of each layer
    std::vector<LayerReportRow> rows;
    std::vector<StageTimings> timings;  // in-memory only

    // Deterministic JSON artifact: config echo, plan, per-layer rows; no
    // timings or other run-varying data.
    std::string report_json() const;
};

ModelQuantResult quantize_model(const ModelManifest & manifest, const QuantConfig & cfg);

// Report over already-packed layers: loads <name>.stbl from packed_dir for
// every manifest layer and evaluates it against the manifest tensors.
// Same per-layer schema as the quantize report, minus fields only the
// quantization run knows (lambda_used).
std::string packed_report_json(const ModelManifest & manifest,
                               const std::filesystem::path & packed_dir);

struct FlipPoint {
    double fraction = 0.0;
    double mean_err = 0.0;
    double std_err = 0.0;  // population std over trials
};

// Randomly negates floor(p * count) kept non-salient sign bits (sampled
// without replacement), reconstructs, and measures ||(W_orig - B) X^T||_F.
// Salient and pruned entries are never touched.
std::vector<FlipPoint> flip_experiment(const StructuredBinaryLayer & layer,
                                       const Tensor2D & w_orig, const Tensor2D & x,
                                       const std::vector<double> & fractions, int trials,
                                       uint64_t seed);

// Model-level variant: per (fraction, trial), the error is the root of the
// summed squared layer errors; layer i flips with stream mix(seed, i).
std::vector<FlipPoint> flip_experiment_model(const std::vector<StructuredBinaryLayer> & layers,
                                             const std::vector<LayerRecord> & records,
                                             const std::vector<double> & fractions, int trials,
                                             uint64_t seed);

// "fraction,mean_err,std_err" CSV with one row per point.
std::string flip_csv(const std::vector<FlipPoint> & points);

}  // namespace stbq
