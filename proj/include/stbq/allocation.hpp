#pragma once

#include "stbq/tensor.hpp"

#include <string>
#include <vector>

namespace stbq {

// 1 <= n <= m with m drawn from the supported bank widths.
struct NMRatio {
    int n = 0;
    int m = 0;

    bool operator==(const NMRatio &) const = default;
};

bool nm_is_valid(const NMRatio & nm);
void nm_validate(const NMRatio & nm);
NMRatio nm_parse(const std::string & text);  // "4:8"

enum class AllocStrategy {
    Adaptive,
    Uniform,
    SinShape,
};

const char * strategy_name(AllocStrategy s);
AllocStrategy strategy_from_name(const std::string & name);

struct LayerAllocation {
    std::string name;
    double alpha = 0.0;      // importance share (0 for the positional plans)
    double raw_ratio = 0.0;  // keep-ratio before rounding
    NMRatio nm;
};

struct AllocationPlan {
    AllocStrategy strategy = AllocStrategy::Uniform;
    double target_ratio = 1.0;
    int m = 8;
    std::vector<LayerAllocation> per_layer;
    double realized_ratio = 0.0;  // parameter-weighted mean of n/m

    std::string to_json() const;
};

// alpha_i = ||W_i||_F / sum_k ||W_k||_F; sums to 1.
std::vector<double> layer_importance(const std::vector<Tensor2D> & layers);

// raw_i = alpha_i + (1 - alpha_i) * target; n_i = clamp(round(raw_i * m), 1, m).
// With renormalize set, n_i values are nudged by +-1 (largest rounding
// overshoot first) until the parameter-weighted realized ratio is within 1/m
// of the target. param_counts weights the realized ratio; empty means equal
// weights. names, when given, labels the plan entries.
AllocationPlan assign_nm(const std::vector<double> & importances, double target_ratio, int m,
                         bool renormalize, const std::vector<std::size_t> & param_counts = {},
                         const std::vector<std::string> & names = {});

AllocationPlan uniform_plan(std::size_t num_layers, double target_ratio, int m,
                            const std::vector<std::string> & names = {});

// Keep-ratio follows half a sine period: highest at layer 0, target in the
// middle, lowest at the last layer; the raw ratios average to the target.
AllocationPlan sin_shape_plan(std::size_t num_layers, double target_ratio, int m,
                              const std::vector<std::string> & names = {});

}  // namespace stbq
