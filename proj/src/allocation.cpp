#include "stbq/allocation.hpp"

#include "stbq/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace stbq {

static const int kAllowedBankWidths[] = {4, 8, 16};

bool nm_is_valid(const NMRatio & nm) {
    bool m_ok = false;
    for (int m : kAllowedBankWidths) {
        m_ok |= (nm.m == m);
    }
    return m_ok && nm.n >= 1 && nm.n <= nm.m;
}

void nm_validate(const NMRatio & nm) {
    if (!nm_is_valid(nm)) {
        throw Error(ErrorCode::InvalidArgument,
                    "N:M ratio " + std::to_string(nm.n) + ":" + std::to_string(nm.m) +
                        " (need 1 <= n <= m, m in {4, 8, 16})");
    }
}

NMRatio nm_parse(const std::string & text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
        throw Error(ErrorCode::InvalidArgument, "expected N:M, got \"" + text + "\"");
    }
    NMRatio nm;
    try {
        nm.n = std::stoi(text.substr(0, colon));
        nm.m = std::stoi(text.substr(colon + 1));
    } catch (const std::exception &) {
        throw Error(ErrorCode::InvalidArgument, "expected N:M, got \"" + text + "\"");
    }
    nm_validate(nm);
    return nm;
}

const char * strategy_name(AllocStrategy s) {
    switch (s) {
        case AllocStrategy::Adaptive: return "adaptive";
        case AllocStrategy::Uniform:  return "uniform";
        case AllocStrategy::SinShape: return "sinshape";
    }
    return "?";
}

AllocStrategy strategy_from_name(const std::string & name) {
    if (name == "adaptive") return AllocStrategy::Adaptive;
    if (name == "uniform")  return AllocStrategy::Uniform;
    if (name == "sinshape") return AllocStrategy::SinShape;
    throw Error(ErrorCode::InvalidArgument, "unknown strategy \"" + name + "\"");
}

std::string AllocationPlan::to_json() const {
    nlohmann::ordered_json j;
    j["strategy"] = strategy_name(strategy);
    j["target_ratio"] = target_ratio;
    j["m"] = m;
    j["layers"] = nlohmann::ordered_json::array();
    for (const auto & l : per_layer) {
        j["layers"].push_back({{"name", l.name},
                               {"alpha", l.alpha},
                               {"raw_ratio", l.raw_ratio},
                               {"n", l.nm.n}});
    }
    j["realized_ratio"] = realized_ratio;
    return j.dump(2);
}

std::vector<double> layer_importance(const std::vector<Tensor2D> & layers) {
    if (layers.empty()) {
        throw Error(ErrorCode::InvalidArgument, "layer_importance: no layers");
    }
    std::vector<double> norms(layers.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < layers.size(); i++) {
        double s = 0.0;
        for (float v : layers[i].data) {
            s += (double)v * v;
        }
        norms[i] = std::sqrt(s);
        total += norms[i];
    }
    if (total == 0.0) {
        throw Error(ErrorCode::AllZeroModel, "layer_importance: all layers are zero");
    }
    for (auto & v : norms) {
        v /= total;
    }
    return norms;
}

// round half away from zero (values here are nonnegative)
static int round_ratio(double x) {
    return (int)std::floor(x + 0.5);
}

static std::string default_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "layer_%03zu", i);
    return buf;
}

static double realized(const std::vector<LayerAllocation> & per_layer,
                       const std::vector<double> & weight) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < per_layer.size(); i++) {
        num += weight[i] * (double)per_layer[i].nm.n / per_layer[i].nm.m;
        den += weight[i];
    }
    return num / den;
}

AllocationPlan assign_nm(const std::vector<double> & importances, double target_ratio, int m,
                         bool renormalize, const std::vector<std::size_t> & param_counts,
                         const std::vector<std::string> & names) {
    if (importances.empty()) {
        throw Error(ErrorCode::InvalidArgument, "assign_nm: no importances");
    }
    if (!(target_ratio > 0.0 && target_ratio <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "assign_nm: target_ratio must be in (0, 1]");
    }
    const double isum = std::accumulate(importances.begin(), importances.end(), 0.0);
    if (std::fabs(isum - 1.0) > 1e-6) {
        throw Error(ErrorCode::InvalidArgument, "assign_nm: importances must sum to 1");
    }
    nm_validate({1, m});

    const std::size_t L = importances.size();
    std::vector<double> weight(L, 1.0);
    if (!param_counts.empty()) {
        if (param_counts.size() != L) {
            throw Error(ErrorCode::InvalidArgument, "assign_nm: param_counts size mismatch");
        }
        for (std::size_t i = 0; i < L; i++) {
            weight[i] = (double)param_counts[i];
        }
    }

    AllocationPlan plan;
    plan.strategy = AllocStrategy::Adaptive;
    plan.target_ratio = target_ratio;
    plan.m = m;
    for (std::size_t i = 0; i < L; i++) {
        LayerAllocation la;
        la.name = i < names.size() ? names[i] : default_name(i);
        la.alpha = importances[i];
        la.raw_ratio = importances[i] + (1.0 - importances[i]) * target_ratio;
        la.nm.m = m;
        la.nm.n = std::clamp(round_ratio(la.raw_ratio * m), 1, m);
        plan.per_layer.push_back(std::move(la));
    }

    const double tol = 1.0 / m;
    if (renormalize) {
        // Each +-1 step moves the realized ratio by w_i/(sum_w * m) <= 1/m, so
        // the gap shrinks monotonically until it is within tolerance.
        for (;;) {
            const double cur = realized(plan.per_layer, weight);
            const double gap = cur - target_ratio;
            if (std::fabs(gap) <= tol) {
                break;
            }
            const int step = gap > 0.0 ? -1 : +1;
            std::size_t best = L;
            double best_over = -1e300;
            for (std::size_t i = 0; i < L; i++) {
                auto & la = plan.per_layer[i];
                if ((step < 0 && la.nm.n <= 1) || (step > 0 && la.nm.n >= m)) {
                    continue;
                }
                // overshoot of the rounded ratio in the direction we are undoing
                const double over = step < 0 ? (double)la.nm.n / m - la.raw_ratio
                                             : la.raw_ratio - (double)la.nm.n / m;
                if (over > best_over) {
                    best_over = over;
                    best = i;
                }
            }
            if (best == L) {
                throw Error(ErrorCode::InfeasibleBudget,
                            "assign_nm: cannot reach target ratio " + std::to_string(target_ratio));
            }
            plan.per_layer[best].nm.n += step;
        }
    }
    plan.realized_ratio = realized(plan.per_layer, weight);
    return plan;
}

AllocationPlan uniform_plan(std::size_t num_layers, double target_ratio, int m,
                            const std::vector<std::string> & names) {
    nm_validate({1, m});
    const int n = round_ratio(target_ratio * m);
    if (n < 1 || n > m) {
        throw Error(ErrorCode::InvalidArgument,
                    "uniform_plan: round(target * m) out of [1, m] for target " +
                        std::to_string(target_ratio));
    }
    AllocationPlan plan;
    plan.strategy = AllocStrategy::Uniform;
    plan.target_ratio = target_ratio;
    plan.m = m;
    for (std::size_t i = 0; i < num_layers; i++) {
        LayerAllocation la;
        la.name = i < names.size() ? names[i] : default_name(i);
        la.raw_ratio = target_ratio;
        la.nm = {n, m};
        plan.per_layer.push_back(std::move(la));
    }
    plan.realized_ratio = (double)n / m;
    return plan;
}

AllocationPlan sin_shape_plan(std::size_t num_layers, double target_ratio, int m,
                              const std::vector<std::string> & names) {
    if (num_layers < 1) {
        throw Error(ErrorCode::InvalidArgument, "sin_shape_plan: need at least one layer");
    }
    if (num_layers == 1) {
        AllocationPlan plan = uniform_plan(1, target_ratio, m, names);
        plan.strategy = AllocStrategy::SinShape;
        return plan;
    }
    nm_validate({1, m});
    const double amp = std::min(target_ratio, 1.0 - target_ratio) / 2.0;

    AllocationPlan plan;
    plan.strategy = AllocStrategy::SinShape;
    plan.target_ratio = target_ratio;
    plan.m = m;
    double wsum = 0.0;
    for (std::size_t i = 0; i < num_layers; i++) {
        LayerAllocation la;
        la.name = i < names.size() ? names[i] : default_name(i);
        const double t = (double)i / (double)(num_layers - 1);  // 0 .. 1
        // minus sign puts the highest keep-ratio (lowest sparsity) first
        la.raw_ratio = target_ratio - amp * std::sin(M_PI * (t - 0.5));
        la.nm.m = m;
        la.nm.n = std::clamp(round_ratio(la.raw_ratio * m), 1, m);
        wsum += (double)la.nm.n / m;
        plan.per_layer.push_back(std::move(la));
    }
    plan.realized_ratio = wsum / (double)num_layers;
    return plan;
}

}  // namespace stbq
