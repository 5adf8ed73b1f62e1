#include "stbq/scoring.hpp"

#include "stbq/error.hpp"

#include <algorithm>
#include <cmath>

namespace stbq {

const char * scorer_name(ScorerKind kind) {
    switch (kind) {
        case ScorerKind::StandardizedImportance: return "si";
        case ScorerKind::Magnitude:              return "magnitude";
        case ScorerKind::ActivationWeighted:     return "actweighted";
    }
    return "?";
}

ScorerKind scorer_from_name(const std::string & name) {
    if (name == "si")          return ScorerKind::StandardizedImportance;
    if (name == "magnitude")   return ScorerKind::Magnitude;
    if (name == "actweighted") return ScorerKind::ActivationWeighted;
    throw Error(ErrorCode::InvalidArgument, "unknown scorer \"" + name + "\"");
}

ScoreMatrix relative_magnitude(const Tensor2D & w) {
    ScoreMatrix out(w.rows, w.cols);
    std::vector<double> row_sum(w.rows, 0.0);
    std::vector<double> col_sum(w.cols, 0.0);
    for (std::size_t i = 0; i < w.rows; i++) {
        for (std::size_t j = 0; j < w.cols; j++) {
            const double a = std::fabs((double)w.at(i, j));
            row_sum[i] += a;
            col_sum[j] += a;
        }
    }
    for (std::size_t i = 0; i < w.rows; i++) {
        for (std::size_t j = 0; j < w.cols; j++) {
            const double a = std::fabs((double)w.at(i, j));
            const double rt = row_sum[i] > 0.0 ? a / row_sum[i] : 0.0;
            const double ct = col_sum[j] > 0.0 ? a / col_sum[j] : 0.0;
            out.at(i, j) = (float)(rt + ct);
        }
    }
    return out;
}

ScoreMatrix standardize(const ScoreMatrix & mu) {
    ScoreMatrix out(mu.rows, mu.cols);
    if (mu.scores.empty()) {
        return out;
    }
    const auto [mn, mx] = std::minmax_element(mu.scores.begin(), mu.scores.end());
    if (*mn == *mx) {
        return out;  // zero variance
    }
    const double n = (double)mu.scores.size();
    double mean = 0.0;
    for (float v : mu.scores) {
        mean += v;
    }
    mean /= n;
    double var = 0.0;
    for (float v : mu.scores) {
        const double d = (double)v - mean;
        var += d * d;
    }
    const double sd = std::sqrt(var / n);  // population std
    if (sd == 0.0) {
        return out;
    }
    for (std::size_t k = 0; k < mu.scores.size(); k++) {
        out.scores[k] = (float)(((double)mu.scores[k] - mean) / sd);
    }
    return out;
}

static std::vector<double> column_norms(const Tensor2D & x) {
    std::vector<double> norms(x.cols, 0.0);
    for (std::size_t i = 0; i < x.rows; i++) {
        for (std::size_t j = 0; j < x.cols; j++) {
            const double v = x.at(i, j);
            norms[j] += v * v;
        }
    }
    for (auto & v : norms) {
        v = std::sqrt(v);
    }
    return norms;
}

ScoreMatrix si_scores(const Tensor2D & w, const Tensor2D & x) {
    if (x.cols != w.cols) {
        throw Error(ErrorCode::ShapeMismatch, "si_scores: calibration cols " +
                                                  std::to_string(x.cols) + " != weight cols " +
                                                  std::to_string(w.cols));
    }
    const ScoreMatrix su = standardize(relative_magnitude(w));
    const std::vector<double> norms = column_norms(x);
    ScoreMatrix out(w.rows, w.cols);
    for (std::size_t i = 0; i < w.rows; i++) {
        for (std::size_t j = 0; j < w.cols; j++) {
            out.at(i, j) = (float)((double)su.at(i, j) * norms[j]);
        }
    }
    return out;
}

ScoreMatrix baseline_scores(ScorerKind kind, const Tensor2D & w, const Tensor2D & x) {
    switch (kind) {
        case ScorerKind::StandardizedImportance:
            return si_scores(w, x);
        case ScorerKind::Magnitude: {
            ScoreMatrix out(w.rows, w.cols);
            for (std::size_t k = 0; k < w.data.size(); k++) {
                out.scores[k] = std::fabs(w.data[k]);
            }
            return out;
        }
        case ScorerKind::ActivationWeighted: {
            if (x.cols != w.cols) {
                throw Error(ErrorCode::ShapeMismatch, "baseline_scores: calibration cols mismatch");
            }
            const std::vector<double> norms = column_norms(x);
            ScoreMatrix out(w.rows, w.cols);
            for (std::size_t i = 0; i < w.rows; i++) {
                for (std::size_t j = 0; j < w.cols; j++) {
                    out.at(i, j) = (float)(std::fabs((double)w.at(i, j)) * norms[j]);
                }
            }
            return out;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "baseline_scores: bad kind");
}

}  // namespace stbq
