#include "stbq/pipeline.hpp"

#include "stbq/error.hpp"
#include "stbq/rng.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

namespace stbq {

using RowMajorF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<const RowMajorF>;

void validate_config(const QuantConfig & cfg) {
    nm_validate(cfg.nm);
    if (cfg.block_size < (std::size_t)cfg.nm.m || cfg.block_size % (std::size_t)cfg.nm.m != 0) {
        throw Error(ErrorCode::InvalidArgument,
                    "block_size must be a positive multiple of m (got " +
                        std::to_string(cfg.block_size) + " with m " + std::to_string(cfg.nm.m) +
                        ")");
    }
    if (cfg.block_size > 0xffff) {
        throw Error(ErrorCode::InvalidArgument, "block_size exceeds the packed format's u16");
    }
    if (!(cfg.lambda_rel > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "lambda_rel must be positive");
    }
    if (!(cfg.sigma_ratio > 1.0f)) {
        throw Error(ErrorCode::InvalidArgument, "sigma_ratio must be greater than 1");
    }
    if (cfg.grid_points < 2) {
        throw Error(ErrorCode::InvalidArgument, "grid_points must be at least 2");
    }
    if (!(cfg.salient_cap > 0.0 && cfg.salient_cap <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "salient_cap must be in (0, 1]");
    }
    if (cfg.threads < 0) {
        throw Error(ErrorCode::InvalidArgument, "threads must be nonnegative");
    }
}

const char * stage_name(int stage) {
    switch (stage) {
        case StageScore:      return "score";
        case StageMask:       return "mask";
        case StageSalient:    return "salient";
        case StageTrisection: return "trisection";
        case StageCompensate: return "compensate";
    }
    return "?";
}

LayerQuantResult quantize_layer(const Tensor2D & w, const Tensor2D & x, const std::string & name,
                                NMRatio nm, const QuantConfig & cfg) {
    validate_config(cfg);
    nm_validate(nm);
    if (nm.m != cfg.nm.m) {
        throw Error(ErrorCode::InvalidArgument, "per-layer m differs from the configured m");
    }
    if (x.cols != w.cols) {
        throw Error(ErrorCode::ShapeMismatch,
                    "calibration features (" + std::to_string(x.cols) + ") do not match weight columns (" +
                        std::to_string(w.cols) + ")");
    }
    if (w.rows < 1 || w.cols < 1) {
        throw Error(ErrorCode::InvalidArgument, "empty weight matrix");
    }

    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto ms_since = [&t0](clock::time_point t) {
        return std::chrono::duration<double, std::milli>(t - t0).count();
    };

    LayerQuantResult res;
    res.layer.name = name;
    res.layer.rows = w.rows;
    res.layer.cols = w.cols;
    res.layer.block_size = cfg.block_size;
    res.layer.nm = nm;

    std::array<bool, StageCount> seen{};
    auto record = [&](int stage, double start_ms, double dur_ms) {
        if (!seen[stage]) {
            seen[stage] = true;
            res.timings.first_start_ms[stage] = start_ms;
        }
        res.timings.total_ms[stage] += dur_ms;
    };

    auto t_h = clock::now();
    HessianContext hess = build_hessian(x, cfg.lambda_rel, cfg.block_size);
    res.lambda_used = hess.lambda_used;
    res.timings.hessian_ms = ms_since(clock::now()) - ms_since(t_h);

    // scores come from the original weights with layer-global statistics; the
    // per-block "scoring step" is just a column slice of this matrix
    auto t_s = clock::now();
    const ScoreMatrix scores = baseline_scores(cfg.scorer, w, x);
    record(StageScore, ms_since(t_s), ms_since(clock::now()) - ms_since(t_s));

    QuantizerParams qp;
    qp.sigma_ratio = cfg.sigma_ratio;
    qp.grid_points = cfg.grid_points;
    qp.salient_cap = cfg.salient_cap;

    Tensor2D w_work = w;
    for (std::size_t b = 0; b < w.cols; b += cfg.block_size) {
        const std::size_t end = std::min(w.cols, b + cfg.block_size);
        try {
            const double t_call = ms_since(clock::now());
            BlockStageTimes bt;
            BlockQuantResult blk =
                quantize_block(w_work, b, end, scores, nm, hess.diag_slice(b, end), qp, &bt);
            record(StageMask, t_call + bt.mask_start_ms, bt.mask_ms);
            record(StageSalient, t_call + bt.salient_start_ms, bt.salient_ms);
            record(StageTrisection, t_call + bt.trisection_start_ms, bt.trisection_ms);

            if (cfg.compensate) {
                const Tensor2D rec = reconstruct_block(blk);
                auto t_c = clock::now();
                compensate_block(w_work, rec, hess, b, end);
                record(StageCompensate, ms_since(t_c), ms_since(clock::now()) - ms_since(t_c));
            }
            res.layer.blocks.push_back(std::move(blk));
        } catch (const Error & e) {
            throw Error(e.code(), "block [" + std::to_string(b) + ", " + std::to_string(end) +
                                      "): " + e.what());
        }
    }
    return res;
}

LayerEval evaluate_layer(const Tensor2D & w_orig, const StructuredBinaryLayer & layer,
                         const Tensor2D & x) {
    if (layer.rows != w_orig.rows || layer.cols != w_orig.cols || x.cols != w_orig.cols) {
        throw Error(ErrorCode::ShapeMismatch, "evaluate_layer: shape mismatch");
    }
    const Tensor2D recon = reconstruct(layer);

    LayerEval ev;
    for (const auto & blk : layer.blocks) {
        for (std::size_t i = 0; i < blk.rows; i++) {
            for (std::size_t j = 0; j < blk.width(); j++) {
                const std::size_t col = blk.col_start + j;
                const double d = (double)w_orig.at(i, col) - (double)recon.at(i, col);
                const double sq = d * d;
                switch (blk.region_codes[i * blk.width() + j]) {
                    case RegionCode::Pruned:       ev.sq_pruned += sq; break;
                    case RegionCode::Salient:      ev.sq_salient += sq; break;
                    case RegionCode::Sparse:       ev.sq_sparse += sq; break;
                    case RegionCode::Intermediate: ev.sq_intermediate += sq; break;
                    case RegionCode::Dense:        ev.sq_dense += sq; break;
                }
            }
        }
    }
    ev.frob_err = std::sqrt(ev.sq_salient + ev.sq_sparse + ev.sq_intermediate + ev.sq_dense +
                            ev.sq_pruned);

    MapF wd(w_orig.data.data(), (Eigen::Index)w_orig.rows, (Eigen::Index)w_orig.cols);
    MapF bd(recon.data.data(), (Eigen::Index)recon.rows, (Eigen::Index)recon.cols);
    MapF xd(x.data.data(), (Eigen::Index)x.rows, (Eigen::Index)x.cols);
    // materialized transpose, same shape as the flip experiment's product, so
    // the two paths agree bitwise on identical inputs
    const Eigen::MatrixXd xt = xd.cast<double>().transpose();
    ev.output_err = ((wd.cast<double>() - bd.cast<double>()) * xt).norm();
    return ev;
}

static nlohmann::ordered_json config_json(const QuantConfig & cfg) {
    nlohmann::ordered_json j;
    j["scorer"] = scorer_name(cfg.scorer);
    j["strategy"] = strategy_name(cfg.strategy);
    j["nm"] = std::to_string(cfg.nm.n) + ":" + std::to_string(cfg.nm.m);
    j["block_size"] = cfg.block_size;
    j["lambda_rel"] = cfg.lambda_rel;
    j["sigma_ratio"] = (double)cfg.sigma_ratio;
    j["grid_points"] = cfg.grid_points;
    j["salient_cap"] = cfg.salient_cap;
    j["renormalize"] = cfg.renormalize;
    j["compensate"] = cfg.compensate;
    j["seed"] = cfg.seed;
    return j;
}

static nlohmann::ordered_json layer_row_json(const LayerReportRow & row, bool with_lambda = true) {
    nlohmann::ordered_json j;
    j["name"] = row.name;
    j["rows"] = row.rows;
    j["cols"] = row.cols;
    j["n"] = row.nm.n;
    j["m"] = row.nm.m;
    j["num_blocks"] = row.num_blocks;
    if (with_lambda) {
        j["lambda_used"] = row.lambda_used;
    }
    j["r_salient"] = row.bits.r_salient;
    j["n_param"] = row.bits.n_param;
    j["n_storing"] = row.bits.n_storing;
    j["avg_bits_nominal"] = row.bits.avg_bits_nominal;
    j["avg_bits_packed"] = row.bits.avg_bits_packed;
    j["frobenius_error"] = row.eval.frob_err;
    j["output_error"] = row.eval.output_err;
    j["region_sq_error"] = {{"salient", row.eval.sq_salient},
                            {"sparse", row.eval.sq_sparse},
                            {"intermediate", row.eval.sq_intermediate},
                            {"dense", row.eval.sq_dense},
                            {"pruned", row.eval.sq_pruned}};
    j["trisection"] = {{"mean_p1", row.mean_p1}, {"mean_p2", row.mean_p2}};
    return j;
}

static LayerReportRow make_row(const std::string & name, const StructuredBinaryLayer & layer,
                               std::size_t packed_bytes, const LayerRecord & rec);

std::string ModelQuantResult::report_json() const {
    nlohmann::ordered_json j;
    j["config"] = config_json(config);
    j["plan"] = nlohmann::ordered_json::parse(plan.to_json());
    j["layers"] = nlohmann::ordered_json::array();
    for (const auto & row : rows) {
        j["layers"].push_back(layer_row_json(row));
    }
    return j.dump(2) + "\n";
}

ModelQuantResult quantize_model(const ModelManifest & manifest, const QuantConfig & cfg) {
    validate_config(cfg);
    if (manifest.layers.empty()) {
        throw Error(ErrorCode::InvalidArgument, "manifest has no layers");
    }
    const std::size_t count = manifest.layers.size();

    std::vector<LayerRecord> records;
    records.reserve(count);
    for (std::size_t i = 0; i < count; i++) {
        records.push_back(load_layer(manifest, i));
    }

    ModelQuantResult out;
    out.config = cfg;

    const double target = (double)cfg.nm.n / (double)cfg.nm.m;
    std::vector<std::string> names;
    for (const auto & rec : records) {
        names.push_back(rec.name);
    }
    switch (cfg.strategy) {
        case AllocStrategy::Adaptive: {
            std::vector<Tensor2D> weights;
            std::vector<std::size_t> sizes;
            for (const auto & rec : records) {
                weights.push_back(rec.weight);
                sizes.push_back(rec.weight.size());
            }
            out.plan = assign_nm(layer_importance(weights), target, cfg.nm.m, cfg.renormalize,
                                 sizes, names);
            break;
        }
        case AllocStrategy::Uniform:
            out.plan = uniform_plan(count, target, cfg.nm.m, names);
            break;
        case AllocStrategy::SinShape:
            out.plan = sin_shape_plan(count, target, cfg.nm.m, names);
            break;
    }

    out.layers.resize(count);
    out.timings.resize(count);
    std::vector<double> lambdas(count, 0.0);

    unsigned workers = cfg.threads > 0 ? (unsigned)cfg.threads
                                       : std::max(1u, std::thread::hardware_concurrency());
    workers = (unsigned)std::min<std::size_t>(workers, count);

    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    auto work = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) {
                return;
            }
            try {
                LayerQuantResult r = quantize_layer(records[i].weight, records[i].calibration,
                                                    records[i].name, out.plan.per_layer[i].nm, cfg);
                out.layers[i] = std::move(r.layer);
                out.timings[i] = r.timings;
                lambdas[i] = r.lambda_used;
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < workers; t++) {
            pool.emplace_back(work);
        }
        for (auto & t : pool) {
            t.join();
        }
    }
    for (std::size_t i = 0; i < count; i++) {
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const Error & e) {
                throw Error(e.code(), "layer '" + records[i].name + "': " + e.what());
            }
        }
    }

    for (std::size_t i = 0; i < count; i++) {
        out.packed.push_back(encode(out.layers[i]));
        LayerReportRow row =
            make_row(records[i].name, out.layers[i], out.packed[i].size(), records[i]);
        row.lambda_used = lambdas[i];
        out.rows.push_back(std::move(row));
    }
    return out;
}

static LayerReportRow make_row(const std::string & name, const StructuredBinaryLayer & layer,
                               std::size_t packed_bytes, const LayerRecord & rec) {
    LayerReportRow row;
    row.name = name;
    row.rows = layer.rows;
    row.cols = layer.cols;
    row.nm = layer.nm;
    row.num_blocks = layer.blocks.size();
    row.bits = bit_report(layer, packed_bytes);
    row.eval = evaluate_layer(rec.weight, layer, rec.calibration);
    double p1 = 0.0, p2 = 0.0;
    for (const auto & blk : layer.blocks) {
        p1 += (double)blk.trisection.p1;
        p2 += (double)blk.trisection.p2;
    }
    row.mean_p1 = p1 / (double)layer.blocks.size();
    row.mean_p2 = p2 / (double)layer.blocks.size();
    return row;
}

std::string packed_report_json(const ModelManifest & manifest,
                               const std::filesystem::path & packed_dir) {
    nlohmann::ordered_json j;
    j["layers"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < manifest.layers.size(); i++) {
        const auto & ml = manifest.layers[i];
        const auto path = packed_dir / (ml.name + ".stbl");
        if (!std::filesystem::exists(path)) {
            throw Error(ErrorCode::MissingFile, "no packed layer " + path.string());
        }
        const StructuredBinaryLayer layer = load_packed(path);
        if (layer.name != ml.name || layer.rows != ml.n || layer.cols != ml.m) {
            throw Error(ErrorCode::ShapeMismatch,
                        "packed layer " + path.string() + " does not match manifest entry '" +
                            ml.name + "'");
        }
        const LayerRecord rec = load_layer(manifest, i);
        const auto row =
            make_row(ml.name, layer, (std::size_t)std::filesystem::file_size(path), rec);
        j["layers"].push_back(layer_row_json(row, /*with_lambda=*/false));
    }
    return j.dump(2) + "\n";
}

// deterministic partial Fisher-Yates draw of k distinct indices out of [0, n)
static std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k,
                                                           SplitMix64 & rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; i++) {
        idx[i] = i;
    }
    for (std::size_t t = 0; t < k; t++) {
        const std::size_t j = t + (std::size_t)(rng.next_u64() % (uint64_t)(n - t));
        std::swap(idx[t], idx[j]);
    }
    idx.resize(k);
    return idx;
}

namespace {

// flip machinery shared by the layer- and model-level experiments
struct FlipContext {
    const StructuredBinaryLayer * layer;
    const Tensor2D * w_orig;
    Eigen::MatrixXd xt;                                          // cols x r
    std::vector<std::pair<uint32_t, std::size_t>> positions;     // (block, flat)
    double baseline_err = 0.0;

    FlipContext(const StructuredBinaryLayer & l, const Tensor2D & w, const Tensor2D & x)
        : layer(&l), w_orig(&w) {
        MapF xd(x.data.data(), (Eigen::Index)x.rows, (Eigen::Index)x.cols);
        xt = xd.cast<double>().transpose();
        for (uint32_t bi = 0; bi < l.blocks.size(); bi++) {
            const auto & blk = l.blocks[bi];
            for (std::size_t k = 0; k < blk.region_codes.size(); k++) {
                const RegionCode c = blk.region_codes[k];
                if (c == RegionCode::Sparse || c == RegionCode::Intermediate ||
                    c == RegionCode::Dense) {
                    positions.push_back({bi, k});
                }
            }
        }
        baseline_err = measure(l);
    }

    double measure(const StructuredBinaryLayer & l) const {
        const Tensor2D recon = reconstruct(l);
        MapF wd(w_orig->data.data(), (Eigen::Index)w_orig->rows, (Eigen::Index)w_orig->cols);
        MapF bd(recon.data.data(), (Eigen::Index)recon.rows, (Eigen::Index)recon.cols);
        return ((wd.cast<double>() - bd.cast<double>()) * xt).norm();
    }

    double run_trial(double fraction, SplitMix64 & rng) const {
        const std::size_t k = (std::size_t)((double)positions.size() * fraction);
        if (k == 0) {
            return baseline_err;
        }
        StructuredBinaryLayer flipped = *layer;
        for (std::size_t p : sample_without_replacement(positions.size(), k, rng)) {
            const auto [bi, flat] = positions[p];
            auto & blk = flipped.blocks[bi];
            BinaryAtom & atom = region_atom(blk, blk.region_codes[flat]);
            atom.signs[flat] = (int8_t)-atom.signs[flat];
        }
        return measure(flipped);
    }
};

}  // namespace

static void validate_fractions(const std::vector<double> & fractions, int trials) {
    if (fractions.empty()) {
        throw Error(ErrorCode::InvalidArgument, "no flip fractions given");
    }
    for (double f : fractions) {
        if (!(f >= 0.0 && f <= 1.0)) {
            throw Error(ErrorCode::InvalidArgument, "flip fractions must lie in [0, 1]");
        }
    }
    if (trials < 1) {
        throw Error(ErrorCode::InvalidArgument, "need at least one flip trial");
    }
}

static std::vector<FlipPoint> summarize(const std::vector<double> & fractions,
                                        const std::vector<std::vector<double>> & errs) {
    std::vector<FlipPoint> out;
    for (std::size_t fi = 0; fi < fractions.size(); fi++) {
        double mean = 0.0;
        for (double e : errs[fi]) {
            mean += e;
        }
        mean /= (double)errs[fi].size();
        double var = 0.0;
        for (double e : errs[fi]) {
            var += (e - mean) * (e - mean);
        }
        var /= (double)errs[fi].size();
        out.push_back({fractions[fi], mean, std::sqrt(var)});
    }
    return out;
}

std::vector<FlipPoint> flip_experiment(const StructuredBinaryLayer & layer,
                                       const Tensor2D & w_orig, const Tensor2D & x,
                                       const std::vector<double> & fractions, int trials,
                                       uint64_t seed) {
    validate_fractions(fractions, trials);
    FlipContext ctx(layer, w_orig, x);
    std::vector<std::vector<double>> errs(fractions.size());
    for (std::size_t fi = 0; fi < fractions.size(); fi++) {
        for (int t = 0; t < trials; t++) {
            SplitMix64 rng(SplitMix64::mix(SplitMix64::mix(seed, fi), (uint64_t)t));
            errs[fi].push_back(ctx.run_trial(fractions[fi], rng));
        }
    }
    return summarize(fractions, errs);
}

std::vector<FlipPoint> flip_experiment_model(const std::vector<StructuredBinaryLayer> & layers,
                                             const std::vector<LayerRecord> & records,
                                             const std::vector<double> & fractions, int trials,
                                             uint64_t seed) {
    validate_fractions(fractions, trials);
    if (layers.size() != records.size() || layers.empty()) {
        throw Error(ErrorCode::InvalidArgument, "flip: layer/record count mismatch");
    }
    std::vector<std::vector<double>> sq(fractions.size(),
                                        std::vector<double>((std::size_t)trials, 0.0));
    for (std::size_t li = 0; li < layers.size(); li++) {
        FlipContext ctx(layers[li], records[li].weight, records[li].calibration);
        const uint64_t layer_seed = SplitMix64::mix(seed, (uint64_t)li);
        for (std::size_t fi = 0; fi < fractions.size(); fi++) {
            for (int t = 0; t < trials; t++) {
                SplitMix64 rng(SplitMix64::mix(SplitMix64::mix(layer_seed, fi), (uint64_t)t));
                const double e = ctx.run_trial(fractions[fi], rng);
                sq[fi][(std::size_t)t] += e * e;
            }
        }
    }
    std::vector<std::vector<double>> errs(fractions.size());
    for (std::size_t fi = 0; fi < fractions.size(); fi++) {
        for (double s : sq[fi]) {
            errs[fi].push_back(std::sqrt(s));
        }
    }
    return summarize(fractions, errs);
}

std::string flip_csv(const std::vector<FlipPoint> & points) {
    std::string out = "fraction,mean_err,std_err\n";
    char buf[128];
    for (const auto & p : points) {
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g\n", p.fraction, p.mean_err, p.std_err);
        out += buf;
    }
    return out;
}

}  // namespace stbq
