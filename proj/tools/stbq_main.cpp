// Command-line front end: quantize / flip / report / synth / bits.
// Exit codes: 0 ok, 2 validation error, 3 numerical failure.

#include "stbq/error.hpp"
#include "stbq/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

namespace fs = std::filesystem;

static void write_text(const fs::path & path, const std::string & text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw stbq::Error(stbq::ErrorCode::MissingFile,
                          "cannot open " + path.string() + " for writing");
    }
    f << text;
}

static void check_layer_filename(const std::string & name) {
    if (name.empty() || name == "." || name == ".." ||
        name.find('/') != std::string::npos || name.find('\\') != std::string::npos) {
        throw stbq::Error(stbq::ErrorCode::InvalidArgument,
                          "layer name '" + name + "' is not usable as a file name");
    }
}

struct QuantizeOpts {
    std::string manifest;
    std::string out_dir;
    std::string nm = "4:8";
    std::string strategy = "adaptive";
    std::string scorer = "si";
    std::size_t block_size = 128;
    double lambda_rel = 0.01;
    double sigma = 2.0;
    int grid_points = 160;
    double salient_cap = 0.3;
    bool no_renormalize = false;
    uint64_t seed = 0;
    std::string report;
};

static void run_quantize(const QuantizeOpts & o) {
    stbq::QuantConfig cfg;
    cfg.nm = stbq::nm_parse(o.nm);
    cfg.strategy = stbq::strategy_from_name(o.strategy);
    cfg.scorer = stbq::scorer_from_name(o.scorer);
    cfg.block_size = o.block_size;
    cfg.lambda_rel = o.lambda_rel;
    cfg.sigma_ratio = (float)o.sigma;
    cfg.grid_points = o.grid_points;
    cfg.salient_cap = o.salient_cap;
    cfg.renormalize = !o.no_renormalize;
    cfg.seed = o.seed;

    const stbq::ModelManifest manifest = stbq::load_manifest(o.manifest);
    for (const auto & ml : manifest.layers) {
        check_layer_filename(ml.name);
    }
    const stbq::ModelQuantResult result = stbq::quantize_model(manifest, cfg);

    fs::create_directories(o.out_dir);
    for (std::size_t i = 0; i < result.layers.size(); i++) {
        const fs::path path = fs::path(o.out_dir) / (result.rows[i].name + ".stbl");
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write((const char *)result.packed[i].data(), (std::streamsize)result.packed[i].size());
        if (!f) {
            throw stbq::Error(stbq::ErrorCode::MissingFile, "short write to " + path.string());
        }
    }
    const fs::path report_path =
        o.report.empty() ? fs::path(o.out_dir) / "report.json" : fs::path(o.report);
    write_text(report_path, result.report_json());

    for (const auto & row : result.rows) {
        std::printf("%-12s %4zux%-4zu %d:%d  r_salient %.4f  bits %.3f/%.3f  frob %.4g  out %.4g\n",
                    row.name.c_str(), row.rows, row.cols, row.nm.n, row.nm.m, row.bits.r_salient,
                    row.bits.avg_bits_nominal, row.bits.avg_bits_packed, row.eval.frob_err,
                    row.eval.output_err);
    }
    double totals[stbq::StageCount] = {};
    double hess = 0.0;
    for (const auto & t : result.timings) {
        for (int s = 0; s < stbq::StageCount; s++) {
            totals[s] += t.total_ms[s];
        }
        hess += t.hessian_ms;
    }
    std::printf("stage totals (ms):");
    for (int s = 0; s < stbq::StageCount; s++) {
        std::printf("  %s %.1f", stbq::stage_name(s), totals[s]);
    }
    std::printf("  (hessian %.1f)\n", hess);
    std::printf("realized keep ratio %.4f (target %.4f)\n", result.plan.realized_ratio,
                result.plan.target_ratio);
    std::printf("wrote %zu packed layers to %s, report to %s\n", result.layers.size(),
                o.out_dir.c_str(), report_path.string().c_str());
}

struct FlipOpts {
    std::string packed;
    std::string calib;
    std::vector<double> fractions = {0.0, 0.05, 0.1, 0.15};
    int trials = 20;
    uint64_t seed = 0;
    std::string out;
};

static void run_flip(const FlipOpts & o) {
    const stbq::ModelManifest manifest = stbq::load_manifest(o.calib);
    std::vector<stbq::FlipPoint> points;

    if (fs::is_directory(o.packed)) {
        std::vector<stbq::StructuredBinaryLayer> layers;
        std::vector<stbq::LayerRecord> records;
        for (std::size_t i = 0; i < manifest.layers.size(); i++) {
            const fs::path path = fs::path(o.packed) / (manifest.layers[i].name + ".stbl");
            if (!fs::exists(path)) {
                throw stbq::Error(stbq::ErrorCode::MissingFile, "no packed layer " + path.string());
            }
            layers.push_back(stbq::load_packed(path));
            records.push_back(stbq::load_layer(manifest, i));
        }
        points = stbq::flip_experiment_model(layers, records, o.fractions, o.trials, o.seed);
    } else {
        const stbq::StructuredBinaryLayer layer = stbq::load_packed(o.packed);
        std::size_t idx = manifest.layers.size();
        for (std::size_t i = 0; i < manifest.layers.size(); i++) {
            if (manifest.layers[i].name == layer.name) {
                idx = i;
                break;
            }
        }
        if (idx == manifest.layers.size()) {
            throw stbq::Error(stbq::ErrorCode::InvalidArgument,
                              "manifest has no layer named '" + layer.name + "'");
        }
        const stbq::LayerRecord rec = stbq::load_layer(manifest, idx);
        points = stbq::flip_experiment(layer, rec.weight, rec.calibration, o.fractions, o.trials,
                                       o.seed);
    }

    const std::string csv = stbq::flip_csv(points);
    write_text(o.out, csv);
    std::fputs(csv.c_str(), stdout);
}

struct ReportOpts {
    std::string packed;
    std::string calib;
    std::string out;
};

static void run_report(const ReportOpts & o) {
    const stbq::ModelManifest manifest = stbq::load_manifest(o.calib);
    const std::string json = stbq::packed_report_json(manifest, o.packed);
    write_text(o.out, json);
    std::printf("wrote report for %zu layers to %s\n", manifest.layers.size(), o.out.c_str());
}

struct SynthOpts {
    std::size_t layers = 1;
    std::size_t n = 0, m = 0, r = 0;
    uint64_t seed = 0;
    double correlation = 0.5;
    std::string out;
};

static void run_synth(const SynthOpts & o) {
    const stbq::ModelManifest manifest =
        stbq::write_synth_model(o.out, o.layers, o.n, o.m, o.r, o.seed, o.correlation);
    std::printf("wrote %zu synthetic layers (%zux%zu, calib %zu rows) to %s\n",
                manifest.layers.size(), o.n, o.m, o.r, o.out.c_str());
}

int main(int argc, char ** argv) {
    CLI::App app{"structured sub-1-bit weight quantizer"};
    app.require_subcommand(1);

    auto qo = std::make_shared<QuantizeOpts>();
    auto * quant = app.add_subcommand("quantize", "quantize a model described by a manifest");
    quant->add_option("--manifest", qo->manifest, "manifest.json path")->required();
    quant->add_option("--out", qo->out_dir, "output directory for packed layers")->required();
    quant->add_option("--nm", qo->nm, "target N:M ratio (default 4:8)");
    quant->add_option("--strategy", qo->strategy, "adaptive|uniform|sinshape");
    quant->add_option("--scorer", qo->scorer, "si|magnitude|actweighted");
    quant->add_option("--block-size", qo->block_size, "compensation block width (default 128)");
    quant->add_option("--lambda-rel", qo->lambda_rel, "Hessian damping, relative (default 0.01)");
    quant->add_option("--sigma", qo->sigma, "trisection break-point ratio (default 2)");
    quant->add_option("--grid-points", qo->grid_points, "break-point search grid (default 160)");
    quant->add_option("--salient-cap", qo->salient_cap,
                      "salient candidate fraction of block width (default 0.3)");
    quant->add_flag("--no-renormalize", qo->no_renormalize,
                    "skip the N:M budget repair toward the target ratio");
    quant->add_option("--seed", qo->seed, "config seed echoed in the report");
    quant->add_option("--report", qo->report, "report path (default OUT/report.json)");
    quant->callback([qo]() { run_quantize(*qo); });

    auto fo = std::make_shared<FlipOpts>();
    auto * flip = app.add_subcommand("flip", "random sign-flip degradation experiment");
    flip->add_option("--packed", fo->packed, "packed layer file or directory")->required();
    flip->add_option("--calib", fo->calib, "manifest.json with weights and calibration")
        ->required();
    flip->add_option("--fractions", fo->fractions, "flip fractions (default 0,0.05,0.1,0.15)")
        ->delimiter(',');
    flip->add_option("--trials", fo->trials, "trials per fraction (default 20)");
    flip->add_option("--seed", fo->seed, "sampling seed");
    flip->add_option("--out", fo->out, "output CSV path")->required();
    flip->callback([fo]() { run_flip(*fo); });

    auto ro = std::make_shared<ReportOpts>();
    auto * rep = app.add_subcommand("report", "re-evaluate packed layers against a manifest");
    rep->add_option("--packed", ro->packed, "directory of packed layers")->required();
    rep->add_option("--calib", ro->calib, "manifest.json with weights and calibration")
        ->required();
    rep->add_option("--out", ro->out, "output JSON path")->required();
    rep->callback([ro]() { run_report(*ro); });

    auto so = std::make_shared<SynthOpts>();
    auto * synth = app.add_subcommand("synth", "generate a deterministic synthetic model");
    synth->add_option("--layers", so->layers, "layer count")->required();
    synth->add_option("--n", so->n, "weight rows")->required();
    synth->add_option("--m", so->m, "weight cols (= calibration features)")->required();
    synth->add_option("--r", so->r, "calibration rows")->required();
    synth->add_option("--seed", so->seed, "generator seed");
    synth->add_option("--correlation", so->correlation,
                      "pairwise calibration feature correlation in [0,1)");
    synth->add_option("--out", so->out, "output directory")->required();
    synth->callback([so]() { run_synth(*so); });

    auto base = std::make_shared<double>(0.0);
    auto nm_str = std::make_shared<std::string>();
    auto * bits = app.add_subcommand("bits", "average-bits arithmetic: base * n/m");
    bits->add_option("--base", *base, "bits per kept weight before N:M")->required();
    bits->add_option("--nm", *nm_str, "N:M ratio")->required();
    bits->callback([base, nm_str]() {
        const stbq::NMRatio nm = stbq::nm_parse(*nm_str);
        std::printf("%g\n", *base * (double)nm.n / (double)nm.m);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // help/version exit 0, bad usage is a validation error
    } catch (const stbq::Error & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return stbq::is_numerical_error(e.code()) ? 3 : 2;
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
