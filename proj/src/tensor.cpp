#include "stbq/tensor.hpp"

#include "stbq/error.hpp"
#include "stbq/rng.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace stbq {

using json = nlohmann::json;

void validate_finite(const Tensor2D & t, const std::string & context) {
    for (std::size_t i = 0; i < t.data.size(); i++) {
        if (!std::isfinite(t.data[i])) {
            throw Error(ErrorCode::NonFiniteValue,
                        context + ": non-finite value at flat index " + std::to_string(i));
        }
    }
}

Tensor2D load_tensor(const std::filesystem::path & path, std::size_t rows, std::size_t cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
    }
    in.seekg(0, std::ios::end);
    const auto file_size = (std::size_t)in.tellg();
    const std::size_t expected = rows * cols * 4;
    if (file_size != expected) {
        throw Error(ErrorCode::SizeMismatch, path.string() + ": file is " +
                                                 std::to_string(file_size) + " bytes, expected " +
                                                 std::to_string(expected) + " for " +
                                                 std::to_string(rows) + "x" + std::to_string(cols));
    }
    in.seekg(0);

    Tensor2D t(rows, cols);
    std::vector<unsigned char> raw(expected);
    in.read(reinterpret_cast<char *>(raw.data()), (std::streamsize)expected);
    if (!in) {
        throw Error(ErrorCode::SizeMismatch, path.string() + ": short read");
    }
    for (std::size_t i = 0; i < t.data.size(); i++) {
        uint32_t bits = (uint32_t)raw[4 * i] | ((uint32_t)raw[4 * i + 1] << 8) |
                        ((uint32_t)raw[4 * i + 2] << 16) | ((uint32_t)raw[4 * i + 3] << 24);
        t.data[i] = std::bit_cast<float>(bits);
    }
    validate_finite(t, path.string());
    return t;
}

void save_tensor(const std::filesystem::path & path, const Tensor2D & t) {
    validate_finite(t, path.string());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::MissingFile, "cannot open " + path.string() + " for writing");
    }
    std::vector<unsigned char> raw(t.data.size() * 4);
    for (std::size_t i = 0; i < t.data.size(); i++) {
        uint32_t bits = std::bit_cast<uint32_t>(t.data[i]);
        raw[4 * i]     = (unsigned char)(bits & 0xff);
        raw[4 * i + 1] = (unsigned char)((bits >> 8) & 0xff);
        raw[4 * i + 2] = (unsigned char)((bits >> 16) & 0xff);
        raw[4 * i + 3] = (unsigned char)((bits >> 24) & 0xff);
    }
    out.write(reinterpret_cast<const char *>(raw.data()), (std::streamsize)raw.size());
    if (!out) {
        throw Error(ErrorCode::MissingFile, "write failed for " + path.string());
    }
}

static std::size_t get_count(const json & j, const char * key, const std::string & where) {
    if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<int64_t>() < 1) {
        throw Error(ErrorCode::SchemaViolation, where + ": missing or invalid \"" + key + "\"");
    }
    return (std::size_t)j[key].get<int64_t>();
}

ModelManifest load_manifest(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception & e) {
        throw Error(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
    }

    ModelManifest mf;
    mf.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    if (!j.contains("version") || !j["version"].is_number_integer()) {
        throw Error(ErrorCode::SchemaViolation, path.string() + ": missing \"version\"");
    }
    mf.version = j["version"].get<int>();
    if (mf.version != 1) {
        throw Error(ErrorCode::UnsupportedVersion,
                    path.string() + ": manifest version " + std::to_string(mf.version));
    }
    if (!j.contains("layers") || !j["layers"].is_array() || j["layers"].empty()) {
        throw Error(ErrorCode::SchemaViolation, path.string() + ": missing \"layers\" array");
    }

    for (const auto & lj : j["layers"]) {
        ManifestLayer ml;
        if (!lj.contains("name") || !lj["name"].is_string()) {
            throw Error(ErrorCode::SchemaViolation, path.string() + ": layer without a name");
        }
        ml.name = lj["name"].get<std::string>();
        const std::string where = path.string() + ", layer \"" + ml.name + "\"";
        if (!lj.contains("weight") || !lj["weight"].is_string() || !lj.contains("calib") ||
            !lj["calib"].is_string()) {
            throw Error(ErrorCode::SchemaViolation, where + ": missing tensor paths");
        }
        ml.weight_path = lj["weight"].get<std::string>();
        ml.calib_path = lj["calib"].get<std::string>();
        ml.n = get_count(lj, "n", where);
        ml.m = get_count(lj, "m", where);
        ml.r = get_count(lj, "r", where);

        for (const auto & prev : mf.layers) {
            if (prev.name == ml.name) {
                throw Error(ErrorCode::SchemaViolation,
                            path.string() + ": duplicate layer name \"" + ml.name + "\"");
            }
        }

        // Existence + size validation up front, so a bad manifest fails before
        // any quantization work starts.
        const auto check = [&](const std::string & rel, std::size_t rows, std::size_t cols,
                               const char * what) {
            const auto full = mf.base_dir / rel;
            std::error_code ec;
            if (!std::filesystem::exists(full, ec)) {
                throw Error(ErrorCode::MissingFile, where + ": " + what + " file " + full.string());
            }
            const auto sz = std::filesystem::file_size(full, ec);
            if (ec) {
                throw Error(ErrorCode::MissingFile, where + ": cannot stat " + full.string());
            }
            if (sz != rows * cols * 4) {
                throw Error(ErrorCode::ShapeMismatch,
                            where + ": " + what + " file " + full.string() + " is " +
                                std::to_string(sz) + " bytes, expected " +
                                std::to_string(rows * cols * 4) + " (" + std::to_string(rows) +
                                "x" + std::to_string(cols) + " float32)");
            }
        };
        check(ml.weight_path, ml.n, ml.m, "weight");
        check(ml.calib_path, ml.r, ml.m, "calibration");

        mf.layers.push_back(std::move(ml));
    }
    return mf;
}

LayerRecord load_layer(const ModelManifest & manifest, std::size_t index) {
    if (index >= manifest.layers.size()) {
        throw Error(ErrorCode::InvalidArgument, "layer index out of range");
    }
    const auto & ml = manifest.layers[index];
    LayerRecord rec;
    rec.name = ml.name;
    rec.weight = load_tensor(manifest.base_dir / ml.weight_path, ml.n, ml.m);
    rec.calibration = load_tensor(manifest.base_dir / ml.calib_path, ml.r, ml.m);
    return rec;
}

LayerRecord synth_layer(std::size_t n, std::size_t m, std::size_t r, uint64_t seed,
                        double correlation, const std::string & name) {
    if (n < 1 || m < 1 || r < 1) {
        throw Error(ErrorCode::InvalidArgument, "synth_layer: n, m, r must be >= 1");
    }
    if (!(correlation >= 0.0 && correlation < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "synth_layer: correlation must be in [0, 1)");
    }

    LayerRecord rec;
    rec.name = name;
    rec.weight = Tensor2D(n, m);
    rec.calibration = Tensor2D(r, m);

    SplitMix64 rng(seed);
    for (auto & w : rec.weight.data) {
        w = (float)rng.next_gaussian();
    }

    // Lower Cholesky factor of the constant-correlation matrix, computed in
    // double. For correlation 0 this is the identity.
    Eigen::MatrixXd corr = Eigen::MatrixXd::Constant((Eigen::Index)m, (Eigen::Index)m, correlation);
    corr.diagonal().setOnes();
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success) {
        throw Error(ErrorCode::NotPositiveDefinite, "synth_layer: correlation matrix factorization");
    }
    Eigen::MatrixXd chol_lower = llt.matrixL();

    Eigen::VectorXd z((Eigen::Index)m);
    for (std::size_t i = 0; i < r; i++) {
        for (std::size_t k = 0; k < m; k++) {
            z((Eigen::Index)k) = rng.next_gaussian();
        }
        Eigen::VectorXd x = chol_lower.triangularView<Eigen::Lower>() * z;
        for (std::size_t k = 0; k < m; k++) {
            rec.calibration.at(i, k) = (float)x((Eigen::Index)k);
        }
    }
    return rec;
}

ModelManifest write_synth_model(const std::filesystem::path & out_dir, std::size_t layers,
                                std::size_t n, std::size_t m, std::size_t r, uint64_t seed,
                                double correlation) {
    if (layers < 1) {
        throw Error(ErrorCode::InvalidArgument, "write_synth_model: need at least one layer");
    }
    std::filesystem::create_directories(out_dir);

    json j;
    j["version"] = 1;
    j["layers"] = json::array();
    for (std::size_t i = 0; i < layers; i++) {
        char name[32];
        std::snprintf(name, sizeof(name), "layer_%03zu", i);
        LayerRecord rec = synth_layer(n, m, r, seed + i, correlation, name);
        const std::string wfile = std::string(name) + ".weight.f32";
        const std::string cfile = std::string(name) + ".calib.f32";
        save_tensor(out_dir / wfile, rec.weight);
        save_tensor(out_dir / cfile, rec.calibration);
        j["layers"].push_back({{"name", name},
                               {"weight", wfile},
                               {"calib", cfile},
                               {"n", n},
                               {"m", m},
                               {"r", r}});
    }
    const auto mpath = out_dir / "manifest.json";
    std::ofstream out(mpath);
    out << j.dump(2) << "\n";
    out.close();
    return load_manifest(mpath);
}

}  // namespace stbq
