#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace stbq {

// Dense row-major float32 matrix. Carrier for weights (n x m) and
// calibration activations (r x d with d = m).
struct Tensor2D {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;  // rows * cols, row-major

    Tensor2D() = default;
    Tensor2D(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float & at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    float at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::size_t size() const { return rows * cols; }

    bool operator==(const Tensor2D &) const = default;
};

// Throws NonFiniteValue naming the first offending flat index.
void validate_finite(const Tensor2D & t, const std::string & context);

struct LayerRecord {
    std::string name;
    Tensor2D weight;       // n x m
    Tensor2D calibration;  // r x m
};

struct ManifestLayer {
    std::string name;
    std::string weight_path;  // relative to the manifest directory
    std::string calib_path;
    std::size_t n = 0;  // weight rows
    std::size_t m = 0;  // weight cols = calibration cols
    std::size_t r = 0;  // calibration rows
};

struct ModelManifest {
    int version = 1;
    std::filesystem::path base_dir;  // directory the relative paths resolve against
    std::vector<ManifestLayer> layers;
};

// Raw little-endian float32, row-major, no header; shape comes from the caller.
Tensor2D load_tensor(const std::filesystem::path & path, std::size_t rows, std::size_t cols);
void save_tensor(const std::filesystem::path & path, const Tensor2D & t);

// Parses manifest.json and validates it: unique layer names, referenced files
// exist, file sizes match the declared shapes.
ModelManifest load_manifest(const std::filesystem::path & path);

// Decodes the tensors behind one manifest entry.
LayerRecord load_layer(const ModelManifest & manifest, std::size_t index);

// Deterministic synthetic layer: weight entries are iid standard normal,
// calibration rows are N(0, C) with C the constant-correlation matrix
// (1 on the diagonal, `correlation` elsewhere), realized as x = L z with
// L the lower Cholesky factor of C. Identical arguments give bit-identical
// tensors.
LayerRecord synth_layer(std::size_t n, std::size_t m, std::size_t r, uint64_t seed,
                        double correlation, const std::string & name = "synth");

// Writes a full synthetic model (manifest.json + .f32 tensors) into out_dir.
// Layer i uses seed + i.
ModelManifest write_synth_model(const std::filesystem::path & out_dir, std::size_t layers,
                                std::size_t n, std::size_t m, std::size_t r, uint64_t seed,
                                double correlation);

}  // namespace stbq
