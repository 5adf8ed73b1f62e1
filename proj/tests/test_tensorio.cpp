#include "stbq/error.hpp"
#include "stbq/rng.hpp"
#include "stbq/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace stbq;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char * tag) {
        path = fs::temp_directory_path() / (std::string("stbq_") + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_SUITE("rng") {

TEST_CASE("splitmix64 reference outputs, seed 0") {
    SplitMix64 g(0);
    CHECK(g.next_u64() == 0xE220A8397B1DCDAFULL);
    CHECK(g.next_u64() == 0x6E789E6AA1B965F4ULL);
    CHECK(g.next_u64() == 0x06C45D188009454FULL);
}

TEST_CASE("splitmix64 reference outputs, seed 1234567") {
    SplitMix64 g(1234567);
    CHECK(g.next_u64() == 6457827717110365317ULL);
    CHECK(g.next_u64() == 3203168211198807973ULL);
    CHECK(g.next_u64() == 9817491932198370423ULL);
    CHECK(g.next_u64() == 4593380528125082431ULL);
    CHECK(g.next_u64() == 16408922859458223821ULL);
}

TEST_CASE("next_unit stays in [0, 1)") {
    SplitMix64 g(42);
    for (int i = 0; i < 10000; i++) {
        const double u = g.next_unit();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("next_gaussian has roughly standard moments") {
    SplitMix64 g(7);
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; i++) {
        const double v = g.next_gaussian();
        REQUIRE(std::isfinite(v));
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    CHECK(std::fabs(mean) < 0.05);
    CHECK(std::fabs(sd - 1.0) < 0.05);
}

TEST_CASE("mix splits streams") {
    CHECK(SplitMix64::mix(1, 2) != SplitMix64::mix(2, 1));
    CHECK(SplitMix64::mix(0, 0) == SplitMix64::mix(0, 0));
    SplitMix64 a(SplitMix64::mix(5, 0)), b(SplitMix64::mix(5, 1));
    CHECK(a.next_u64() != b.next_u64());
}

}  // rng

TEST_SUITE("tensorio") {

TEST_CASE("tensor save/load round trip") {
    TempDir tmp("tensor_rt");
    Tensor2D t(3, 5);
    SplitMix64 g(11);
    for (auto & v : t.data) {
        v = (float)g.next_gaussian();
    }
    save_tensor(tmp.path / "t.f32", t);
    const Tensor2D back = load_tensor(tmp.path / "t.f32", 3, 5);
    CHECK(back == t);
}

TEST_CASE("load_tensor rejects wrong sizes and missing files") {
    TempDir tmp("tensor_bad");
    Tensor2D t(2, 2);
    save_tensor(tmp.path / "t.f32", t);
    CHECK_THROWS_AS(load_tensor(tmp.path / "t.f32", 2, 3), Error);
    CHECK_THROWS_AS(load_tensor(tmp.path / "nope.f32", 2, 2), Error);
    try {
        load_tensor(tmp.path / "nope.f32", 2, 2);
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::MissingFile);
    }
}

TEST_CASE("validate_finite names the bad entry") {
    Tensor2D t(2, 2);
    t.at(1, 0) = std::numeric_limits<float>::quiet_NaN();
    try {
        validate_finite(t, "unit");
        FAIL("expected throw");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::NonFiniteValue);
        CHECK(std::string(e.what()).find("flat index 2") != std::string::npos);
    }
}

TEST_CASE("synth_layer is deterministic in its arguments") {
    const LayerRecord a = synth_layer(4, 6, 5, 99, 0.5);
    const LayerRecord b = synth_layer(4, 6, 5, 99, 0.5);
    const LayerRecord c = synth_layer(4, 6, 5, 100, 0.5);
    CHECK(a.weight == b.weight);
    CHECK(a.calibration == b.calibration);
    CHECK(a.weight.rows == 4);
    CHECK(a.weight.cols == 6);
    CHECK(a.calibration.rows == 5);
    CHECK(a.calibration.cols == 6);
    CHECK(!(a.weight == c.weight));
}

TEST_CASE("synth correlation raises cross-feature correlation") {
    auto mean_abs_corr = [](const Tensor2D & x) {
        const std::size_t r = x.rows, m = x.cols;
        std::vector<double> mu(m, 0.0), sd(m, 0.0);
        for (std::size_t j = 0; j < m; j++) {
            for (std::size_t i = 0; i < r; i++) {
                mu[j] += x.at(i, j);
            }
            mu[j] /= (double)r;
            for (std::size_t i = 0; i < r; i++) {
                sd[j] += (x.at(i, j) - mu[j]) * (x.at(i, j) - mu[j]);
            }
            sd[j] = std::sqrt(sd[j] / r);
        }
        double acc = 0.0;
        int cnt = 0;
        for (std::size_t a = 0; a < m; a++) {
            for (std::size_t b = a + 1; b < m; b++) {
                double cov = 0.0;
                for (std::size_t i = 0; i < r; i++) {
                    cov += (x.at(i, a) - mu[a]) * (x.at(i, b) - mu[b]);
                }
                acc += std::fabs(cov / r / (sd[a] * sd[b]));
                cnt++;
            }
        }
        return acc / cnt;
    };
    const LayerRecord hi = synth_layer(2, 8, 4000, 3, 0.8);
    const LayerRecord lo = synth_layer(2, 8, 4000, 3, 0.0);
    CHECK(mean_abs_corr(hi.calibration) > 0.6);
    CHECK(mean_abs_corr(lo.calibration) < 0.2);
}

TEST_CASE("write_synth_model round trips through the manifest") {
    TempDir tmp("synth_model");
    const ModelManifest written = write_synth_model(tmp.path, 3, 4, 8, 6, 2024, 0.5);
    CHECK(written.layers.size() == 3);
    CHECK(written.layers[0].name == "layer_000");
    CHECK(written.layers[2].name == "layer_002");

    const ModelManifest loaded = load_manifest(tmp.path / "manifest.json");
    REQUIRE(loaded.layers.size() == 3);
    for (std::size_t i = 0; i < 3; i++) {
        const LayerRecord rec = load_layer(loaded, i);
        const LayerRecord direct = synth_layer(4, 8, 6, 2024 + i, 0.5, rec.name);
        CHECK(rec.weight == direct.weight);
        CHECK(rec.calibration == direct.calibration);
    }
}

TEST_CASE("load_manifest rejects a tensor of the wrong size") {
    TempDir tmp("bad_manifest");
    write_synth_model(tmp.path, 1, 4, 8, 6, 1, 0.5);
    // truncate the weight file behind the manifest's back
    const ModelManifest m = load_manifest(tmp.path / "manifest.json");
    std::ofstream f(m.base_dir / m.layers[0].weight_path, std::ios::binary | std::ios::trunc);
    f << "xx";
    f.close();
    CHECK_THROWS_AS(load_manifest(tmp.path / "manifest.json"), Error);
}

TEST_CASE("load_manifest missing file") {
    CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.json"), Error);
}

}  // tensorio
