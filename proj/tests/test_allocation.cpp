#include "stbq/allocation.hpp"
#include "stbq/error.hpp"
#include "stbq/rng.hpp"

#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cmath>

using namespace stbq;

TEST_SUITE("allocation") {

TEST_CASE("nm_parse and validation") {
    CHECK(nm_parse("4:8") == NMRatio{4, 8});
    CHECK(nm_parse("16:16") == NMRatio{16, 16});
    CHECK(nm_is_valid({1, 4}));
    CHECK(nm_is_valid({8, 8}));
    CHECK(!nm_is_valid({0, 8}));
    CHECK(!nm_is_valid({9, 8}));
    CHECK(!nm_is_valid({3, 6}));  // unsupported bank width
    CHECK_THROWS_AS(nm_parse("4-8"), Error);
    CHECK_THROWS_AS(nm_parse("a:b"), Error);
    CHECK_THROWS_AS(nm_parse("5:32"), Error);
    CHECK_THROWS_AS(nm_validate({0, 8}), Error);
}

TEST_CASE("strategy names round trip") {
    for (AllocStrategy s :
         {AllocStrategy::Adaptive, AllocStrategy::Uniform, AllocStrategy::SinShape}) {
        CHECK(strategy_from_name(strategy_name(s)) == s);
    }
    CHECK_THROWS_AS(strategy_from_name("diagonal"), Error);
}

TEST_CASE("layer_importance is norm-proportional and sums to one") {
    Tensor2D a(1, 1), b(1, 1);
    a.at(0, 0) = 3.0f;
    b.at(0, 0) = -4.0f;
    const std::vector<double> imp = layer_importance({a, b});
    CHECK(imp[0] == doctest::Approx(3.0 / 7.0));
    CHECK(imp[1] == doctest::Approx(4.0 / 7.0));
}

TEST_CASE("layer_importance rejects an all-zero model") {
    Tensor2D z(2, 2);
    try {
        layer_importance({z, z});
        FAIL("expected throw");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::AllZeroModel);
    }
}

TEST_CASE("uniform plan rounds the target once") {
    const AllocationPlan p = uniform_plan(3, 0.5, 8);
    REQUIRE(p.per_layer.size() == 3);
    for (const auto & l : p.per_layer) {
        CHECK(l.nm == NMRatio{4, 8});
    }
    CHECK(p.realized_ratio == doctest::Approx(0.5));
    CHECK(uniform_plan(2, 0.56, 16).per_layer[0].nm.n == 9);  // round(8.96)
}

TEST_CASE("sin-shape keeps more in early layers and averages to the target") {
    const AllocationPlan p = sin_shape_plan(9, 0.5, 16);
    REQUIRE(p.per_layer.size() == 9);
    CHECK(p.per_layer.front().raw_ratio > p.per_layer.back().raw_ratio);
    CHECK(p.per_layer.front().raw_ratio == doctest::Approx(0.5 + 0.25 * std::sin(M_PI * 0.5)));
    CHECK(p.per_layer[4].raw_ratio == doctest::Approx(0.5));  // midpoint hits the target
    double mean_raw = 0.0;
    for (const auto & l : p.per_layer) {
        mean_raw += l.raw_ratio;
    }
    CHECK(mean_raw / 9 == doctest::Approx(0.5).epsilon(1e-9));
    // single layer degenerates to the uniform rule
    const AllocationPlan single = sin_shape_plan(1, 0.5, 8);
    CHECK(single.per_layer[0].nm == NMRatio{4, 8});
    CHECK(single.strategy == AllocStrategy::SinShape);
}

TEST_CASE("assign_nm worked example") {
    // alpha = {0.5, 0.5}, target 0.5: raw = 0.75 -> n = 6 each; repair steps
    // 6,6 -> 5,6 -> 5,5 leave the realized ratio 0.625, within 1/8 of 0.5.
    const AllocationPlan p = assign_nm({0.5, 0.5}, 0.5, 8, true);
    REQUIRE(p.per_layer.size() == 2);
    CHECK(p.per_layer[0].raw_ratio == doctest::Approx(0.75));
    CHECK(p.per_layer[0].nm.n == 5);
    CHECK(p.per_layer[1].nm.n == 5);
    CHECK(p.realized_ratio == doctest::Approx(0.625));
    CHECK(std::fabs(p.realized_ratio - 0.5) <= 1.0 / 8.0 + 1e-12);
}

TEST_CASE("assign_nm without renormalization keeps the raw rounding") {
    const AllocationPlan p = assign_nm({0.5, 0.5}, 0.5, 8, false);
    CHECK(p.per_layer[0].nm.n == 6);
    CHECK(p.per_layer[1].nm.n == 6);
}

TEST_CASE("a fully dominant layer keeps everything in the raw formula") {
    const AllocationPlan p = assign_nm({1.0, 0.0, 0.0}, 0.25, 8, false);
    CHECK(p.per_layer[0].raw_ratio == doctest::Approx(1.0));
    CHECK(p.per_layer[0].nm.n == 8);
    CHECK(p.per_layer[1].raw_ratio == doctest::Approx(0.25));
    CHECK(p.per_layer[1].nm.n == 2);
}

TEST_CASE("renormalized plans land within 1/m of the target") {
    SplitMix64 rng(271828);
    static const int kWidths[] = {4, 8, 16};
    for (int trial = 0; trial < 60; trial++) {
        const int m = kWidths[rng.next_u64() % 3];
        const std::size_t layers = 2 + rng.next_u64() % 31;
        std::vector<double> imp(layers);
        double total = 0.0;
        for (auto & v : imp) {
            v = rng.next_unit() + 1e-3;
            total += v;
        }
        for (auto & v : imp) {
            v /= total;
        }
        const double target = (double)(1 + rng.next_u64() % m) / (double)m;
        std::vector<std::size_t> params(layers);
        for (auto & v : params) {
            v = 64 + rng.next_u64() % 4096;
        }
        const AllocationPlan p = assign_nm(imp, target, m, true, params);
        CHECK(std::fabs(p.realized_ratio - target) <= 1.0 / m + 1e-12);
        for (const auto & l : p.per_layer) {
            CHECK(l.nm.n >= 1);
            CHECK(l.nm.n <= m);
        }
    }
}

TEST_CASE("assign_nm input validation") {
    CHECK_THROWS_AS(assign_nm({0.5, 0.4}, 0.5, 8, true), Error);   // does not sum to 1
    CHECK_THROWS_AS(assign_nm({1.0}, 0.0, 8, true), Error);        // target out of range
    CHECK_THROWS_AS(assign_nm({1.0}, 1.5, 8, true), Error);
    CHECK_THROWS_AS(assign_nm({1.0}, 0.5, 6, true), Error);        // bad bank width
    CHECK_THROWS_AS(assign_nm({}, 0.5, 8, true), Error);
}

TEST_CASE("plan JSON carries the per-layer assignments") {
    const AllocationPlan p = assign_nm({0.3, 0.7}, 0.5, 8, true, {100, 300}, {"attn", "mlp"});
    const auto j = nlohmann::json::parse(p.to_json());
    CHECK(j["strategy"] == "adaptive");
    CHECK(j["target_ratio"] == doctest::Approx(0.5));
    CHECK(j["m"] == 8);
    REQUIRE(j["layers"].size() == 2);
    CHECK(j["layers"][0]["name"] == "attn");
    CHECK(j["layers"][1]["name"] == "mlp");
    CHECK(j["layers"][0]["n"].get<int>() >= 1);
    CHECK(j.contains("realized_ratio"));
}

}  // allocation
