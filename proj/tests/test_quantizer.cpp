#include "stbq/error.hpp"
#include "stbq/quantizer.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace stbq;

namespace {

std::vector<uint8_t> full_support(std::size_t n) {
    return std::vector<uint8_t>(n, 1);
}

double rec_error_sq(const Tensor2D & w, const Tensor2D & rec) {
    double err = 0.0;
    for (std::size_t k = 0; k < w.size(); k++) {
        const double d = (double)w.data[k] - (double)rec.data[k];
        err += d * d;
    }
    return err;
}

}  // namespace

TEST_SUITE("quantizer") {

TEST_CASE("binarize_rowwise hand example") {
    Tensor2D w(1, 3);
    w.at(0, 0) = 1.0f;
    w.at(0, 1) = -2.0f;
    w.at(0, 2) = 3.0f;
    const BinaryAtom a = binarize_rowwise(w, full_support(3));
    CHECK(a.alpha[0] == doctest::Approx(2.0));
    CHECK(a.signs[0] == 1);
    CHECK(a.signs[1] == -1);
    CHECK(a.signs[2] == 1);
}

TEST_CASE("binarize_rowwise: zero maps to +1, off-support entries stay out") {
    Tensor2D w(1, 4);
    w.at(0, 0) = 0.0f;
    w.at(0, 1) = -5.0f;
    w.at(0, 2) = 100.0f;  // excluded
    w.at(0, 3) = 1.0f;
    std::vector<uint8_t> sup = {1, 1, 0, 1};
    const BinaryAtom a = binarize_rowwise(w, sup);
    CHECK(a.alpha[0] == doctest::Approx(2.0));  // (0 + 5 + 1)/3
    CHECK(a.signs[0] == 1);
    CHECK(a.signs[2] == 0);
    CHECK(a.support == sup);
}

TEST_CASE("binarize_rowwise: empty row keeps alpha 0") {
    Tensor2D w(2, 2);
    w.at(1, 0) = 3.0f;
    std::vector<uint8_t> sup = {0, 0, 1, 0};
    const BinaryAtom a = binarize_rowwise(w, sup);
    CHECK(a.alpha[0] == 0.0f);
    CHECK(a.alpha[1] == doctest::Approx(3.0));
    CHECK_THROWS_AS(binarize_rowwise(w, full_support(3)), Error);  // bad support size
}

TEST_CASE("mean-|w| scale beats every sign pattern") {
    SplitMix64 rng(515);
    for (int trial = 0; trial < 50; trial++) {
        const std::size_t len = 1 + rng.next_u64() % 4;
        Tensor2D w(1, len);
        std::vector<float> row(len);
        for (std::size_t j = 0; j < len; j++) {
            w.at(0, j) = row[j] = (float)rng.next_gaussian();
        }
        const BinaryAtom a = binarize_rowwise(w, full_support(len));
        double err = 0.0;
        for (std::size_t j = 0; j < len; j++) {
            const double d = (double)row[j] - (double)a.alpha[0] * a.signs[j];
            err += d * d;
        }
        CHECK(err <= oracle::best_pattern_error(row));
    }
}

TEST_CASE("apply_nm_mask hand example with ties") {
    // one row, one bank of 4: scores 2, 5, 5, 1 with n = 2 -> keep cols 1, 2
    ScoreMatrix s(1, 4);
    s.scores = {2.0f, 5.0f, 5.0f, 1.0f};
    const std::vector<uint8_t> mask = apply_nm_mask(s, 2, 4, 0);
    CHECK(mask == std::vector<uint8_t>{0, 1, 1, 0});
}

TEST_CASE("apply_nm_mask straddles bank boundaries by absolute column") {
    // slice starts at absolute column 2 with m = 4: first bank holds slice
    // cols 0..1, the next holds 2..5, the last holds 6..7 (partial).
    ScoreMatrix s(1, 8);
    s.scores = {9, 1, 1, 9, 1, 1, 9, 1};
    const std::vector<uint8_t> mask = apply_nm_mask(s, 1, 4, 2);
    CHECK(mask == std::vector<uint8_t>{1, 0, 0, 1, 0, 0, 1, 0});
}

TEST_CASE("apply_nm_mask keeps whole banks smaller than n") {
    ScoreMatrix s(1, 2);
    s.scores = {1.0f, 2.0f};
    CHECK(apply_nm_mask(s, 3, 4, 0) == std::vector<uint8_t>{1, 1});
}

TEST_CASE("apply_nm_mask agrees with the reference on fuzzed slices") {
    SplitMix64 rng(626);
    static const int kWidths[] = {4, 8, 16};
    for (int trial = 0; trial < 100; trial++) {
        const int m = kWidths[rng.next_u64() % 3];
        const int n = 1 + (int)(rng.next_u64() % m);
        const std::size_t rows = 1 + rng.next_u64() % 5;
        const std::size_t cols = 1 + rng.next_u64() % (3 * m);
        const std::size_t offset = rng.next_u64() % (2 * m);
        ScoreMatrix s(rows, cols);
        for (auto & v : s.scores) {
            // coarse grid forces frequent ties
            v = (float)((int)(rng.next_u64() % 8));
        }
        CHECK(apply_nm_mask(s, n, m, offset) == oracle::nm_mask_reference(s, n, m, offset));
    }
}

TEST_CASE("select_salient matches brute force on small blocks") {
    SplitMix64 rng(737);
    for (int trial = 0; trial < 20; trial++) {
        const Tensor2D w = oracle::gaussian_tensor(8, 8, rng.next_u64());
        std::vector<uint8_t> mask(w.size(), 1);
        if (trial % 2 == 1) {  // alternate between full and random masks
            mask = oracle::random_support(w.size(), 0.7, rng.next_u64());
            bool any = false;
            for (auto v : mask) {
                any |= v;
            }
            if (!any) {
                mask[0] = 1;
            }
        }
        std::vector<double> diag(8);
        for (auto & d : diag) {
            d = 0.25 + rng.next_unit();
        }
        const std::vector<uint32_t> cols = select_salient(w, mask, diag, 1.0);
        CHECK(cols.size() == oracle::salient_prefix_reference(w, mask, diag, 8));
        for (std::size_t i = 1; i < cols.size(); i++) {
            CHECK(cols[i - 1] < cols[i]);  // sorted, unique
        }
        CHECK(cols.size() >= 1);
    }
}

TEST_CASE("select_salient honors the budget cap") {
    const Tensor2D w = oracle::gaussian_tensor(6, 10, 99);
    std::vector<double> diag(10, 1.0);
    const auto cols = select_salient(w, full_support(w.size()), diag, 0.2);
    CHECK(cols.size() <= 2);  // ceil(0.2 * 10)
    CHECK(cols.size() >= 1);
}

TEST_CASE("select_salient rejects a degenerate Cholesky diagonal") {
    const Tensor2D w = oracle::gaussian_tensor(2, 3, 1);
    try {
        select_salient(w, full_support(w.size()), {1.0, 0.0, 1.0}, 1.0);
        FAIL("expected throw");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::DegenerateHessian);
    }
}

TEST_CASE("residual stage never increases the error") {
    SplitMix64 rng(848);
    int checked = 0;
    for (int trial = 0; trial < 200; trial++) {
        const std::size_t len = 2 + rng.next_u64() % 15;
        Tensor2D w(1, len);
        for (auto & v : w.data) {
            v = (float)rng.next_gaussian();
        }
        const auto sup = full_support(len);
        const BinaryAtom one = binarize_rowwise(w, sup);
        const auto [base, resid] = residual_binarize(w, sup);
        double err1 = 0.0, err2 = 0.0;
        for (std::size_t j = 0; j < len; j++) {
            const double d1 = (double)w.data[j] - (double)one.alpha[0] * one.signs[j];
            const double d2 = (double)w.data[j] - ((double)base.alpha[0] * base.signs[j] +
                                                   (double)resid.alpha[0] * resid.signs[j]);
            err1 += d1 * d1;
            err2 += d2 * d2;
        }
        CHECK(err2 <= err1);
        checked++;
    }
    CHECK(checked == 200);
}

TEST_CASE("trisection_search equals the exhaustive reference") {
    SplitMix64 rng(959);
    for (int trial = 0; trial < 6; trial++) {
        const Tensor2D w = oracle::gaussian_tensor(16, 16, rng.next_u64());
        auto sup = oracle::random_support(w.size(), 0.8, rng.next_u64());
        sup[0] = 1;
        double got_err = 0.0;
        const TrisectionParams p = trisection_search(w, sup, 2.0f, 160, &got_err);
        const oracle::TrisectionRef ref = oracle::trisection_reference(w, sup, 2.0, 160);
        REQUIRE(ref.feasible);
        CHECK(got_err == doctest::Approx(ref.err).epsilon(1e-9));
        CHECK(p.p1 == (float)ref.p1);
        CHECK(p.p2 == (float)ref.p2);
    }
}

TEST_CASE("trisection_search failure modes") {
    const Tensor2D w = oracle::gaussian_tensor(4, 4, 3);
    // sigma 10: even the smallest break point lands p2 = 1.0 max|w| > 0.9 max|w|
    try {
        trisection_search(w, full_support(w.size()), 10.0f, 160, nullptr);
        FAIL("expected throw");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::NoFeasibleCandidate);
        CHECK(is_numerical_error(e.code()));
    }
    CHECK_THROWS_AS(trisection_search(w, std::vector<uint8_t>(w.size(), 0), 2.0f, 160, nullptr),
                    Error);  // empty support
    CHECK_THROWS_AS(trisection_search(w, full_support(w.size()), 1.0f, 160, nullptr), Error);
    CHECK_THROWS_AS(trisection_search(w, full_support(w.size()), 2.0f, 1, nullptr), Error);
}

TEST_CASE("trisection at the feasibility edge keeps the single candidate") {
    // sigma 9 leaves exactly the first grid point (0.1 * 9 = 0.9) feasible
    const Tensor2D w = oracle::gaussian_tensor(4, 8, 4);
    const TrisectionParams p = trisection_search(w, full_support(w.size()), 9.0f, 160, nullptr);
    double maxabs = 0.0;
    for (float v : w.data) {
        maxabs = std::max(maxabs, (double)std::fabs(v));
    }
    CHECK(p.p1 == doctest::Approx(0.1 * maxabs));
    CHECK(p.p2 == doctest::Approx(0.9 * maxabs));
}

TEST_CASE("trisection_quantize splits by magnitude with inclusive dense edge") {
    Tensor2D w(1, 6);
    const float vals[] = {0.05f, -0.2f, 0.2f, 0.3f, -0.9f, 0.0f};
    for (std::size_t j = 0; j < 6; j++) {
        w.at(0, j) = vals[j];
    }
    std::vector<uint8_t> sup = {1, 1, 1, 1, 1, 0};
    const TrisectionResult r = trisection_quantize(w, sup, {0.2f, 0.4f, 2.0f});
    CHECK(r.codes[0] == RegionCode::Dense);          // 0.05 <= p1
    CHECK(r.codes[1] == RegionCode::Dense);          // |-0.2| == p1, inclusive
    CHECK(r.codes[2] == RegionCode::Dense);
    CHECK(r.codes[3] == RegionCode::Intermediate);   // p1 < 0.3 <= p2
    CHECK(r.codes[4] == RegionCode::Sparse);         // 0.9 > p2
    CHECK(r.codes[5] == RegionCode::Pruned);         // off support
}

TEST_CASE("trisection regions partition the support") {
    const Tensor2D w = oracle::gaussian_tensor(8, 8, 8);
    const auto sup = oracle::random_support(w.size(), 0.6, 1);
    const TrisectionParams p = trisection_search(w, sup, 2.0f, 160, nullptr);
    const TrisectionResult r = trisection_quantize(w, sup, p);
    for (std::size_t k = 0; k < w.size(); k++) {
        const int members = (int)r.sparse.support[k] + r.intermediate.support[k] +
                            r.dense.support[k];
        if (sup[k]) {
            CHECK(members == 1);
            CHECK(r.codes[k] != RegionCode::Pruned);
        } else {
            CHECK(members == 0);
            CHECK(r.codes[k] == RegionCode::Pruned);
        }
    }
}

TEST_CASE("quantize_block invariants") {
    SplitMix64 rng(1171);
    const Tensor2D w = oracle::gaussian_tensor(12, 32, 12);
    ScoreMatrix scores(12, 32);
    for (auto & v : scores.scores) {
        v = (float)rng.next_gaussian();
    }
    std::vector<double> diag(16, 1.0);
    for (auto & d : diag) {
        d = 0.5 + rng.next_unit();
    }
    QuantizerParams qp;
    const BlockQuantResult blk = quantize_block(w, 8, 24, scores, {4, 8}, diag, qp);

    CHECK(blk.width() == 16);
    CHECK(blk.rows == 12);
    // every kept entry has exactly one region; pruned entries have none
    std::vector<uint8_t> expect_mask = blk.nm_mask;
    for (std::size_t i = 0; i < 12; i++) {
        for (std::size_t j = 0; j < 16; j++) {
            const std::size_t k = i * 16 + j;
            if (expect_mask[k]) {
                CHECK(blk.region_codes[k] != RegionCode::Pruned);
            } else {
                CHECK(blk.region_codes[k] == RegionCode::Pruned);
            }
        }
    }
    // per-bank cardinality: block is bank-aligned (8 % 8 == 0), all banks full
    for (std::size_t i = 0; i < 12; i++) {
        for (std::size_t b = 0; b < 16; b += 8) {
            int kept = 0;
            for (std::size_t j = b; j < b + 8; j++) {
                kept += expect_mask[i * 16 + j] ? 1 : 0;
            }
            CHECK(kept == 4);
        }
    }
    // salient columns are whole masked columns
    for (uint32_t c : blk.salient_cols) {
        for (std::size_t i = 0; i < 12; i++) {
            const std::size_t k = i * 16 + c;
            if (expect_mask[k]) {
                CHECK(blk.region_codes[k] == RegionCode::Salient);
            }
        }
    }
    CHECK(blk.salient_cols.size() >= 1);
    CHECK(blk.salient_cols.size() <= (std::size_t)std::ceil(0.3 * 16));
}

TEST_CASE("reconstruct_block composes the salient planes") {
    const Tensor2D w = oracle::gaussian_tensor(6, 16, 21);
    ScoreMatrix scores(6, 16);
    for (std::size_t k = 0; k < scores.scores.size(); k++) {
        scores.scores[k] = std::fabs(w.data[k]);
    }
    std::vector<double> diag(16, 1.0);
    const BlockQuantResult blk = quantize_block(w, 0, 16, scores, {4, 8}, diag, {});
    const Tensor2D rec = reconstruct_block(blk);
    for (std::size_t i = 0; i < 6; i++) {
        for (std::size_t j = 0; j < 16; j++) {
            const std::size_t k = i * 16 + j;
            const RegionCode code = blk.region_codes[k];
            if (code == RegionCode::Pruned) {
                CHECK(rec.at(i, j) == 0.0f);
            } else if (code == RegionCode::Salient) {
                const float expect =
                    (float)((double)blk.salient_base.alpha[i] * blk.salient_base.signs[k] +
                            (double)blk.salient_residual.alpha[i] * blk.salient_residual.signs[k]);
                CHECK(rec.at(i, j) == expect);
            } else {
                const BinaryAtom & atom = region_atom(blk, code);
                CHECK(rec.at(i, j) == atom.alpha[i] * (float)atom.signs[k]);
            }
        }
    }
    CHECK(std::isfinite(rec_error_sq(w, rec)));
}

TEST_CASE("reconstruct stitches blocks back in place") {
    const Tensor2D w = oracle::gaussian_tensor(4, 16, 31);
    ScoreMatrix scores(4, 16);
    for (std::size_t k = 0; k < scores.scores.size(); k++) {
        scores.scores[k] = std::fabs(w.data[k]);
    }
    StructuredBinaryLayer layer;
    layer.name = "t";
    layer.rows = 4;
    layer.cols = 16;
    layer.block_size = 8;
    layer.nm = {4, 8};
    std::vector<double> diag(8, 1.0);
    layer.blocks.push_back(quantize_block(w, 0, 8, scores, {4, 8}, diag, {}));
    layer.blocks.push_back(quantize_block(w, 8, 16, scores, {4, 8}, diag, {}));
    const Tensor2D whole = reconstruct(layer);
    const Tensor2D left = reconstruct_block(layer.blocks[0]);
    const Tensor2D right = reconstruct_block(layer.blocks[1]);
    for (std::size_t i = 0; i < 4; i++) {
        for (std::size_t j = 0; j < 8; j++) {
            CHECK(whole.at(i, j) == left.at(i, j));
            CHECK(whole.at(i, j + 8) == right.at(i, j));
        }
    }
}

TEST_CASE("region_atom only hands out trisection regions") {
    BlockQuantResult blk;
    CHECK_THROWS_AS(region_atom(blk, RegionCode::Salient), Error);
    CHECK_THROWS_AS(region_atom(blk, RegionCode::Pruned), Error);
    CHECK(&region_atom(blk, RegionCode::Sparse) == &blk.sparse_atom);
    CHECK(&region_atom(blk, RegionCode::Dense) == &blk.dense_atom);
}

}  // quantizer
