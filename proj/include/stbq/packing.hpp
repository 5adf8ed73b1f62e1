#pragma once

#include "stbq/quantizer.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace stbq {

// Average-bit accounting for one packed layer. avg_bits_nominal follows the
// n_param * n/m formula (mask indices and region codes excluded);
// avg_bits_packed is the honest figure: packed bytes * 8 / element count.
struct BitReport {
    double r_salient = 0.0;  // salient kept entries / kept entries
    std::size_t b_size = 0;  // block size
    int n = 0;
    int m = 0;
    double n_param = 0.0;    // 1 + r_salient
    double n_storing = 0.0;  // 2 + 1/b_size
    double avg_bits_nominal = 0.0;
    double avg_bits_packed = 0.0;
};

// Layout, all integers little-endian, bitstreams MSB-first and zero-padded to
// a byte boundary per stream:
//   "STBL" | version u16 | name_len u16 + name | rows u32 | cols u32 |
//   beta u16 | n u8 | m u8 | flags u16 | block_count u32 | blocks...
// Each block:
//   col_start u32 | col_end u32 | salient_count u16 + block-local columns
//   (u16 each) | kept-index stream (ceil(log2 m) bits per kept entry, in-bank
//   offset, row-major, min(n, bank width) entries per bank) | region-code
//   stream (2 bits per kept non-salient entry: 0 sparse, 1 intermediate,
//   2 dense) | salient sign plane, then residual sign plane (1 bit per kept
//   salient entry, 1 = +1) | non-salient sign stream | p1 f32 | p2 f32 |
//   per-row scales (alpha_base, alpha_residual, alpha_sparse,
//   alpha_intermediate, alpha_dense as f32).
// sigma_ratio is not stored; decode derives it as p2/p1.
std::vector<uint8_t> encode(const StructuredBinaryLayer & layer);
StructuredBinaryLayer decode(const std::vector<uint8_t> & bytes);

void save_packed(const std::filesystem::path & path, const StructuredBinaryLayer & layer);
StructuredBinaryLayer load_packed(const std::filesystem::path & path);

BitReport bit_report(const StructuredBinaryLayer & layer, std::size_t packed_size_bytes);

}  // namespace stbq
