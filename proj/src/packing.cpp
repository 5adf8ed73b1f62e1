#include "stbq/packing.hpp"

#include "stbq/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace stbq {

static constexpr char kMagic[4] = {'S', 'T', 'B', 'L'};
static constexpr uint16_t kVersion = 1;

static int ceil_log2(int m) {
    int b = 0;
    while ((1 << b) < m) {
        b++;
    }
    return b;
}

namespace {

struct ByteWriter {
    std::vector<uint8_t> out;

    void u8(uint8_t v) { out.push_back(v); }
    void u16(uint16_t v) {
        out.push_back((uint8_t)(v & 0xff));
        out.push_back((uint8_t)(v >> 8));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; i++) {
            out.push_back((uint8_t)(v >> (8 * i)));
        }
    }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void bytes(const void * p, std::size_t len) {
        const uint8_t * b = (const uint8_t *)p;
        out.insert(out.end(), b, b + len);
    }
};

struct BitWriter {
    ByteWriter & bw;
    uint8_t cur = 0;
    int filled = 0;

    explicit BitWriter(ByteWriter & w) : bw(w) {}

    void put(uint32_t value, int bits) {  // MSB of the window first
        for (int i = bits - 1; i >= 0; i--) {
            cur = (uint8_t)((cur << 1) | ((value >> i) & 1u));
            if (++filled == 8) {
                bw.u8(cur);
                cur = 0;
                filled = 0;
            }
        }
    }
    void pad() {
        if (filled > 0) {
            bw.u8((uint8_t)(cur << (8 - filled)));
            cur = 0;
            filled = 0;
        }
    }
};

struct ByteReader {
    const std::vector<uint8_t> & in;
    std::size_t pos = 0;

    explicit ByteReader(const std::vector<uint8_t> & b) : in(b) {}

    void need(std::size_t n) const {
        if (pos + n > in.size()) {
            throw Error(ErrorCode::TruncatedStream,
                        "packed stream ends at byte " + std::to_string(in.size()) + ", needed " +
                            std::to_string(n) + " more at offset " + std::to_string(pos));
        }
    }
    uint8_t u8() {
        need(1);
        return in[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = (uint16_t)(in[pos] | (in[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; i++) {
            v |= (uint32_t)in[pos + i] << (8 * i);
        }
        pos += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t len) {
        need(len);
        std::string s((const char *)in.data() + pos, len);
        pos += len;
        return s;
    }
};

struct BitReader {
    ByteReader & br;
    uint8_t cur = 0;
    int left = 0;

    explicit BitReader(ByteReader & r) : br(r) {}

    uint32_t get(int bits) {
        uint32_t v = 0;
        for (int i = 0; i < bits; i++) {
            if (left == 0) {
                cur = br.u8();
                left = 8;
            }
            v = (v << 1) | ((cur >> 7) & 1u);
            cur = (uint8_t)(cur << 1);
            left--;
        }
        return v;
    }
    void align() {
        cur = 0;
        left = 0;
    }
};

}  // namespace

// in-bank segments [lo, hi) of a block, in block-local columns
static std::vector<std::pair<std::size_t, std::size_t>> bank_segments(std::size_t col_start,
                                                                      std::size_t col_end, int m) {
    std::vector<std::pair<std::size_t, std::size_t>> segs;
    const std::size_t width = col_end - col_start;
    for (std::size_t bank = col_start / m * m; bank < col_end; bank += m) {
        const std::size_t lo = bank > col_start ? bank - col_start : 0;
        const std::size_t hi = std::min(width, bank + m - col_start);
        segs.push_back({lo, hi});
    }
    return segs;
}

std::vector<uint8_t> encode(const StructuredBinaryLayer & layer) {
    if (layer.nm.m > 255 || layer.nm.n > 255) {
        throw Error(ErrorCode::OverflowingIndex, "encode: bank width exceeds the format's u8");
    }
    if (layer.block_size > 0xffff || layer.name.size() > 0xffff) {
        throw Error(ErrorCode::OverflowingIndex, "encode: header field exceeds the format's u16");
    }
    ByteWriter w;
    w.bytes(kMagic, 4);
    w.u16(kVersion);
    w.u16((uint16_t)layer.name.size());
    w.bytes(layer.name.data(), layer.name.size());
    w.u32((uint32_t)layer.rows);
    w.u32((uint32_t)layer.cols);
    w.u16((uint16_t)layer.block_size);
    w.u8((uint8_t)layer.nm.n);
    w.u8((uint8_t)layer.nm.m);
    w.u16(0);  // flags, reserved
    w.u32((uint32_t)layer.blocks.size());

    const int idx_bits = ceil_log2(layer.nm.m);
    for (const auto & blk : layer.blocks) {
        const std::size_t width = blk.width();
        if (width > 0xffff || blk.salient_cols.size() > 0xffff) {
            throw Error(ErrorCode::OverflowingIndex, "encode: block width exceeds the format's u16");
        }
        w.u32((uint32_t)blk.col_start);
        w.u32((uint32_t)blk.col_end);
        w.u16((uint16_t)blk.salient_cols.size());
        for (uint32_t c : blk.salient_cols) {
            w.u16((uint16_t)c);
        }

        const auto segs = bank_segments(blk.col_start, blk.col_end, layer.nm.m);

        BitWriter kept(w);
        for (std::size_t i = 0; i < blk.rows; i++) {
            for (const auto & [lo, hi] : segs) {
                for (std::size_t j = lo; j < hi; j++) {
                    if (blk.nm_mask[i * width + j]) {
                        const std::size_t abs = blk.col_start + j;
                        kept.put((uint32_t)(abs % layer.nm.m), idx_bits);
                    }
                }
            }
        }
        kept.pad();

        BitWriter codes(w);
        for (std::size_t k = 0; k < blk.region_codes.size(); k++) {
            switch (blk.region_codes[k]) {
                case RegionCode::Sparse:       codes.put(0, 2); break;
                case RegionCode::Intermediate: codes.put(1, 2); break;
                case RegionCode::Dense:        codes.put(2, 2); break;
                default:                       break;
            }
        }
        codes.pad();

        for (const BinaryAtom * atom : {&blk.salient_base, &blk.salient_residual}) {
            BitWriter plane(w);
            for (std::size_t k = 0; k < blk.region_codes.size(); k++) {
                if (blk.region_codes[k] == RegionCode::Salient) {
                    plane.put(atom->signs[k] > 0 ? 1u : 0u, 1);
                }
            }
            plane.pad();
        }

        BitWriter ns(w);
        for (std::size_t k = 0; k < blk.region_codes.size(); k++) {
            const RegionCode c = blk.region_codes[k];
            if (c == RegionCode::Sparse || c == RegionCode::Intermediate ||
                c == RegionCode::Dense) {
                ns.put(region_atom(blk, c).signs[k] > 0 ? 1u : 0u, 1);
            }
        }
        ns.pad();

        w.f32(blk.trisection.p1);
        w.f32(blk.trisection.p2);
        for (std::size_t i = 0; i < blk.rows; i++) {
            w.f32(blk.salient_base.alpha[i]);
            w.f32(blk.salient_residual.alpha[i]);
            w.f32(blk.sparse_atom.alpha[i]);
            w.f32(blk.intermediate_atom.alpha[i]);
            w.f32(blk.dense_atom.alpha[i]);
        }
    }
    return w.out;
}

StructuredBinaryLayer decode(const std::vector<uint8_t> & bytes) {
    ByteReader r(bytes);
    r.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw Error(ErrorCode::BadMagic, "not a packed layer (bad magic)");
    }
    r.pos = 4;
    const uint16_t version = r.u16();
    if (version != kVersion) {
        throw Error(ErrorCode::UnsupportedVersion,
                    "packed layer version " + std::to_string(version) + ", expected " +
                        std::to_string(kVersion));
    }

    StructuredBinaryLayer layer;
    const uint16_t name_len = r.u16();
    layer.name = r.str(name_len);
    layer.rows = r.u32();
    layer.cols = r.u32();
    layer.block_size = r.u16();
    layer.nm.n = r.u8();
    layer.nm.m = r.u8();
    r.u16();  // flags
    const uint32_t block_count = r.u32();
    if (layer.rows < 1 || layer.cols < 1 || layer.nm.n < 1 || layer.nm.n > layer.nm.m) {
        throw Error(ErrorCode::SchemaViolation, "packed header has inconsistent dimensions");
    }

    const int idx_bits = ceil_log2(layer.nm.m);
    std::size_t expect_start = 0;
    for (uint32_t bi = 0; bi < block_count; bi++) {
        BlockQuantResult blk;
        blk.col_start = r.u32();
        blk.col_end = r.u32();
        blk.rows = layer.rows;
        if (blk.col_start != expect_start || blk.col_end <= blk.col_start ||
            blk.col_end > layer.cols) {
            throw Error(ErrorCode::SchemaViolation,
                        "packed block " + std::to_string(bi) + " does not tile the layer");
        }
        expect_start = blk.col_end;
        const std::size_t width = blk.width();

        const uint16_t sal_count = r.u16();
        blk.salient_cols.resize(sal_count);
        for (uint16_t i = 0; i < sal_count; i++) {
            blk.salient_cols[i] = r.u16();
            if (blk.salient_cols[i] >= width ||
                (i > 0 && blk.salient_cols[i] <= blk.salient_cols[i - 1])) {
                throw Error(ErrorCode::SchemaViolation, "packed salient columns not sorted");
            }
        }
        std::vector<uint8_t> is_salient_col(width, 0);
        for (uint32_t c : blk.salient_cols) {
            is_salient_col[c] = 1;
        }

        const auto segs = bank_segments(blk.col_start, blk.col_end, layer.nm.m);
        blk.nm_mask.assign(layer.rows * width, 0);
        BitReader kept(r);
        for (std::size_t i = 0; i < layer.rows; i++) {
            for (const auto & [lo, hi] : segs) {
                const std::size_t keep = std::min<std::size_t>(layer.nm.n, hi - lo);
                std::size_t prev_abs = 0;
                for (std::size_t t = 0; t < keep; t++) {
                    const uint32_t off = kept.get(idx_bits);
                    const std::size_t bank = (blk.col_start + lo) / layer.nm.m * layer.nm.m;
                    const std::size_t abs = bank + off;
                    const std::size_t j = abs - blk.col_start;
                    if (abs < blk.col_start + lo || abs >= blk.col_start + hi ||
                        (t > 0 && abs <= prev_abs)) {
                        throw Error(ErrorCode::SchemaViolation, "packed kept index out of order");
                    }
                    prev_abs = abs;
                    blk.nm_mask[i * width + j] = 1;
                }
            }
        }
        kept.align();

        // region codes: salient comes from the column list, the rest from the stream
        blk.region_codes.assign(layer.rows * width, RegionCode::Pruned);
        BitReader codes(r);
        for (std::size_t i = 0; i < layer.rows; i++) {
            for (std::size_t j = 0; j < width; j++) {
                const std::size_t k = i * width + j;
                if (!blk.nm_mask[k]) {
                    continue;
                }
                if (is_salient_col[j]) {
                    blk.region_codes[k] = RegionCode::Salient;
                    continue;
                }
                switch (codes.get(2)) {
                    case 0:  blk.region_codes[k] = RegionCode::Sparse; break;
                    case 1:  blk.region_codes[k] = RegionCode::Intermediate; break;
                    case 2:  blk.region_codes[k] = RegionCode::Dense; break;
                    default: throw Error(ErrorCode::SchemaViolation, "packed region code invalid");
                }
            }
        }
        codes.align();

        auto init_atom = [&](BinaryAtom & atom) {
            atom.rows = layer.rows;
            atom.cols = width;
            atom.alpha.assign(layer.rows, 0.0f);
            atom.signs.assign(layer.rows * width, 0);
            atom.support.assign(layer.rows * width, 0);
        };
        init_atom(blk.salient_base);
        init_atom(blk.salient_residual);
        init_atom(blk.sparse_atom);
        init_atom(blk.intermediate_atom);
        init_atom(blk.dense_atom);

        for (BinaryAtom * atom : {&blk.salient_base, &blk.salient_residual}) {
            BitReader plane(r);
            for (std::size_t k = 0; k < blk.region_codes.size(); k++) {
                if (blk.region_codes[k] == RegionCode::Salient) {
                    atom->support[k] = 1;
                    atom->signs[k] = plane.get(1) ? 1 : -1;
                }
            }
            plane.align();
        }

        BitReader ns(r);
        for (std::size_t k = 0; k < blk.region_codes.size(); k++) {
            const RegionCode c = blk.region_codes[k];
            if (c == RegionCode::Sparse || c == RegionCode::Intermediate ||
                c == RegionCode::Dense) {
                BinaryAtom & atom = region_atom(blk, c);
                atom.support[k] = 1;
                atom.signs[k] = ns.get(1) ? 1 : -1;
            }
        }
        ns.align();

        blk.trisection.p1 = r.f32();
        blk.trisection.p2 = r.f32();
        blk.trisection.sigma_ratio =
            blk.trisection.p1 > 0.0f ? (float)((double)blk.trisection.p2 / blk.trisection.p1)
                                     : 2.0f;
        for (std::size_t i = 0; i < layer.rows; i++) {
            blk.salient_base.alpha[i] = r.f32();
            blk.salient_residual.alpha[i] = r.f32();
            blk.sparse_atom.alpha[i] = r.f32();
            blk.intermediate_atom.alpha[i] = r.f32();
            blk.dense_atom.alpha[i] = r.f32();
        }
        layer.blocks.push_back(std::move(blk));
    }
    if (expect_start != layer.cols) {
        throw Error(ErrorCode::SchemaViolation, "packed blocks do not cover all columns");
    }
    if (r.pos != bytes.size()) {
        throw Error(ErrorCode::SchemaViolation,
                    "trailing bytes after the last block (offset " + std::to_string(r.pos) + ")");
    }
    return layer;
}

void save_packed(const std::filesystem::path & path, const StructuredBinaryLayer & layer) {
    const auto bytes = encode(layer);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw Error(ErrorCode::MissingFile, "cannot open " + path.string() + " for writing");
    }
    f.write((const char *)bytes.data(), (std::streamsize)bytes.size());
    f.close();
    if (!f) {
        throw Error(ErrorCode::MissingFile, "short write to " + path.string());
    }
}

StructuredBinaryLayer load_packed(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) {
        throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
    }
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes((std::size_t)size);
    f.read((char *)bytes.data(), size);
    if (!f) {
        throw Error(ErrorCode::TruncatedStream, "short read from " + path.string());
    }
    return decode(bytes);
}

BitReport bit_report(const StructuredBinaryLayer & layer, std::size_t packed_size_bytes) {
    std::size_t kept = 0, salient = 0;
    for (const auto & blk : layer.blocks) {
        for (RegionCode c : blk.region_codes) {
            if (c != RegionCode::Pruned) {
                kept++;
                if (c == RegionCode::Salient) {
                    salient++;
                }
            }
        }
    }
    BitReport rep;
    rep.b_size = layer.block_size;
    rep.n = layer.nm.n;
    rep.m = layer.nm.m;
    rep.r_salient = kept > 0 ? (double)salient / (double)kept : 0.0;
    rep.n_param = 1.0 + rep.r_salient;
    rep.n_storing = 2.0 + 1.0 / (double)layer.block_size;
    rep.avg_bits_nominal = rep.n_param * (double)layer.nm.n / (double)layer.nm.m;
    rep.avg_bits_packed =
        8.0 * (double)packed_size_bytes / ((double)layer.rows * (double)layer.cols);
    return rep;
}

}  // namespace stbq
