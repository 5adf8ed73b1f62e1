#pragma once

#include <cmath>
#include <cstdint>

namespace stbq {

// Counter-based splitmix64 generator. Output i for seed s is
// mix(s + (i+1)*0x9E3779B97F4A7C15), so identical seeds give identical
// streams on every platform. Reference outputs (frozen in the tests):
//   seed 0       -> 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F
//   seed 1234567 -> 6457827717110365317, 3203168211198807973, ...
class SplitMix64 {
  public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) with 53 random mantissa bits.
    double next_unit() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via the trigonometric Box-Muller transform; no
    // rejection, so the draw count per call is fixed (one pair per two calls).
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - next_unit();  // (0, 1], keeps log() finite
        double u2 = next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Stateless stream splitting: hashes (seed, tag...) into a fresh seed.
    static uint64_t mix(uint64_t a, uint64_t b) {
        SplitMix64 g(a ^ (b * 0x9E3779B97F4A7C15ULL));
        return g.next_u64();
    }

  private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace stbq
