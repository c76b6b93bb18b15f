#pragma once

#include <cstdint>

namespace pcloc {

// SplitMix64; output sequence is fixed across platforms, which matters for
// seeded reproducibility of RANSAC, decimation, and procedural textures.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint32_t next_u32() { return static_cast<std::uint32_t>(next_u64() >> 32); }

    // Uniform in [0, bound) without modulo bias worth worrying about here.
    std::uint32_t next_below(std::uint32_t bound) {
        return static_cast<std::uint32_t>((next_u64() >> 32) * std::uint64_t(bound) >> 32);
    }

    double next_double() { return (next_u64() >> 11) * (1.0 / 9007199254740992.0); }

    double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  private:
    std::uint64_t state_;
};

// Stateless 64-bit mix, used for hash-based procedural textures.
inline std::uint64_t hash_mix(std::uint64_t x) {
    x ^= x >> 33;
    x *= 0xFF51AFD7ED558CCDULL;
    x ^= x >> 33;
    x *= 0xC4CEB9FE1A85EC53ULL;
    x ^= x >> 33;
    return x;
}

}  // namespace pcloc
