// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fpa3d {

// Counter-based randomness. Every random value is a pure function of
// (seed, stream name, counter), so fills, dropout masks and shuffles do not
// depend on thread scheduling or on how many values other code consumed.

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t stream_key(std::uint64_t seed, std::string_view stream) {
    std::uint64_t h = 0xCBF29CE484222325ull; // FNV-1a offset basis
    for (char ch : stream) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001B3ull;
    }
    return mix64(seed + kGolden * h);
}

class CounterRng {
  public:
    CounterRng() = default;
    explicit CounterRng(std::uint64_t seed, std::string_view stream = "") : key_(stream_key(seed, stream)) {}

    std::uint64_t bits(std::uint64_t counter) const { return mix64(key_ + (counter + 1) * kGolden); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform(std::uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

    double uniform(std::uint64_t counter, double lo, double hi) const {
        return lo + (hi - lo) * uniform(counter);
    }

    // Standard normal via Box-Muller; consumes sub-counters 2c and 2c+1.
    double normal(std::uint64_t counter) const {
        const double u1 = (static_cast<double>(bits(2 * counter) >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
        const double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    std::uint64_t below(std::uint64_t counter, std::uint64_t bound) const { return bits(counter) % bound; }

    std::uint64_t key() const { return key_; }

  private:
    std::uint64_t key_{0};
};

} // namespace fpa3d
