#pragma once

// Counter-based splitmix64 stream. Every value is a pure function of
// (seed, stream name, index), so weights do not depend on initialization
// order and any tensor can be regenerated independently.

#include <cstdint>
#include <string_view>

namespace ctree::rng {

inline constexpr std::uint64_t golden_gamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

class KeyedStream {
public:
    constexpr KeyedStream(std::uint64_t seed, std::string_view name) noexcept
        : key_(splitmix64_mix(seed + golden_gamma) ^ splitmix64_mix(fnv1a64(name))) {}

    [[nodiscard]] constexpr std::uint64_t bits(std::uint64_t index) const noexcept {
        return splitmix64_mix(key_ + (index + 1) * golden_gamma);
    }

    // Uniform in [-1, 1), 53 bits of resolution.
    [[nodiscard]] constexpr double uniform_pm1(std::uint64_t index) const noexcept {
        const double unit = static_cast<double>(bits(index) >> 11) * 0x1.0p-53;
        return 2.0 * unit - 1.0;
    }

private:
    std::uint64_t key_;
};

} // namespace ctree::rng
