#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace geolab {

// splitmix64, the canonical 64-bit mixer. Used both as the counter-based
// stream splitter and as the generator step, so every random draw in the
// project is a pure function of (seed, counter) and reproduces bit-identically
// across platforms. std::uniform_*_distribution is avoided on purpose: its
// output is implementation-defined.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a 64-bit, used for dataset checksums and parameter hashing.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_tag(std::string_view tag) {
    return fnv1a64(tag.data(), tag.size());
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Multiply-shift; bias is < 2^-64 * n, irrelevant at our scales.
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller (explicit formula, portable bits).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Independent child stream identified by a tag; counter-based split.
    Rng fork(std::uint64_t tag) const { return Rng(splitmix64(state_ ^ splitmix64(tag))); }
    Rng fork(std::string_view tag) const { return fork(hash_tag(tag)); }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

}  // namespace geolab
