#pragma once

#include <cstdint>
#include <cstring>
#include <span>

namespace takin {

// splitmix64: the single PRNG used everywhere reproducibility matters
// (parameter init, sampling, fixture generation). One next() per draw.
struct SplitMix64 {
    uint64_t state = 0;

    explicit SplitMix64(uint64_t seed = 0) : state(seed) {}

    uint64_t next() {
        state += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    float uniform(float lo, float hi) {
        return lo + static_cast<float>(next_double()) * (hi - lo);
    }

    // uniform integer in [0, n)
    uint64_t next_below(uint64_t n) {
        return next() % n;
    }
};

// FNV-1a over raw bytes; used for parameter and config checksums.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xCBF29CE484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(std::span<const float> v, uint64_t h = 0xCBF29CE484222325ULL) {
    return fnv1a64(v.data(), v.size() * sizeof(float), h);
}

} // namespace takin
