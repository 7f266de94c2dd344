#pragma once

// Seed derivation and parameter initializers. Every random stream in the
// project is a mt19937_64 derived from one master seed through named
// sub-streams, so runs are reproducible from (seed) alone.

#include <cstdint>
#include <random>
#include <string>

#include "vidt/tensor.hpp"

namespace vidt {

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Independent stream for (seed, purpose[, index]).
inline std::mt19937_64 substream(std::uint64_t seed, const std::string& purpose,
                                 std::uint64_t index = 0) {
    std::uint64_t h = fnv1a64(purpose);
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h ^= index * 0xbf58476d1ce4e5b9ull + 0x94d049bb133111ebull;
    return std::mt19937_64(h);
}

template <typename T>
void fill_uniform(Tensor<T>& t, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(lo, hi);
    for (i64 i = 0; i < t.numel(); ++i) t[i] = T(d(rng));
}

template <typename T>
void fill_normal(Tensor<T>& t, double mean, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> d(mean, std);
    for (i64 i = 0; i < t.numel(); ++i) t[i] = T(d(rng));
}

// Normal(0, std) resampled into [-2 std, 2 std].
template <typename T>
void fill_trunc_normal(Tensor<T>& t, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, std);
    for (i64 i = 0; i < t.numel(); ++i) {
        double v = d(rng);
        while (std::abs(v) > 2.0 * std) v = d(rng);
        t[i] = T(v);
    }
}

template <typename T>
void fill_xavier_uniform(Tensor<T>& t, i64 fan_in, i64 fan_out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    fill_uniform(t, -bound, bound, rng);
}

}  // namespace vidt
