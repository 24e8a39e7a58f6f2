// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ssasc {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Counter-based stream seed: the same (seed, counters...) always yields the
/// same generator, no matter which thread asks or in which order.
inline std::uint64_t stream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
    std::uint64_t h = mix64(seed);
    for (auto c : counters) h = mix64(h ^ mix64(c + 0x632BE59BD9B4E019ull));
    return h;
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace ssasc
