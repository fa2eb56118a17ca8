#pragma once

#include <cstdint>
#include <random>

#include "eva/tensor.hpp"

namespace eva {

// Stream-splitting mix so independent consumers of one master seed never
// share a generator state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline void fill_normal(ag::Tensor& t, Rng& rng, double stddev, double mean = 0.0) {
    std::normal_distribution<double> dist(mean, stddev);
    for (double& v : t.data) v = dist(rng);
}

inline void fill_uniform(ag::Tensor& t, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
}

}  // namespace eva
