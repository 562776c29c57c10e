#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace s2d {

// Training runs in float32; the gradient-check build compiles the same
// sources with S2D_REAL_DOUBLE.
#ifdef S2D_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent substreams from a seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Tags... tags) {
    std::uint64_t h = mix64(seed);
    ((h = mix64(h ^ static_cast<std::uint64_t>(tags))), ...);
    return h;
}

std::uint64_t hash_string(std::string_view s);

/// FNV-1a over raw bytes, chainable through `h`.
std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const Matrix& m, std::uint64_t h = 0xcbf29ce484222325ULL);

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, Real stddev, Rng& rng);
Matrix random_uniform(Eigen::Index rows, Eigen::Index cols, Real bound, Rng& rng);

std::string hex64(std::uint64_t v);

}  // namespace s2d
