#include "s2d/core/tensor.hpp"

#include <cstdio>

#include "s2d/core/error.hpp"

namespace s2d {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return "configuration";
        case ErrorKind::shape: return "shape";
        case ErrorKind::vocab: return "vocab";
        case ErrorKind::catalog: return "catalog";
        case ErrorKind::grammar: return "grammar";
        case ErrorKind::pool: return "pool";
        case ErrorKind::selection: return "selection";
        case ErrorKind::context: return "context";
        case ErrorKind::asymmetry: return "asymmetry-violation";
        case ErrorKind::empty_loss: return "empty-loss";
        case ErrorKind::empty_context: return "empty-context";
        case ErrorKind::registry: return "registry";
        case ErrorKind::data: return "data";
        case ErrorKind::checkpoint: return "checkpoint";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::io: return "io";
        case ErrorKind::usage: return "usage";
    }
    return "unknown";
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) {
    return fnv1a(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()), h);
}

std::uint64_t fnv1a(const Matrix& m, std::uint64_t h) {
    const auto* p = reinterpret_cast<const unsigned char*>(m.data());
    return fnv1a(std::span(p, static_cast<std::size_t>(m.size()) * sizeof(Real)), h);
}

std::uint64_t hash_string(std::string_view s) { return fnv1a(s); }

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, Real stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(dist(rng));
    return m;
}

Matrix random_uniform(Eigen::Index rows, Eigen::Index cols, Real bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(dist(rng));
    return m;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace s2d
