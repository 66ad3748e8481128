// SPDX-License-Identifier: Apache-2.0
//
// Shared vocabulary: error type, dense vectors, seeded random streams.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prunegrpo {

/// Every recoverable failure in the library surfaces as this type; the
/// message carries the contract that was violated.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Vec = std::vector<double>;

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Deterministic seed for a labelled sub-stream of `master`.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

/// A private, seeded source of uniforms and standard normals.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    /// Uniform integer in [lo, hi].
    std::size_t uniform_index(std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
    }
    void fill_normal(std::span<double> out) {
        for (double& v : out) {
            v = normal_(engine_);
        }
    }
    std::uint64_t seed() const { return seed_; }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::uint64_t seed_;
};

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

/// Shortest decimal that parses back to the identical double; locale independent.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace prunegrpo
