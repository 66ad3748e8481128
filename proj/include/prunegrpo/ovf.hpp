// SPDX-License-Identifier: Apache-2.0
//
// Optimal variance filtering: pick the size-k subset of a reward list with
// the largest population variance, plus the brute-force oracle, the uniform
// subsampling baseline and the reward-clustering diagnostic.

#pragma once

#include <cstddef>
#include <vector>

#include "prunegrpo/common.hpp"

namespace prunegrpo::ovf {

/// Rewards of a group together with the trajectory each one came from.
/// Invariants: equal lengths, non-empty, pairwise distinct sources.
class RewardList {
public:
    explicit RewardList(std::vector<double> values);
    RewardList(std::vector<double> values, std::vector<std::size_t> source_indices);

    std::size_t size() const { return values_.size(); }
    const std::vector<double>& values() const { return values_; }
    const std::vector<std::size_t>& source_indices() const { return sources_; }

private:
    std::vector<double> values_;
    std::vector<std::size_t> sources_;
};

struct GroupStats {
    double mean = 0.0;
    double std = 0.0;  // population convention (divide by G)
};

struct SelectionResult {
    std::vector<std::size_t> kept;  // positions into the RewardList, ascending
    double variance = 0.0;          // population variance of the kept values
};

GroupStats group_stats(std::span<const double> values);
GroupStats group_stats(const RewardList& rewards);

/// Two-pass population variance of `values[subset]`.
double subset_variance(std::span<const double> values, std::span<const std::size_t> subset);

/// Exact maximiser. The optimum is always m smallest plus (k - m) largest
/// values of the sorted list, so only k + 1 candidates are scored.
///
/// Ties: values sort ascending by (value, source index); the smallest m
/// among equal-variance splits wins; inside the suffix, equal values prefer
/// the lower source index.
SelectionResult ovf_select(const RewardList& rewards, std::size_t k);

/// Exhaustive enumeration over all C(G, k) subsets (G <= 20). Among equal
/// variances the lexicographically smallest position tuple is returned.
SelectionResult ovf_brute_force(const RewardList& rewards, std::size_t k);

/// k positions drawn uniformly without replacement.
SelectionResult uniform_subsample(const RewardList& rewards, std::size_t k, RandomStream& rng);

/// Positions i with |R_i - mu| <= delta * sigma. With sigma = 0 every
/// position is returned.
std::vector<std::size_t> clustered_indices(const RewardList& rewards, double delta);

double clustered_fraction(const RewardList& rewards, double delta);

}  // namespace prunegrpo::ovf
