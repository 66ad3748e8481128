// SPDX-License-Identifier: Apache-2.0
//
// Offline diagnostics on a fixed policy: how faithful the one-step preview
// is along the sampling path, and how clustered group rewards are.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prunegrpo/dynamics.hpp"
#include "prunegrpo/policy.hpp"
#include "prunegrpo/rewards.hpp"

namespace prunegrpo {

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

struct FidelityRow {
    int step = 0;              // preview taken after this many steps
    double t = 0.0;
    double spearman = 0.0;     // proxy vs terminal reward
    double preview_error = 0.0;  // mean ||preview - terminal state||
};

/// Samples n trajectories to the end without pruning and compares, at each
/// requested step, the preview's reward with the terminal reward.
std::vector<FidelityRow> proxy_fidelity(const PolicyParams& params, const NoiseSchedule& schedule,
                                        const RewardSpec& spec, const Decoder& decoder, int context, int n,
                                        const std::vector<int>& steps, std::uint64_t seed);

struct ClusteringRow {
    double delta = 0.0;
    double clustered_fraction = 0.0;  // mean over groups
    double reward_std = 0.0;          // mean population std over groups
};

/// Terminal-reward clustering of `groups` groups of size g.
std::vector<ClusteringRow> clustering_profile(const PolicyParams& params, const NoiseSchedule& schedule,
                                              const RewardSpec& spec, const Decoder& decoder, int context,
                                              int groups, int g, const std::vector<double>& deltas,
                                              std::uint64_t seed);

void write_fidelity_csv(const std::string& path, const std::vector<FidelityRow>& rows);
void write_clustering_csv(const std::string& path, const std::vector<ClusteringRow>& rows);

}  // namespace prunegrpo
