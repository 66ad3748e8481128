// SPDX-License-Identifier: Apache-2.0
//
// Synthetic rewards, the toy decoder standing in for a latent decoder, and
// proxy rewards read off the one-step ODE preview.

#pragma once

#include <string>
#include <vector>

#include "prunegrpo/common.hpp"
#include "prunegrpo/dynamics.hpp"
#include "prunegrpo/policy.hpp"

namespace prunegrpo {

enum class RewardKind { GaussianBump, RingDistance, HalfplaneMargin, Composite };

std::string to_string(RewardKind k);
RewardKind parse_reward_kind(const std::string& s);

struct RewardSpec {
    RewardKind kind = RewardKind::GaussianBump;
    /// Bump centre / halfplane normal. One entry per prompt when
    /// context_conditioned, otherwise a single shared entry.
    std::vector<Vec> targets{Vec{0.0, 0.0}};
    bool context_conditioned = false;
    double temperature = 0.5;  // bump width
    double ring_radius = 4.0;  // ring-distance r0
    std::vector<RewardSpec> components;  // composite only
    std::vector<double> weights;         // composite only, convex

    const Vec& target_for(int context) const;
    void validate() const;
};

enum class DecoderKind { Identity, FixedLinear };

struct Decoder {
    DecoderKind kind = DecoderKind::Identity;
    int out_dim = 0;             // fixed-linear only
    std::vector<double> matrix;  // out_dim x latent_dim, row-major

    Vec decode(std::span<const double> x) const;
};

double reward_eval(std::span<const double> x, int context, const RewardSpec& spec, const Decoder& decoder);

/// sum_j w_j * reward_eval(x, specs[j]).
double composite_reward(std::span<const double> x, int context, const std::vector<RewardSpec>& specs,
                        const std::vector<double>& weights, const Decoder& decoder);

/// Reward of the one-step ODE preview from (x, t). No gradients recorded.
double proxy_reward(std::span<const double> x, double t, int context, const PolicyParams& params,
                    const NoiseSchedule& schedule, const RewardSpec& spec, const Decoder& decoder);

}  // namespace prunegrpo
