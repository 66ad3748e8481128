// SPDX-License-Identifier: Apache-2.0
//
// Group-normalised advantages, per-step Gaussian importance ratios, the
// clipped surrogate with a KL penalty, and the loss / gradient over the
// survivors of a pruned group.

#pragma once

#include <string>
#include <vector>

#include "prunegrpo/dynamics.hpp"
#include "prunegrpo/policy.hpp"

namespace prunegrpo {

struct AdvantageSet {
    std::vector<double> rewards;
    double mean = 0.0;
    double std = 0.0;
    double epsilon = 0.0;
    std::vector<double> advantages;  // (r - mean) / (std + epsilon)
};

AdvantageSet normalized_advantages(std::span<const double> rewards, double adv_epsilon);

struct LossConfig {
    double clip_eps = 0.2;
    double kl_beta = 1e-3;
    double adv_epsilon = 1e-4;

    void validate() const;
};

/// Log density of the recorded action under `params` (mean b(x, t) dt,
/// the recorded noise scale per coordinate).
double step_logprob(const TrajectoryStep& step, int context, const PolicyParams& params,
                    const NoiseSchedule& schedule);

/// exp(logp_new - logp_old) with the exponent clamped to [-30, 30].
double importance_ratio(double logp_new, double logp_old);

/// min(r A, clip(r, 1 - eps, 1 + eps) A).
double clipped_surrogate(double ratio, double advantage, double clip_eps);

/// Mean over steps of ||mean_params - mean_ref||^2 / (2 scale^2).
double kl_penalty(const PolicyParams& params, const PolicyParams& ref_params,
                  std::span<const TrajectoryStep> steps, int context, const NoiseSchedule& schedule);

struct LossResult {
    double loss = 0.0;       // -(surrogate) + beta * kl
    double surrogate = 0.0;  // mean clipped surrogate over survivors and steps
    double kl = 0.0;
    Gradients grads;
    std::vector<double> ratios;  // survivor-major, step-minor
    AdvantageSet advantages;
    std::vector<std::size_t> survivors;
    bool zero_signal = false;  // all survivor rewards equal
};

/// Loss of one group restricted to its active, completed trajectories.
/// Old log-probabilities are the values stored at sampling time; the
/// advantages are constants of the differentiation.
LossResult pro_grpo_loss_and_grad(const Group& group, const PolicyParams& params,
                                  const PolicyParams& ref_params, const LossConfig& config,
                                  const NoiseSchedule& schedule);

}  // namespace prunegrpo
