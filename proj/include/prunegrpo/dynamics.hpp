// SPDX-License-Identifier: Apache-2.0
//
// Noise schedules, SDE / probability-flow drifts for both backbones, the
// Euler-Maruyama sampler that records trajectories, and the one-step ODE
// terminal preview.
//
// Time convention: the sampler runs on s in [0, t_end] from noise to data
// for both backbones. Diffusion quantities are defined on the native
// forward-process axis tau = 1 - s, so on the sampler axis the native
// reverse-time drift enters with a flipped sign.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunegrpo/common.hpp"
#include "prunegrpo/policy.hpp"

namespace prunegrpo {

enum class Backbone { RectifiedFlow, DiffusionVP };

std::string to_string(Backbone b);
Backbone parse_backbone(const std::string& s);

struct NoiseSchedule {
    Backbone backbone = Backbone::RectifiedFlow;
    int num_steps = 10;
    double sigma0 = 0.3;  // rectified flow: constant path stochasticity
    double eta = 1.0;     // diffusion: stochasticity mixer
    double beta_min = 0.1;
    double beta_max = 20.0;
    /// Last sampler time. Rectified flow keeps every grid time <= t_clamp < 1;
    /// for diffusion it is 1 - tau_min.
    double t_clamp = 0.96;

    double t_end() const { return t_clamp; }
    double dt() const { return t_clamp / static_cast<double>(num_steps); }
    /// Grid time of step k in [0, num_steps]; grid_time(num_steps) == t_end().
    double grid_time(int k) const;

    /// Diffusion coefficient sigma_t of the unified SDE drift.
    double sigma(double t) const;
    /// Multiplier of dW in the sampler (sigma_t for RF, eta * sigma_t for diffusion).
    double noise_coeff(double t) const;
    /// VP beta at sampler time t (diffusion only).
    double beta(double t) const;
    /// x_t = alpha(t) * data + marginal_std(t) * noise.
    double alpha(double t) const;
    double marginal_std(double t) const;

    void validate() const;
};

// --- score conversions -----------------------------------------------------

/// -(x - t v) / (1 - t): the score of the linear Gaussian interpolant.
Vec score_from_velocity(std::span<const double> x, double t, std::span<const double> v,
                        const NoiseSchedule& schedule);
/// -eps / marginal_std(t).
Vec eps_to_score(std::span<const double> eps_pred, double t, const NoiseSchedule& schedule);

// --- drifts from a raw network output ------------------------------------------

/// Sampler-axis SDE drift given the network output at (x, t).
void sde_drift_from_output(const NoiseSchedule& schedule, std::span<const double> x, double t,
                           std::span<const double> out, std::span<double> drift);
/// d(drift)/d(output); the drift is affine in the network output.
double sde_output_gain(const NoiseSchedule& schedule, double t);
void ode_drift_from_output(const NoiseSchedule& schedule, std::span<const double> x, double t,
                           std::span<const double> out, std::span<double> drift);

// --- drifts on the native axis --------------------------------------------------

/// RF: v - sigma^2/2 * score.  Diffusion: f - (1 + eta^2)/2 * sigma^2 * score, f = -beta x / 2.
Vec drift_sde(std::span<const double> x, double t, int context, const PolicyParams& params,
              const NoiseSchedule& schedule);
/// RF: v.  Diffusion: f - sigma^2/2 * score.
Vec drift_ode(std::span<const double> x, double t, int context, const PolicyParams& params,
              const NoiseSchedule& schedule);
/// The same drifts, oriented along the sampler axis.
Vec sampler_drift_sde(std::span<const double> x, double t, int context, const PolicyParams& params,
                      const NoiseSchedule& schedule);
Vec sampler_drift_ode(std::span<const double> x, double t, int context, const PolicyParams& params,
                      const NoiseSchedule& schedule);

// --- trajectories ------------------------------------------------------------

struct TrajectoryStep {
    double t = 0.0;
    double dt = 0.0;
    Vec x;
    Vec action;      // x_{t+dt} - x_t
    Vec drift_mean;  // b(x, t) * dt
    double noise_scale = 0.0;
    double logprob_old = 0.0;  // log density of the action under the sampling policy
};

/// Log density of N(mean, scale^2 I) at `action`.
double gaussian_logpdf(std::span<const double> action, std::span<const double> mean, double scale);

/// Policy mean b(x, t) * dt from a raw network output.
void step_mean_from_output(const NoiseSchedule& schedule, std::span<const double> x, double t,
                           double dt, std::span<const double> out, std::span<double> mean);

struct Trajectory {
    int context = 0;
    std::uint64_t seed = 0;
    std::vector<TrajectoryStep> steps;
    bool active = true;
    Vec state;
    std::optional<Vec> terminal_state;
    std::optional<double> final_reward;
    std::optional<int> pruned_at;
    RandomStream rng;
};

struct SurvivorRecord {
    int step = 0;
    std::vector<std::size_t> survivors;  // indices into Group::trajectories
};

struct Group {
    int context = 0;
    std::vector<Trajectory> trajectories;
    std::vector<SurvivorRecord> survivor_history;
    std::vector<std::vector<double>> proxy_rewards;  // per checkpoint, aligned with the active set

    std::vector<std::size_t> active_indices() const;
    std::size_t active_count() const;
    std::size_t total_steps() const;
};

/// One Euler-Maruyama step: x + b dt + noise_coeff sqrt(dt) xi.
TrajectoryStep em_step(std::span<const double> x, double t, double dt, int context,
                       const PolicyParams& params, const NoiseSchedule& schedule, RandomStream& rng);

/// G trajectories with initial latents from each one's private stream.
Group init_group(int context, int g_count, std::uint64_t group_seed, int latent_dim);
/// Advance every active trajectory by step `step_index`. Returns the number
/// of network evaluations performed.
std::size_t advance_group(Group& group, int step_index, const PolicyParams& params,
                          const NoiseSchedule& schedule);
/// Record terminal states for the trajectories still active.
void finish_group(Group& group);
/// init + all T steps + finish, without pruning.
Group sample_group(int context, int g_count, const PolicyParams& params, const NoiseSchedule& schedule,
                   std::uint64_t group_seed);

/// x + (t_end - t) * drift_ode(x, t) along the sampler axis.
Vec ode_lookahead(std::span<const double> x, double t, int context, const PolicyParams& params,
                  const NoiseSchedule& schedule);
/// Previews for the given trajectories of a group, evaluated in one batch.
std::vector<Vec> ode_lookahead_batch(const Group& group, std::span<const std::size_t> indices, double t,
                                     const PolicyParams& params, const NoiseSchedule& schedule);

/// Deterministic Euler integration of the probability-flow ODE from t to t_end.
Vec ode_integrate(std::span<const double> x, double t, int context, const PolicyParams& params,
                  const NoiseSchedule& schedule, int substeps);

}  // namespace prunegrpo
