// SPDX-License-Identifier: Apache-2.0
//
// Supervised pretraining of the toy generator: flow-matching regression for
// rectified flow, noise-prediction regression for diffusion, and the
// synthetic datasets they are fitted to.

#pragma once

#include <string>
#include <vector>

#include "prunegrpo/dynamics.hpp"
#include "prunegrpo/policy.hpp"

namespace prunegrpo {

enum class DatasetKind { GaussianMixtureRing, TwoMoons, SingleGaussian };

std::string to_string(DatasetKind k);
DatasetKind parse_dataset_kind(const std::string& s);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::GaussianMixtureRing;
    int modes = 8;
    double radius = 4.0;
    double component_std = 0.3;
    Vec mean{0.0, 0.0};  // single-gaussian centre
    int num_prompts = 4;
    /// Per-prompt mode weights (ring only). Empty means every prompt draws
    /// from all modes uniformly.
    std::vector<std::vector<double>> prompt_mode_weights;

    void validate() const;
};

struct DataPoint {
    Vec x;
    int context = 0;
};

/// Centres of the ring modes (mode j at angle 2 pi j / modes).
std::vector<Vec> mode_centers(const DatasetSpec& spec);
/// Index of the nearest ring mode.
int nearest_mode(const DatasetSpec& spec, std::span<const double> x);

/// n i.i.d. draws; prompts cycle 0, 1, ..., num_prompts - 1.
std::vector<DataPoint> sample_dataset(const DatasetSpec& spec, int n, RandomStream& rng);

struct LossAndGrad {
    double loss = 0.0;
    Gradients grads;
};

/// mean ||v(x_t, t, c) - (x1 - x0)||^2 with x0 ~ N(0, I) and t ~ U(0, t_max).
LossAndGrad flow_matching_loss(const PolicyParams& params, std::span<const DataPoint> batch,
                               RandomStream& rng, double t_max = 1.0, bool with_grad = true);

/// mean ||eps(x_t, t, c) - eps||^2 with x_t = alpha_t x1 + sigma_t eps, t ~ U(0, t_end).
LossAndGrad ddpm_loss(const PolicyParams& params, std::span<const DataPoint> batch,
                      const NoiseSchedule& schedule, RandomStream& rng, bool with_grad = true);

struct PretrainConfig {
    MlpSpec mlp;
    DatasetSpec dataset;
    NoiseSchedule schedule;  // selects the backbone
    int steps = 20000;
    int batch_size = 256;
    double learning_rate = 2e-3;
    double final_learning_rate = 1e-4;  // cosine decay target
    int validation_size = 4096;
    int log_every = 100;
    std::uint64_t seed = 0;
    /// Stop once a logged validation loss falls below this; <= 0 disables.
    double target_val_loss = 0.0;
    /// Calibrated bound the finished run is expected to reach; not used by training.
    double expected_val_loss = 0.0;
};

struct LossCurveRow {
    int step = 0;
    double train_loss = 0.0;  // mean over the logging window
    double val_loss = 0.0;
};

struct PretrainResult {
    PolicyParams params;
    std::vector<double> train_losses;  // one per optimisation step
    std::vector<LossCurveRow> curve;
    int steps_run = 0;
};

/// Fixed-noise validation loss (same draws every call).
double validation_loss(const PolicyParams& params, const PretrainConfig& config);

PretrainResult pretrain_run(const PretrainConfig& config);

void write_loss_curve(const std::string& path, const std::vector<LossCurveRow>& rows);

}  // namespace prunegrpo
