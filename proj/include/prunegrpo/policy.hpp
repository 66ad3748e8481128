// SPDX-License-Identifier: Apache-2.0
//
// Small fully-connected network that produces the velocity field (rectified
// flow) or the noise prediction (diffusion), exact reverse-mode gradients,
// Adam, frozen snapshots and checkpoint files.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "prunegrpo/common.hpp"

namespace prunegrpo {

enum class Activation { Tanh, Silu };
enum class TimeEmbedding { ScalarAppend, Sinusoidal };

std::string to_string(Activation a);
std::string to_string(TimeEmbedding e);
Activation parse_activation(const std::string& s);
TimeEmbedding parse_time_embedding(const std::string& s);

struct MlpSpec {
    int latent_dim = 2;
    std::vector<int> hidden_dims{128, 128};
    Activation activation = Activation::Silu;
    TimeEmbedding time_embedding = TimeEmbedding::Sinusoidal;
    int time_frequencies = 8;
    int num_contexts = 4;  // one-hot prompt vocabulary

    int time_features() const;
    int input_dim() const { return latent_dim + time_features() + num_contexts; }
    int output_dim() const { return latent_dim; }
    void validate() const;
    bool operator==(const MlpSpec&) const = default;
};

/// Dense affine map. Weights are stored input-major: weight[i * out + o].
struct DenseLayer {
    int in = 0;
    int out = 0;
    std::vector<double> weight;
    std::vector<double> bias;
    bool operator==(const DenseLayer&) const = default;
};

/// Same shapes as the network; used for gradients and optimizer moments.
struct ParamTensor {
    std::vector<DenseLayer> layers;

    std::size_t size() const;
    double& at(std::size_t flat);
    double at(std::size_t flat) const;
    void set_zero();
    void add_scaled(const ParamTensor& other, double scale);
    void scale(double s);
    double squared_norm() const;
    bool finite() const;
    bool same_shape(const ParamTensor& other) const;
    bool operator==(const ParamTensor&) const = default;
};

using Gradients = ParamTensor;

struct PolicyParams {
    MlpSpec spec;
    ParamTensor net;
    std::int64_t version = 0;

    std::size_t num_parameters() const { return net.size(); }
    void validate() const;
};

/// Immutable, shareable copy used for the old and reference policies.
using PolicySnapshot = std::shared_ptr<const PolicyParams>;

/// Hidden layers ~ N(0, 1/fan_in), zero biases, zero output layer.
PolicyParams init_policy(const MlpSpec& spec, std::uint64_t seed);
/// Like init_policy, but the output layer is random too (for tests).
PolicyParams init_policy_random(const MlpSpec& spec, std::uint64_t seed, double output_scale = 1.0);

Gradients zeros_like(const PolicyParams& params);

/// Network input for one (x, t, context) query.
void append_features(const MlpSpec& spec, std::span<const double> x, double t, int context,
                     std::vector<double>& out);

/// Activations kept by forward_batch for a later backward_batch.
struct ForwardCache {
    int batch = 0;
    std::vector<std::vector<double>> inputs;  // input of each layer, batch x in
    std::vector<std::vector<double>> pre;     // pre-activation of hidden layers
};

/// Evaluates `batch` rows of features (batch x input_dim) into `out`
/// (batch x output_dim). Every row is computed with the same arithmetic as
/// a batch of one, so results never depend on batch composition.
void forward_batch(const PolicyParams& params, std::span<const double> features, int batch,
                   std::span<double> out, ForwardCache* cache = nullptr);

/// Accumulates d<upstream, output>/d(params) into `grads`.
void backward_batch(const PolicyParams& params, const ForwardCache& cache,
                    std::span<const double> upstream, Gradients& grads);

Vec forward(const PolicyParams& params, std::span<const double> x, double t, int context);
Gradients backward(const PolicyParams& params, std::span<const double> x, double t, int context,
                   std::span<const double> upstream);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    ParamTensor first_moment;
    ParamTensor second_moment;
    std::int64_t step = 0;
};

AdamState make_adam(const PolicyParams& params, const AdamConfig& config);

/// Bias-corrected Adam step, in place. Throws "divergence detected" on a
/// non-finite gradient before touching anything.
void adam_update(PolicyParams& params, const Gradients& grads, AdamState& state);

PolicySnapshot snapshot(const PolicyParams& params);

/// Binary checkpoint: text header with the architecture, then row-major
/// little-endian float64 values. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace prunegrpo
