// SPDX-License-Identifier: Apache-2.0

#include "prunegrpo/policy.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace prunegrpo {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "silu"; }

std::string to_string(TimeEmbedding e) {
    return e == TimeEmbedding::Sinusoidal ? "sinusoidal" : "scalar";
}

Activation parse_activation(const std::string& s) {
    if (s == "tanh") {
        return Activation::Tanh;
    }
    if (s == "silu") {
        return Activation::Silu;
    }
    throw Error("unknown activation '" + s + "'");
}

TimeEmbedding parse_time_embedding(const std::string& s) {
    if (s == "sinusoidal") {
        return TimeEmbedding::Sinusoidal;
    }
    if (s == "scalar") {
        return TimeEmbedding::ScalarAppend;
    }
    throw Error("unknown time embedding '" + s + "'");
}

int MlpSpec::time_features() const {
    return time_embedding == TimeEmbedding::Sinusoidal ? 2 * time_frequencies : 1;
}

void MlpSpec::validate() const {
    if (latent_dim <= 0 || num_contexts <= 0) {
        throw Error("spec violation: latent_dim and num_contexts must be positive");
    }
    if (time_embedding == TimeEmbedding::Sinusoidal && time_frequencies <= 0) {
        throw Error("spec violation: time_frequencies must be positive");
    }
    for (int h : hidden_dims) {
        if (h <= 0) {
            throw Error("spec violation: hidden widths must be positive");
        }
    }
}

// ---------------------------------------------------------------------------
// ParamTensor

std::size_t ParamTensor::size() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
        n += l.weight.size() + l.bias.size();
    }
    return n;
}

double& ParamTensor::at(std::size_t flat) {
    for (auto& l : layers) {
        if (flat < l.weight.size()) {
            return l.weight[flat];
        }
        flat -= l.weight.size();
        if (flat < l.bias.size()) {
            return l.bias[flat];
        }
        flat -= l.bias.size();
    }
    throw Error("parameter index out of range");
}

double ParamTensor::at(std::size_t flat) const { return const_cast<ParamTensor*>(this)->at(flat); }

void ParamTensor::set_zero() {
    for (auto& l : layers) {
        std::fill(l.weight.begin(), l.weight.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
}

void ParamTensor::add_scaled(const ParamTensor& other, double s) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
        auto& a = layers[k];
        const auto& b = other.layers[k];
        for (std::size_t i = 0; i < a.weight.size(); ++i) {
            a.weight[i] += s * b.weight[i];
        }
        for (std::size_t i = 0; i < a.bias.size(); ++i) {
            a.bias[i] += s * b.bias[i];
        }
    }
}

void ParamTensor::scale(double s) {
    for (auto& l : layers) {
        for (double& w : l.weight) {
            w *= s;
        }
        for (double& b : l.bias) {
            b *= s;
        }
    }
}

double ParamTensor::squared_norm() const {
    double s = 0.0;
    for (const auto& l : layers) {
        s += prunegrpo::squared_norm(l.weight) + prunegrpo::squared_norm(l.bias);
    }
    return s;
}

bool ParamTensor::finite() const {
    for (const auto& l : layers) {
        if (!all_finite(l.weight) || !all_finite(l.bias)) {
            return false;
        }
    }
    return true;
}

bool ParamTensor::same_shape(const ParamTensor& other) const {
    if (layers.size() != other.layers.size()) {
        return false;
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
        if (layers[k].in != other.layers[k].in || layers[k].out != other.layers[k].out ||
            layers[k].weight.size() != other.layers[k].weight.size() ||
            layers[k].bias.size() != other.layers[k].bias.size()) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Construction

namespace {

ParamTensor empty_tensor(const MlpSpec& spec) {
    ParamTensor t;
    int in = spec.input_dim();
    std::vector<int> widths = spec.hidden_dims;
    widths.push_back(spec.output_dim());
    for (int out : widths) {
        DenseLayer l;
        l.in = in;
        l.out = out;
        l.weight.assign(static_cast<std::size_t>(in) * out, 0.0);
        l.bias.assign(static_cast<std::size_t>(out), 0.0);
        t.layers.push_back(std::move(l));
        in = out;
    }
    return t;
}

void randomize(DenseLayer& l, RandomStream& rng, double scale) {
    const double sd = scale / std::sqrt(static_cast<double>(l.in));
    for (double& w : l.weight) {
        w = sd * rng.normal();
    }
}

inline double activate(Activation a, double z) {
    if (a == Activation::Tanh) {
        return std::tanh(z);
    }
    return z / (1.0 + std::exp(-z));
}

inline double activate_grad(Activation a, double z) {
    if (a == Activation::Tanh) {
        const double th = std::tanh(z);
        return 1.0 - th * th;
    }
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 + z * (1.0 - s));
}

// y = bias + sum_i x[i] * W[i, :], accumulated in ascending i.
void affine_row(const DenseLayer& l, const double* x, double* y) {
    const int out = l.out;
    for (int o = 0; o < out; ++o) {
        y[o] = l.bias[static_cast<std::size_t>(o)];
    }
    const double* w = l.weight.data();
    for (int i = 0; i < l.in; ++i) {
        const double xi = x[i];
        if (xi == 0.0) {
            continue;
        }
        const double* wi = w + static_cast<std::size_t>(i) * out;
        for (int o = 0; o < out; ++o) {
            y[o] += xi * wi[o];
        }
    }
}

}  // namespace

void PolicyParams::validate() const {
    spec.validate();
    if (!net.same_shape(empty_tensor(spec))) {
        throw Error("spec violation: parameter shapes do not match the architecture");
    }
    if (!net.finite()) {
        throw Error("spec violation: non-finite parameter");
    }
}

PolicyParams init_policy(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    PolicyParams p;
    p.spec = spec;
    p.net = empty_tensor(spec);
    RandomStream rng(seed);
    for (std::size_t k = 0; k + 1 < p.net.layers.size(); ++k) {
        randomize(p.net.layers[k], rng, 1.0);
    }
    return p;
}

PolicyParams init_policy_random(const MlpSpec& spec, std::uint64_t seed, double output_scale) {
    PolicyParams p = init_policy(spec, seed);
    RandomStream rng(derive_seed(seed, {1}));
    randomize(p.net.layers.back(), rng, output_scale);
    for (auto& l : p.net.layers) {
        for (double& b : l.bias) {
            b = 0.1 * rng.normal();
        }
    }
    return p;
}

Gradients zeros_like(const PolicyParams& params) {
    Gradients g = params.net;
    g.set_zero();
    return g;
}

void append_features(const MlpSpec& spec, std::span<const double> x, double t, int context,
                     std::vector<double>& out) {
    if (static_cast<int>(x.size()) != spec.latent_dim) {
        throw Error("spec violation: latent has wrong dimension");
    }
    if (context < 0 || context >= spec.num_contexts) {
        throw Error("spec violation: context outside the prompt vocabulary");
    }
    out.insert(out.end(), x.begin(), x.end());
    if (spec.time_embedding == TimeEmbedding::Sinusoidal) {
        for (int k = 0; k < spec.time_frequencies; ++k) {
            const double w = std::numbers::pi * static_cast<double>(k + 1);
            out.push_back(std::sin(w * t));
            out.push_back(std::cos(w * t));
        }
    } else {
        out.push_back(t);
    }
    for (int c = 0; c < spec.num_contexts; ++c) {
        out.push_back(c == context ? 1.0 : 0.0);
    }
}

// ---------------------------------------------------------------------------
// Forward / backward

void forward_batch(const PolicyParams& params, std::span<const double> features, int batch,
                   std::span<double> out, ForwardCache* cache) {
    const auto& layers = params.net.layers;
    const int in_dim = params.spec.input_dim();
    const int out_dim = params.spec.output_dim();
    if (batch < 0 || features.size() != static_cast<std::size_t>(batch) * in_dim ||
        out.size() != static_cast<std::size_t>(batch) * out_dim) {
        throw Error("spec violation: batch buffers have the wrong size");
    }
    if (cache != nullptr) {
        cache->batch = batch;
        cache->inputs.resize(layers.size());
        cache->pre.resize(layers.size() - 1);
    }

    std::vector<double> cur(features.begin(), features.end());
    std::vector<double> next;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const DenseLayer& l = layers[k];
        next.assign(static_cast<std::size_t>(batch) * l.out, 0.0);
        for (int n = 0; n < batch; ++n) {
            affine_row(l, cur.data() + static_cast<std::size_t>(n) * l.in,
                       next.data() + static_cast<std::size_t>(n) * l.out);
        }
        const bool hidden = k + 1 < layers.size();
        if (cache != nullptr) {
            cache->inputs[k] = cur;
            if (hidden) {
                cache->pre[k] = next;
            }
        }
        if (hidden) {
            for (double& z : next) {
                z = activate(params.spec.activation, z);
            }
        }
        cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), out.begin());
}

void backward_batch(const PolicyParams& params, const ForwardCache& cache,
                    std::span<const double> upstream, Gradients& grads) {
    const auto& layers = params.net.layers;
    const int batch = cache.batch;
    const int out_dim = params.spec.output_dim();
    if (upstream.size() != static_cast<std::size_t>(batch) * out_dim) {
        throw Error("spec violation: upstream has the wrong size");
    }
    if (!grads.same_shape(params.net)) {
        throw Error("spec violation: gradient buffer shape mismatch");
    }

    std::vector<double> delta;
    std::vector<double> prev;
    for (int n = 0; n < batch; ++n) {
        delta.assign(upstream.begin() + static_cast<std::ptrdiff_t>(n) * out_dim,
                     upstream.begin() + static_cast<std::ptrdiff_t>(n + 1) * out_dim);
        for (std::size_t kk = layers.size(); kk-- > 0;) {
            const DenseLayer& l = layers[kk];
            DenseLayer& gl = grads.layers[kk];
            const double* a = cache.inputs[kk].data() + static_cast<std::size_t>(n) * l.in;
            for (int o = 0; o < l.out; ++o) {
                gl.bias[static_cast<std::size_t>(o)] += delta[static_cast<std::size_t>(o)];
            }
            for (int i = 0; i < l.in; ++i) {
                const double ai = a[i];
                if (ai == 0.0) {
                    continue;
                }
                double* gw = gl.weight.data() + static_cast<std::size_t>(i) * l.out;
                for (int o = 0; o < l.out; ++o) {
                    gw[o] += ai * delta[static_cast<std::size_t>(o)];
                }
            }
            if (kk == 0) {
                break;
            }
            prev.assign(static_cast<std::size_t>(l.in), 0.0);
            const double* z = cache.pre[kk - 1].data() + static_cast<std::size_t>(n) * l.in;
            for (int i = 0; i < l.in; ++i) {
                const double* wi = l.weight.data() + static_cast<std::size_t>(i) * l.out;
                double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                int o = 0;
                for (; o + 4 <= l.out; o += 4) {
                    s0 += wi[o] * delta[static_cast<std::size_t>(o)];
                    s1 += wi[o + 1] * delta[static_cast<std::size_t>(o + 1)];
                    s2 += wi[o + 2] * delta[static_cast<std::size_t>(o + 2)];
                    s3 += wi[o + 3] * delta[static_cast<std::size_t>(o + 3)];
                }
                for (; o < l.out; ++o) {
                    s0 += wi[o] * delta[static_cast<std::size_t>(o)];
                }
                prev[static_cast<std::size_t>(i)] =
                    ((s0 + s1) + (s2 + s3)) * activate_grad(params.spec.activation, z[i]);
            }
            delta.swap(prev);
        }
    }
}

Vec forward(const PolicyParams& params, std::span<const double> x, double t, int context) {
    std::vector<double> feat;
    append_features(params.spec, x, t, context, feat);
    Vec out(static_cast<std::size_t>(params.spec.output_dim()));
    forward_batch(params, feat, 1, out);
    return out;
}

Gradients backward(const PolicyParams& params, std::span<const double> x, double t, int context,
                   std::span<const double> upstream) {
    if (static_cast<int>(upstream.size()) != params.spec.output_dim() || !all_finite(upstream)) {
        throw Error("spec violation: upstream must be finite with the output dimension");
    }
    std::vector<double> feat;
    append_features(params.spec, x, t, context, feat);
    Vec out(static_cast<std::size_t>(params.spec.output_dim()));
    ForwardCache cache;
    forward_batch(params, feat, 1, out, &cache);
    Gradients g = zeros_like(params);
    backward_batch(params, cache, upstream, g);
    return g;
}

// ---------------------------------------------------------------------------
// Adam

AdamState make_adam(const PolicyParams& params, const AdamConfig& config) {
    AdamState s;
    s.config = config;
    s.first_moment = zeros_like(params);
    s.second_moment = zeros_like(params);
    return s;
}

void adam_update(PolicyParams& params, const Gradients& grads, AdamState& state) {
    if (!grads.same_shape(params.net) || !state.first_moment.same_shape(params.net) ||
        !state.second_moment.same_shape(params.net)) {
        throw Error("spec violation: optimizer shapes do not match parameters");
    }
    if (!grads.finite()) {
        throw Error("divergence detected");
    }
    const AdamConfig& c = state.config;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
        }
    };
    for (std::size_t k = 0; k < params.net.layers.size(); ++k) {
        auto& pl = params.net.layers[k];
        const auto& gl = grads.layers[k];
        auto& ml = state.first_moment.layers[k];
        auto& vl = state.second_moment.layers[k];
        update(pl.weight, gl.weight, ml.weight, vl.weight);
        update(pl.bias, gl.bias, ml.bias, vl.bias);
    }
    params.version += 1;
}

PolicySnapshot snapshot(const PolicyParams& params) {
    return std::make_shared<const PolicyParams>(params);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kMagic = "prunegrpo-checkpoint v1";
}

void save_checkpoint(const std::string& path, const PolicyParams& params) {
    static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot open checkpoint for writing: " + path);
    }
    const MlpSpec& s = params.spec;
    f << kMagic << '\n';
    f << "latent_dim " << s.latent_dim << '\n';
    f << "hidden";
    for (int h : s.hidden_dims) {
        f << ' ' << h;
    }
    f << '\n';
    f << "activation " << to_string(s.activation) << '\n';
    f << "time_embedding " << to_string(s.time_embedding) << '\n';
    f << "time_frequencies " << s.time_frequencies << '\n';
    f << "num_contexts " << s.num_contexts << '\n';
    f << "version " << params.version << '\n';
    f << "values " << params.num_parameters() << '\n';
    for (const auto& l : params.net.layers) {
        f.write(reinterpret_cast<const char*>(l.weight.data()),
                static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
        f.write(reinterpret_cast<const char*>(l.bias.data()),
                static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
    }
    if (!f) {
        throw Error("failed writing checkpoint: " + path);
    }
}

PolicyParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot open checkpoint: " + path);
    }
    auto expect_line = [&](const std::string& key) {
        std::string line;
        if (!std::getline(f, line)) {
            throw Error("truncated checkpoint header: " + path);
        }
        std::istringstream is(line);
        std::string k;
        is >> k;
        if (k != key) {
            throw Error("checkpoint header: expected '" + key + "' in " + path);
        }
        std::string rest;
        std::getline(is, rest);
        return rest;
    };
    std::string magic;
    std::getline(f, magic);
    if (magic != kMagic) {
        throw Error("not a checkpoint file: " + path);
    }
    MlpSpec s;
    s.latent_dim = std::stoi(expect_line("latent_dim"));
    {
        std::istringstream is(expect_line("hidden"));
        s.hidden_dims.clear();
        int h = 0;
        while (is >> h) {
            s.hidden_dims.push_back(h);
        }
    }
    auto trim = [](std::string v) {
        v.erase(0, v.find_first_not_of(' '));
        return v;
    };
    s.activation = parse_activation(trim(expect_line("activation")));
    s.time_embedding = parse_time_embedding(trim(expect_line("time_embedding")));
    s.time_frequencies = std::stoi(expect_line("time_frequencies"));
    s.num_contexts = std::stoi(expect_line("num_contexts"));
    PolicyParams p;
    p.version = std::stoll(expect_line("version"));
    const std::size_t count = std::stoull(expect_line("values"));
    p.spec = s;
    p.net = empty_tensor(s);
    if (count != p.num_parameters()) {
        throw Error("checkpoint value count does not match architecture: " + path);
    }
    for (auto& l : p.net.layers) {
        f.read(reinterpret_cast<char*>(l.weight.data()),
               static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
        f.read(reinterpret_cast<char*>(l.bias.data()),
               static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
    }
    if (!f) {
        throw Error("truncated checkpoint data: " + path);
    }
    p.validate();
    return p;
}

}  // namespace prunegrpo
