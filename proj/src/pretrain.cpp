// SPDX-License-Identifier: Apache-2.0

#include "prunegrpo/pretrain.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace prunegrpo {

std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::GaussianMixtureRing:
            return "gaussian-mixture-ring";
        case DatasetKind::TwoMoons:
            return "two-moons";
        case DatasetKind::SingleGaussian:
            return "single-gaussian";
    }
    return "unknown";
}

DatasetKind parse_dataset_kind(const std::string& s) {
    if (s == "gaussian-mixture-ring") {
        return DatasetKind::GaussianMixtureRing;
    }
    if (s == "two-moons") {
        return DatasetKind::TwoMoons;
    }
    if (s == "single-gaussian") {
        return DatasetKind::SingleGaussian;
    }
    throw Error("unknown dataset kind '" + s + "'");
}

void DatasetSpec::validate() const {
    if (modes < 1) {
        throw Error("dataset: mode count must be at least 1");
    }
    if (!(component_std >= 0.0)) {
        throw Error("dataset: component std must be non-negative");
    }
    if (num_prompts < 1) {
        throw Error("dataset: need at least one prompt");
    }
    if (!prompt_mode_weights.empty()) {
        if (static_cast<int>(prompt_mode_weights.size()) != num_prompts) {
            throw Error("dataset: one mode-weight row per prompt required");
        }
        for (const auto& row : prompt_mode_weights) {
            double total = 0.0;
            if (static_cast<int>(row.size()) != modes) {
                throw Error("dataset: mode-weight row has the wrong length");
            }
            for (double w : row) {
                if (!(w >= 0.0)) {
                    throw Error("dataset: mode weights must be non-negative");
                }
                total += w;
            }
            if (!(total > 0.0)) {
                throw Error("dataset: mode-weight row sums to zero");
            }
        }
    }
}

std::vector<Vec> mode_centers(const DatasetSpec& spec) {
    std::vector<Vec> c;
    for (int j = 0; j < spec.modes; ++j) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(spec.modes);
        c.push_back({spec.radius * std::cos(a), spec.radius * std::sin(a)});
    }
    return c;
}

int nearest_mode(const DatasetSpec& spec, std::span<const double> x) {
    const auto centers = mode_centers(spec);
    int best = 0;
    double best_d = INFINITY;
    for (int j = 0; j < static_cast<int>(centers.size()); ++j) {
        const double dx = x[0] - centers[static_cast<std::size_t>(j)][0];
        const double dy = x[1] - centers[static_cast<std::size_t>(j)][1];
        const double dd = dx * dx + dy * dy;
        if (dd < best_d) {
            best_d = dd;
            best = j;
        }
    }
    return best;
}

std::vector<DataPoint> sample_dataset(const DatasetSpec& spec, int n, RandomStream& rng) {
    spec.validate();
    if (n < 1) {
        throw Error("dataset: n must be at least 1");
    }
    const auto centers = mode_centers(spec);
    std::vector<DataPoint> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        DataPoint p;
        p.context = k % spec.num_prompts;
        switch (spec.kind) {
            case DatasetKind::GaussianMixtureRing: {
                int mode = 0;
                if (spec.prompt_mode_weights.empty()) {
                    mode = static_cast<int>(rng.uniform_index(0, static_cast<std::size_t>(spec.modes - 1)));
                } else {
                    const auto& row = spec.prompt_mode_weights[static_cast<std::size_t>(p.context)];
                    double total = 0.0;
                    for (double w : row) {
                        total += w;
                    }
                    double u = rng.uniform() * total;
                    mode = spec.modes - 1;
                    for (int j = 0; j < spec.modes; ++j) {
                        u -= row[static_cast<std::size_t>(j)];
                        if (u < 0.0) {
                            mode = j;
                            break;
                        }
                    }
                }
                const Vec& c = centers[static_cast<std::size_t>(mode)];
                p.x = {c[0] + spec.component_std * rng.normal(), c[1] + spec.component_std * rng.normal()};
                break;
            }
            case DatasetKind::TwoMoons: {
                const bool upper = rng.uniform() < 0.5;
                const double th = std::numbers::pi * rng.uniform();
                const double s = spec.radius / 2.0;
                double x0 = upper ? std::cos(th) : 1.0 - std::cos(th);
                double x1 = upper ? std::sin(th) : 0.5 - std::sin(th);
                p.x = {s * (x0 - 0.5) + spec.component_std * rng.normal(),
                       s * (x1 - 0.25) + spec.component_std * rng.normal()};
                break;
            }
            case DatasetKind::SingleGaussian: {
                p.x = spec.mean;
                for (double& v : p.x) {
                    v += spec.component_std * rng.normal();
                }
                break;
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

// Shared regression driver: targets and inputs are assembled by `build`.
template <typename Build>
LossAndGrad regression_loss(const PolicyParams& params, std::span<const DataPoint> batch, bool with_grad,
                            Build&& build) {
    if (batch.empty()) {
        throw Error("empty batch");
    }
    const std::size_t d = static_cast<std::size_t>(params.spec.latent_dim);
    std::vector<double> feats;
    std::vector<double> targets;
    targets.reserve(batch.size() * d);
    Vec xt(d);
    Vec target(d);
    for (const DataPoint& p : batch) {
        const double t = build(p, xt, target);
        append_features(params.spec, xt, t, p.context, feats);
        targets.insert(targets.end(), target.begin(), target.end());
    }
    const int n = static_cast<int>(batch.size());
    std::vector<double> out(targets.size());
    ForwardCache cache;
    forward_batch(params, feats, n, out, with_grad ? &cache : nullptr);
    LossAndGrad res;
    std::vector<double> upstream(out.size());
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double r = out[i] - targets[i];
        total += r * r;
        upstream[i] = 2.0 * r * inv_n;
    }
    res.loss = total * inv_n;
    if (with_grad) {
        res.grads = zeros_like(params);
        backward_batch(params, cache, upstream, res.grads);
    }
    return res;
}

}  // namespace

LossAndGrad flow_matching_loss(const PolicyParams& params, std::span<const DataPoint> batch,
                               RandomStream& rng, double t_max, bool with_grad) {
    return regression_loss(params, batch, with_grad, [&](const DataPoint& p, Vec& xt, Vec& target) {
        const double t = t_max * rng.uniform();
        for (std::size_t i = 0; i < xt.size(); ++i) {
            const double x0 = rng.normal();
            xt[i] = (1.0 - t) * x0 + t * p.x[i];
            target[i] = p.x[i] - x0;
        }
        return t;
    });
}

LossAndGrad ddpm_loss(const PolicyParams& params, std::span<const DataPoint> batch,
                      const NoiseSchedule& schedule, RandomStream& rng, bool with_grad) {
    if (schedule.backbone != Backbone::DiffusionVP) {
        throw Error("ddpm_loss needs a diffusion schedule");
    }
    return regression_loss(params, batch, with_grad, [&](const DataPoint& p, Vec& xt, Vec& target) {
        const double t = schedule.t_end() * rng.uniform();
        const double a = schedule.alpha(t);
        const double s = schedule.marginal_std(t);
        for (std::size_t i = 0; i < xt.size(); ++i) {
            const double eps = rng.normal();
            xt[i] = a * p.x[i] + s * eps;
            target[i] = eps;
        }
        return t;
    });
}

namespace {

LossAndGrad backbone_loss(const PolicyParams& params, std::span<const DataPoint> batch,
                          const NoiseSchedule& schedule, RandomStream& rng, bool with_grad) {
    if (schedule.backbone == Backbone::RectifiedFlow) {
        return flow_matching_loss(params, batch, rng, 1.0, with_grad);
    }
    return ddpm_loss(params, batch, schedule, rng, with_grad);
}

}  // namespace

double validation_loss(const PolicyParams& params, const PretrainConfig& config) {
    RandomStream data_rng(derive_seed(config.seed, {0x7a11}));
    const auto data = sample_dataset(config.dataset, config.validation_size, data_rng);
    RandomStream noise_rng(derive_seed(config.seed, {0x7a12}));
    return backbone_loss(params, data, config.schedule, noise_rng, false).loss;
}

PretrainResult pretrain_run(const PretrainConfig& config) {
    config.mlp.validate();
    config.dataset.validate();
    config.schedule.validate();
    if (config.steps < 0 || config.batch_size < 1) {
        throw Error("pretrain: steps must be >= 0 and batch_size >= 1");
    }
    PretrainResult res;
    res.params = init_policy(config.mlp, derive_seed(config.seed, {0x1417}));
    if (config.steps == 0) {
        return res;
    }
    AdamConfig ac;
    ac.learning_rate = config.learning_rate;
    AdamState adam = make_adam(res.params, ac);
    RandomStream data_rng(derive_seed(config.seed, {0xda7a}));
    RandomStream noise_rng(derive_seed(config.seed, {0x0015e}));
    res.train_losses.reserve(static_cast<std::size_t>(config.steps));
    double window = 0.0;
    int window_n = 0;
    for (int step = 0; step < config.steps; ++step) {
        const double progress = static_cast<double>(step) / static_cast<double>(config.steps);
        adam.config.learning_rate =
            config.final_learning_rate +
            0.5 * (config.learning_rate - config.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * progress));
        const auto batch = sample_dataset(config.dataset, config.batch_size, data_rng);
        LossAndGrad lg = backbone_loss(res.params, batch, config.schedule, noise_rng, true);
        if (!std::isfinite(lg.loss)) {
            throw Error("pretrain diverged at step " + std::to_string(step) + " (loss " +
                        format_double(lg.loss) + ")");
        }
        adam_update(res.params, lg.grads, adam);
        res.train_losses.push_back(lg.loss);
        window += lg.loss;
        window_n += 1;
        const bool last = step + 1 == config.steps;
        if (config.log_every > 0 && ((step + 1) % config.log_every == 0 || last)) {
            res.curve.push_back({step + 1, window / window_n, validation_loss(res.params, config)});
            window = 0.0;
            window_n = 0;
            if (config.target_val_loss > 0.0 && res.curve.back().val_loss < config.target_val_loss) {
                res.steps_run = step + 1;
                return res;
            }
        }
    }
    res.steps_run = config.steps;
    return res;
}

void write_loss_curve(const std::string& path, const std::vector<LossCurveRow>& rows) {
    std::ofstream f(path);
    if (!f) {
        throw Error("cannot write loss curve: " + path);
    }
    f << "step,train_loss,val_loss\n";
    for (const auto& r : rows) {
        f << r.step << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << '\n';
    }
    if (!f) {
        throw Error("failed writing loss curve: " + path);
    }
}

}  // namespace prunegrpo
