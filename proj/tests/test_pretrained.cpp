// SPDX-License-Identifier: Apache-2.0
//
// Properties of the pretrained ring model. The checkpoint directory comes
// from PRUNEGRPO_PRETRAINED (written by the pretrain fixture).

#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include "prunegrpo/config.hpp"
#include "prunegrpo/diagnostics.hpp"

using namespace prunegrpo;

namespace {

struct Fixture {
    PretrainConfig config;
    PolicyParams params;
    std::vector<LossCurveRow> curve;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        const char* dir = std::getenv("PRUNEGRPO_PRETRAINED");
        REQUIRE_MESSAGE(dir != nullptr, "PRUNEGRPO_PRETRAINED is not set");
        const std::string d = dir;
        Fixture out;
        out.config = load_pretrain_config(d + "/pretrain_config.json");
        out.params = load_checkpoint(d + "/policy.ckpt");
        std::ifstream csv(d + "/loss_curve.csv");
        std::string line;
        std::getline(csv, line);
        while (std::getline(csv, line)) {
            std::stringstream ss(line);
            std::string a, b, c;
            std::getline(ss, a, ',');
            std::getline(ss, b, ',');
            std::getline(ss, c, ',');
            out.curve.push_back({std::stoi(a), parse_double(b), parse_double(c)});
        }
        return out;
    }();
    return f;
}

// E[x1 - x0 | x_t] for the isotropic ring mixture, by Gaussian conditioning per mode.
Vec posterior_velocity(const DatasetSpec& spec, std::span<const double> x, double t) {
    const auto centers = mode_centers(spec);
    const double s2 = spec.component_std * spec.component_std;
    const double var = (1 - t) * (1 - t) + t * t * s2;
    std::vector<double> logw(centers.size());
    std::vector<Vec> ev(centers.size());
    double top = -INFINITY;
    for (std::size_t j = 0; j < centers.size(); ++j) {
        const double dx = x[0] - t * centers[j][0];
        const double dy = x[1] - t * centers[j][1];
        logw[j] = -(dx * dx + dy * dy) / (2 * var);
        top = std::max(top, logw[j]);
        const double g = t * s2 / var - (1 - t) / var;
        ev[j] = {centers[j][0] + g * dx, centers[j][1] + g * dy};
    }
    Vec out{0.0, 0.0};
    double z = 0.0;
    for (std::size_t j = 0; j < centers.size(); ++j) {
        const double w = std::exp(logw[j] - top);
        z += w;
        out[0] += w * ev[j][0];
        out[1] += w * ev[j][1];
    }
    out[0] /= z;
    out[1] /= z;
    return out;
}

std::vector<double> occupancy(const DatasetSpec& spec, const std::vector<Vec>& xs) {
    std::vector<double> h(static_cast<std::size_t>(spec.modes), 0.0);
    for (const auto& x : xs) h[static_cast<std::size_t>(nearest_mode(spec, x))] += 1.0;
    for (double& v : h) v /= static_cast<double>(xs.size());
    return h;
}

std::vector<Vec> ode_samples(const Fixture& f, int n, std::uint64_t seed) {
    RandomStream rng(seed);
    std::vector<Vec> out;
    for (int i = 0; i < n; ++i) {
        Vec x0{rng.normal(), rng.normal()};
        out.push_back(ode_integrate(x0, 0.0, i % f.config.mlp.num_contexts, f.params, f.config.schedule,
                                    f.config.schedule.num_steps));
    }
    return out;
}

}  // namespace

TEST_CASE("validation loss against the Bayes-optimal field") {
    const auto& f = fixture();
    REQUIRE(f.config.schedule.backbone == Backbone::RectifiedFlow);
    const double model = validation_loss(f.params, f.config);
    // Replay the validation draws through the posterior-mean velocity.
    RandomStream data_rng(derive_seed(f.config.seed, {0x7a11}));
    const auto data = sample_dataset(f.config.dataset, f.config.validation_size, data_rng);
    RandomStream noise_rng(derive_seed(f.config.seed, {0x7a12}));
    double oracle = 0.0;
    for (const auto& p : data) {
        const double t = noise_rng.uniform();
        Vec xt(2), v(2);
        for (std::size_t i = 0; i < 2; ++i) {
            const double x0 = noise_rng.normal();
            xt[i] = (1 - t) * x0 + t * p.x[i];
            v[i] = p.x[i] - x0;
        }
        const Vec e = posterior_velocity(f.config.dataset, xt, t);
        oracle += (e[0] - v[0]) * (e[0] - v[0]) + (e[1] - v[1]) * (e[1] - v[1]);
    }
    oracle /= static_cast<double>(data.size());
    MESSAGE("validation loss " << model << ", Bayes floor " << oracle);
    CHECK(model < f.config.expected_val_loss);
    CHECK(model - oracle < 0.1);
    CHECK(f.curve.back().val_loss == doctest::Approx(model).epsilon(1e-12));
}

TEST_CASE("ODE sampling covers every mode") {
    const auto& f = fixture();
    const auto h = occupancy(f.config.dataset, ode_samples(f, 10000, 11));
    for (double v : h) CHECK(v >= 0.05);
}

TEST_CASE("training loss decreases under a 500-step moving average") {
    const auto& f = fixture();
    REQUIRE(f.config.log_every == 100);
    // Row noise pooled from successive differences, which a slow trend barely affects.
    double d2 = 0.0;
    for (std::size_t i = 1; i < f.curve.size(); ++i) {
        const double d = f.curve[i].train_loss - f.curve[i - 1].train_loss;
        d2 += d * d;
    }
    const double row_sd = std::sqrt(d2 / (2.0 * static_cast<double>(f.curve.size() - 1)));
    const std::size_t per = 5;
    std::vector<double> mean;
    for (std::size_t b = 0; b + per <= f.curve.size(); b += per) {
        double m = 0.0;
        for (std::size_t i = b; i < b + per; ++i) m += f.curve[i].train_loss;
        mean.push_back(m / per);
    }
    REQUIRE(mean.size() >= 10);
    const double tol = 3.0 * std::sqrt(2.0) * row_sd / std::sqrt(static_cast<double>(per));
    int violations = 0;
    for (std::size_t i = 1; i < mean.size(); ++i) {
        if (mean[i] > mean[i - 1] + tol) {
            ++violations;
            MESSAGE("block " << i << ": " << mean[i - 1] << " -> " << mean[i]);
        }
    }
    CHECK(violations == 0);
    CHECK(mean.back() < mean.front());
}

TEST_CASE("SDE and ODE samplers agree on mode occupancy") {
    const auto& f = fixture();
    std::vector<Vec> sde;
    for (int g = 0; g < 100; ++g) {
        const auto grp = sample_group(g % f.config.mlp.num_contexts, 100, f.params, f.config.schedule,
                                      derive_seed(21, {static_cast<std::uint64_t>(g)}));
        for (const auto& tr : grp.trajectories) sde.push_back(*tr.terminal_state);
    }
    const auto hs = occupancy(f.config.dataset, sde);
    const auto ho = occupancy(f.config.dataset, ode_samples(f, 10000, 22));
    for (std::size_t j = 0; j < hs.size(); ++j) {
        CAPTURE(j);
        CHECK(std::abs(hs[j] - ho[j]) <= 0.05);
    }
}

TEST_CASE("preview error shrinks along the path") {
    const auto& f = fixture();
    const auto& s = f.config.schedule;
    const auto grp = sample_group(0, 100, f.params, s, 31);
    std::vector<double> err(static_cast<std::size_t>(s.num_steps), 0.0);
    for (const auto& tr : grp.trajectories) {
        for (int k = 0; k < s.num_steps; ++k) {
            const auto& st = tr.steps[static_cast<std::size_t>(k)];
            const Vec a = ode_lookahead(st.x, st.t, 0, f.params, s);
            const Vec b = ode_integrate(st.x, st.t, 0, f.params, s, 200);
            err[static_cast<std::size_t>(k)] += std::hypot(a[0] - b[0], a[1] - b[1]) / 100.0;
        }
    }
    for (int k = 1; k < s.num_steps; ++k) {
        CAPTURE(k);
        CHECK(err[static_cast<std::size_t>(k)] < err[static_cast<std::size_t>(k - 1)]);
    }
}

TEST_CASE("late previews rank terminal rewards") {
    const auto& f = fixture();
    RewardSpec r;
    r.targets = {{4.0, 0.0}};
    r.temperature = 0.5;
    const auto rows = proxy_fidelity(f.params, f.config.schedule, r, Decoder{}, 0, 200, {5, 7}, 41);
    REQUIRE(rows.size() == 2);
    MESSAGE("spearman " << rows[0].spearman << " / " << rows[1].spearman);
    CHECK(rows[0].spearman >= 0.7);
    CHECK(rows[1].spearman >= 0.7);
    CHECK(rows[1].spearman >= rows[0].spearman);
}

TEST_CASE("trained single-Gaussian score matches the closed form") {
    PretrainConfig c;
    c.mlp.hidden_dims = {64, 64};
    c.mlp.num_contexts = 1;
    c.dataset.kind = DatasetKind::SingleGaussian;
    c.dataset.mean = {1.0, -0.5};
    c.dataset.component_std = 0.5;
    c.dataset.num_prompts = 1;
    c.steps = SINGLE_GAUSSIAN_STEPS;
    c.batch_size = 512;
    c.learning_rate = 3e-3;
    c.final_learning_rate = 1e-5;
    c.log_every = 0;
    c.seed = 3;
    const auto res = pretrain_run(c);
    RandomStream rng(5);
    double worst = 0.0, total = 0.0;
    const int n = 400;
    for (int i = 0; i < n; ++i) {
        const double t = 0.1 + 0.8 * rng.uniform();
        const double var = (1 - t) * (1 - t) + t * t * 0.25;
        Vec x{t * 1.0 + std::sqrt(var) * rng.normal(), t * -0.5 + std::sqrt(var) * rng.normal()};
        const Vec v = forward(res.params, x, t, 0);
        const Vec sc = score_from_velocity(x, t, v, c.schedule);
        const Vec exact{-(x[0] - t * 1.0) / var, -(x[1] + t * 0.5) / var};
        const double e = std::hypot(sc[0] - exact[0], sc[1] - exact[1]) / std::hypot(exact[0], exact[1]);
        worst = std::max(worst, e);
        total += e / n;
    }
    MESSAGE("score relative error: mean " << total << ", worst " << worst);
    CHECK(total < SINGLE_GAUSSIAN_TOL);
}
