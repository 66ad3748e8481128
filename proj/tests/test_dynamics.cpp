// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "prunegrpo/dynamics.hpp"

using namespace prunegrpo;

namespace {

MlpSpec small_spec() {
    MlpSpec s;
    s.hidden_dims = {16, 16};
    return s;
}

PolicyParams constant_field(const Vec& u) {
    auto p = init_policy(small_spec(), 1);
    p.net.layers.back().bias = u;
    return p;
}

NoiseSchedule rf(double sigma0 = 0.3) {
    NoiseSchedule s;
    s.sigma0 = sigma0;
    return s;
}

NoiseSchedule vp(double eta = 1.0) {
    NoiseSchedule s;
    s.backbone = Backbone::DiffusionVP;
    s.eta = eta;
    return s;
}

}  // namespace

TEST_CASE("grid") {
    const auto s = rf();
    CHECK(s.grid_time(0) == 0.0);
    CHECK(s.grid_time(10) == s.t_end());
    for (int k = 0; k <= 10; ++k) CHECK(s.grid_time(k) <= s.t_clamp);
    CHECK(s.dt() == doctest::Approx(0.096));
}

TEST_CASE("rectified flow drifts") {
    const auto p = init_policy_random(small_spec(), 3);
    const Vec x{0.4, -1.2};
    const double t = 0.3;
    const Vec v = forward(p, x, t, 1);
    CHECK(drift_sde(x, t, 1, p, rf(0.0)) == v);
    CHECK(drift_ode(x, t, 1, p, rf()) == v);

    const Vec sde = drift_sde(x, t, 1, p, rf(0.3));
    const Vec score = score_from_velocity(x, t, v, rf());
    for (int i = 0; i < 2; ++i) {
        CHECK(sde[i] - v[i] == doctest::Approx(-0.045 * score[i]).epsilon(1e-12));
    }
    // The correction is linear in the score: doubling it doubles the correction.
    Vec out2(v);
    for (auto& o : out2) o *= 2.0;
    Vec d1(2), d2(2);
    const auto sch = rf(0.5);
    sde_drift_from_output(sch, Vec{0.0, 0.0}, t, v, d1);
    sde_drift_from_output(sch, Vec{0.0, 0.0}, t, out2, d2);
    for (int i = 0; i < 2; ++i) CHECK((d2[i] - out2[i]) == doctest::Approx(2.0 * (d1[i] - v[i])));

    CHECK_THROWS_WITH(drift_sde(x, 1.0, 1, p, rf()), "time clamp violated");
    CHECK_THROWS_WITH(drift_ode(x, 0.97, 1, p, rf()), "time clamp violated");
}

TEST_CASE("diffusion drifts") {
    const auto p = init_policy_random(small_spec(), 4);
    const Vec x{0.8, 0.1};
    const double t = 0.4;
    const auto sch = vp(1.0);
    const Vec eps = forward(p, x, t, 0);
    const Vec score = eps_to_score(eps, t, sch);
    const double b = sch.beta(t);
    CHECK(sch.sigma(t) * sch.sigma(t) == doctest::Approx(b));
    const Vec d = drift_sde(x, t, 0, p, sch);
    for (int i = 0; i < 2; ++i) CHECK(d[i] == doctest::Approx(-0.5 * b * x[i] - b * score[i]).epsilon(1e-13));
    const Vec o = drift_ode(x, t, 0, p, sch);
    for (int i = 0; i < 2; ++i) CHECK(o[i] == doctest::Approx(-0.5 * b * x[i] - 0.5 * b * score[i]).epsilon(1e-13));
    // Sampler-axis drifts run the other way.
    const Vec ds = sampler_drift_sde(x, t, 0, p, sch);
    for (int i = 0; i < 2; ++i) CHECK(ds[i] == -d[i]);

    // A zero score leaves only f(t, x).
    const auto z = init_policy(small_spec(), 4);
    const Vec f = drift_ode(x, t, 0, z, sch);
    for (int i = 0; i < 2; ++i) CHECK(f[i] == doctest::Approx(-0.5 * b * x[i]));

    CHECK(sch.beta(1.0) == doctest::Approx(sch.beta_min));
    CHECK(sch.beta(0.0) == doctest::Approx(sch.beta_max));
    // alpha^2 + sigma^2 = 1 for VP.
    for (double s : {0.0, 0.3, 0.9, 0.999}) {
        CHECK(sch.alpha(s) * sch.alpha(s) + sch.marginal_std(s) * sch.marginal_std(s) == doctest::Approx(1.0));
    }
}

TEST_CASE("score conversions") {
    const auto s = rf();
    const Vec x{1.0, -2.0};
    const Vec v{0.5, 3.0};
    CHECK(score_from_velocity(x, 0.0, v, s) == Vec{-1.0, 2.0});
    const Vec tv{0.2 * v[0], 0.2 * v[1]};
    const Vec zero = score_from_velocity(tv, 0.2, v, s);
    CHECK(zero[0] == 0.0);
    CHECK(zero[1] == 0.0);
    CHECK_THROWS(score_from_velocity(x, 0.99, v, s));

    // Closed-form Gaussian interpolant: data N(m, q^2 I).
    const Vec m{1.5, -0.5};
    const double q = 0.4;
    for (double t : {0.1, 0.5, 0.9}) {
        const double var = (1 - t) * (1 - t) + t * t * q * q;
        const Vec xt{0.3, 0.7};
        Vec vstar(2), analytic(2);
        for (int i = 0; i < 2; ++i) {
            const double r = xt[i] - t * m[i];
            vstar[i] = m[i] + t * q * q / var * r - (1 - t) / var * r;
            analytic[i] = -r / var;
        }
        const Vec got = score_from_velocity(xt, t, vstar, s);
        for (int i = 0; i < 2; ++i) CHECK(got[i] == doctest::Approx(analytic[i]).epsilon(1e-12));
    }

    const auto d = vp();
    CHECK(eps_to_score(Vec{0.0, 0.0}, 0.5, d) == Vec{0.0, 0.0});
    const Vec e{0.3, -1.0};
    const Vec sc = eps_to_score(e, 0.5, d);
    for (int i = 0; i < 2; ++i) CHECK(sc[i] == doctest::Approx(-e[i] / d.marginal_std(0.5)));
    // Closed-form VP marginal of N(m, q^2 I): the optimal eps maps onto the exact score.
    for (double t : {0.2, 0.6, 0.95}) {
        const double a = d.alpha(t), sd = d.marginal_std(t);
        const double var = a * a * q * q + sd * sd;
        const Vec xt{0.3, 0.7};
        Vec eps(2);
        for (int i = 0; i < 2; ++i) eps[i] = sd * (xt[i] - a * m[i]) / var;
        const Vec got = eps_to_score(eps, t, d);
        for (int i = 0; i < 2; ++i) CHECK(got[i] == doctest::Approx(-(xt[i] - a * m[i]) / var).epsilon(1e-12));
    }
    NoiseSchedule degenerate = d;
    CHECK_THROWS_WITH(eps_to_score(e, 1.0, degenerate), "score undefined");
}

TEST_CASE("em_step") {
    const auto p = init_policy_random(small_spec(), 5);
    const Vec x{0.2, 0.3};
    RandomStream a(9), b(9);
    const auto s1 = em_step(x, 0.1, 0.05, 2, p, rf(), a);
    const auto s2 = em_step(x, 0.1, 0.05, 2, p, rf(), b);
    CHECK(s1.action == s2.action);
    CHECK(s1.logprob_old == s2.logprob_old);
    CHECK(s1.noise_scale == doctest::Approx(0.3 * std::sqrt(0.05)));
    CHECK(s1.logprob_old == doctest::Approx(gaussian_logpdf(s1.action, s1.drift_mean, s1.noise_scale)));

    RandomStream c(1);
    const auto det = em_step(x, 0.1, 0.05, 2, p, rf(0.0), c);
    const Vec v = forward(p, x, 0.1, 2);
    for (int i = 0; i < 2; ++i) CHECK(det.action[i] == v[i] * 0.05);
    CHECK(det.noise_scale == 0.0);

    CHECK(gaussian_logpdf(Vec{0.0}, Vec{0.0}, 1.0) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
    CHECK(gaussian_logpdf(Vec{0.0}, Vec{0.0}, 1.0) == doctest::Approx(-0.91894).epsilon(1e-5));
    CHECK_THROWS_WITH(gaussian_logpdf(Vec{0.0}, Vec{0.0}, 0.0), "degenerate policy density");

    RandomStream d(2);
    CHECK_THROWS_WITH(em_step(Vec{std::nan(""), 0.0}, 0.1, 0.05, 0, p, rf(), d), "sampler diverged");
}

TEST_CASE("noiseless sampling follows the Euler ODE path") {
    const auto p = init_policy_random(small_spec(), 6, 0.5);
    const auto s = rf(0.0);
    Group g = sample_group(1, 1, p, s, 42);
    Vec x = init_group(1, 1, 42, 2).trajectories[0].state;
    for (int k = 0; k < s.num_steps; ++k) {
        const double t = s.grid_time(k);
        const Vec d = sampler_drift_ode(x, t, 1, p, s);
        const double dt = s.grid_time(k + 1) - t;
        for (int i = 0; i < 2; ++i) x[i] += d[i] * dt;
        CHECK(g.trajectories[0].steps[static_cast<std::size_t>(k)].action[0] == d[0] * dt);
    }
    CHECK(*g.trajectories[0].terminal_state == x);
}

TEST_CASE("groups") {
    const auto p = init_policy_random(small_spec(), 7, 0.5);
    const auto s = rf();
    const Group a = sample_group(0, 24, p, s, 1234);
    const Group b = sample_group(0, 24, p, s, 1234);
    CHECK(a.total_steps() == 240);
    for (std::size_t i = 0; i < 24; ++i) {
        CHECK(a.trajectories[i].terminal_state == b.trajectories[i].terminal_state);
        CHECK(a.trajectories[i].steps.size() == 10);
        for (std::size_t k = 0; k < 10; ++k) {
            CHECK(a.trajectories[i].steps[k].action == b.trajectories[i].steps[k].action);
            CHECK(a.trajectories[i].steps[k].logprob_old == b.trajectories[i].steps[k].logprob_old);
        }
    }
    // A trajectory's path depends only on its own stream, not on its neighbours.
    const Group small = sample_group(0, 5, p, s, 1234);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(small.trajectories[i].terminal_state == a.trajectories[i].terminal_state);
    }
    CHECK_THROWS(sample_group(0, 0, p, s, 1));

    const auto d = vp(0.7);
    const Group dg = sample_group(2, 8, p, d, 5);
    for (const auto& tr : dg.trajectories) {
        CHECK(all_finite(*tr.terminal_state));
        CHECK(tr.steps.front().noise_scale == doctest::Approx(0.7 * std::sqrt(d.beta(0.0) * d.dt())));
    }
}

TEST_CASE("lookahead") {
    const Vec u{0.7, -1.3};
    const auto p = constant_field(u);
    const auto s = rf();
    const Vec x{0.1, 0.2};
    const Vec y = ode_lookahead(x, 0.3, 0, p, s);
    for (int i = 0; i < 2; ++i) CHECK(y[i] == doctest::Approx(x[i] + (s.t_end() - 0.3) * u[i]).epsilon(1e-15));
    // For a constant field the preview is the exact terminal of the ODE.
    const Vec full = ode_integrate(x, 0.3, 0, p, s, 25);
    for (int i = 0; i < 2; ++i) CHECK(y[i] == doctest::Approx(full[i]).epsilon(1e-12));
    CHECK(ode_lookahead(x, s.t_end(), 0, p, s) == x);

    const auto q = init_policy_random(small_spec(), 8);
    Group g = init_group(3, 4, 77, 2);
    for (int k = 0; k < 4; ++k) advance_group(g, k, q, s);
    const std::vector<std::size_t> idx{0, 2, 3};
    const auto batch = ode_lookahead_batch(g, idx, s.grid_time(4), q, s);
    for (std::size_t j = 0; j < idx.size(); ++j) {
        CHECK(batch[j] == ode_lookahead(g.trajectories[idx[j]].state, s.grid_time(4), 3, q, s));
    }
}
