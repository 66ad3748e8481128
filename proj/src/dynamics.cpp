// SPDX-License-Identifier: Apache-2.0

#include "prunegrpo/dynamics.hpp"

#include <cmath>
#include <numbers>

namespace prunegrpo {

std::string to_string(Backbone b) {
    return b == Backbone::RectifiedFlow ? "rectified-flow" : "diffusion-vp";
}

Backbone parse_backbone(const std::string& s) {
    if (s == "rectified-flow") {
        return Backbone::RectifiedFlow;
    }
    if (s == "diffusion-vp" || s == "diffusion") {
        return Backbone::DiffusionVP;
    }
    throw Error("unknown backbone '" + s + "'");
}

// ---------------------------------------------------------------------------
// NoiseSchedule

double NoiseSchedule::grid_time(int k) const {
    if (k >= num_steps) {
        return t_end();
    }
    return static_cast<double>(k) * dt();
}

double NoiseSchedule::sigma(double t) const {
    if (backbone == Backbone::RectifiedFlow) {
        return sigma0;
    }
    return std::sqrt(beta(t));
}

double NoiseSchedule::noise_coeff(double t) const {
    if (backbone == Backbone::RectifiedFlow) {
        return sigma0;
    }
    return eta * std::sqrt(beta(t));
}

double NoiseSchedule::beta(double t) const {
    const double tau = 1.0 - t;
    return beta_min + (beta_max - beta_min) * tau;
}

double NoiseSchedule::alpha(double t) const {
    if (backbone == Backbone::RectifiedFlow) {
        return t;
    }
    const double tau = 1.0 - t;
    const double integral = beta_min * tau + 0.5 * (beta_max - beta_min) * tau * tau;
    return std::exp(-0.5 * integral);
}

double NoiseSchedule::marginal_std(double t) const {
    if (backbone == Backbone::RectifiedFlow) {
        return 1.0 - t;
    }
    const double tau = 1.0 - t;
    const double integral = beta_min * tau + 0.5 * (beta_max - beta_min) * tau * tau;
    return std::sqrt(-std::expm1(-integral));
}

void NoiseSchedule::validate() const {
    if (num_steps <= 0) {
        throw Error("schedule: num_steps must be positive");
    }
    if (!(t_clamp > 0.0 && t_clamp < 1.0)) {
        throw Error("schedule: t_clamp must lie in (0, 1)");
    }
    if (!(sigma0 >= 0.0) || !std::isfinite(sigma0) || !(eta >= 0.0) || !std::isfinite(eta)) {
        throw Error("schedule: stochasticity must be finite and non-negative");
    }
    if (backbone == Backbone::DiffusionVP && !(beta_min > 0.0 && beta_max >= beta_min)) {
        throw Error("schedule: need 0 < beta_min <= beta_max");
    }
}

namespace {

void check_time(const NoiseSchedule& s, double t) {
    if (!std::isfinite(t) || t < 0.0) {
        throw Error("time outside [0, 1]");
    }
    if (s.backbone == Backbone::RectifiedFlow && (t >= 1.0 || t > s.t_clamp)) {
        throw Error("time clamp violated");
    }
    if (t > 1.0) {
        throw Error("time outside [0, 1]");
    }
}

Vec network_output(std::span<const double> x, double t, int context, const PolicyParams& params) {
    return forward(params, x, t, context);
}

}  // namespace

// ---------------------------------------------------------------------------
// Score conversions

Vec score_from_velocity(std::span<const double> x, double t, std::span<const double> v,
                        const NoiseSchedule& schedule) {
    if (t >= 1.0 || t > schedule.t_clamp || t < 0.0) {
        throw Error("time clamp violated");
    }
    Vec s(x.size());
    const double inv = 1.0 / (1.0 - t);
    for (std::size_t i = 0; i < x.size(); ++i) {
        s[i] = -(x[i] - t * v[i]) * inv;
    }
    return s;
}

Vec eps_to_score(std::span<const double> eps_pred, double t, const NoiseSchedule& schedule) {
    const double sd = schedule.marginal_std(t);
    if (!(sd > 0.0)) {
        throw Error("score undefined");
    }
    Vec s(eps_pred.size());
    for (std::size_t i = 0; i < eps_pred.size(); ++i) {
        s[i] = -eps_pred[i] / sd;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Drifts

void sde_drift_from_output(const NoiseSchedule& schedule, std::span<const double> x, double t,
                           std::span<const double> out, std::span<double> drift) {
    check_time(schedule, t);
    const double sig = schedule.sigma(t);
    const double half_var = 0.5 * sig * sig;
    if (schedule.backbone == Backbone::RectifiedFlow) {
        const Vec score = score_from_velocity(x, t, out, schedule);
        for (std::size_t i = 0; i < x.size(); ++i) {
            drift[i] = out[i] - half_var * score[i];
        }
        return;
    }
    const Vec score = eps_to_score(out, t, schedule);
    const double b = schedule.beta(t);
    const double mix = 0.5 * (1.0 + schedule.eta * schedule.eta) * sig * sig;
    for (std::size_t i = 0; i < x.size(); ++i) {
        // Negated native drift: -( -beta x / 2 - mix * score ).
        drift[i] = 0.5 * b * x[i] + mix * score[i];
    }
}

double sde_output_gain(const NoiseSchedule& schedule, double t) {
    check_time(schedule, t);
    const double sig = schedule.sigma(t);
    if (schedule.backbone == Backbone::RectifiedFlow) {
        return 1.0 - 0.5 * sig * sig * t / (1.0 - t);
    }
    const double mix = 0.5 * (1.0 + schedule.eta * schedule.eta) * sig * sig;
    return -mix / schedule.marginal_std(t);
}

void ode_drift_from_output(const NoiseSchedule& schedule, std::span<const double> x, double t,
                           std::span<const double> out, std::span<double> drift) {
    check_time(schedule, t);
    if (schedule.backbone == Backbone::RectifiedFlow) {
        std::copy(out.begin(), out.end(), drift.begin());
        return;
    }
    const Vec score = eps_to_score(out, t, schedule);
    const double b = schedule.beta(t);
    for (std::size_t i = 0; i < x.size(); ++i) {
        drift[i] = 0.5 * b * x[i] + 0.5 * b * score[i];
    }
}

Vec sampler_drift_sde(std::span<const double> x, double t, int context, const PolicyParams& params,
                      const NoiseSchedule& schedule) {
    check_time(schedule, t);
    const Vec out = network_output(x, t, context, params);
    Vec d(x.size());
    sde_drift_from_output(schedule, x, t, out, d);
    return d;
}

Vec sampler_drift_ode(std::span<const double> x, double t, int context, const PolicyParams& params,
                      const NoiseSchedule& schedule) {
    check_time(schedule, t);
    const Vec out = network_output(x, t, context, params);
    Vec d(x.size());
    ode_drift_from_output(schedule, x, t, out, d);
    return d;
}

Vec drift_sde(std::span<const double> x, double t, int context, const PolicyParams& params,
              const NoiseSchedule& schedule) {
    Vec d = sampler_drift_sde(x, t, context, params, schedule);
    if (schedule.backbone == Backbone::DiffusionVP) {
        for (double& v : d) {
            v = -v;
        }
    }
    return d;
}

Vec drift_ode(std::span<const double> x, double t, int context, const PolicyParams& params,
              const NoiseSchedule& schedule) {
    Vec d = sampler_drift_ode(x, t, context, params, schedule);
    if (schedule.backbone == Backbone::DiffusionVP) {
        for (double& v : d) {
            v = -v;
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Steps and groups

double gaussian_logpdf(std::span<const double> action, std::span<const double> mean, double scale) {
    if (!(scale > 0.0)) {
        throw Error("degenerate policy density");
    }
    double ss = 0.0;
    for (std::size_t i = 0; i < action.size(); ++i) {
        const double z = (action[i] - mean[i]) / scale;
        ss += z * z;
    }
    const double d = static_cast<double>(action.size());
    return -0.5 * ss - d * std::log(scale) - 0.5 * d * std::log(2.0 * std::numbers::pi);
}

void step_mean_from_output(const NoiseSchedule& schedule, std::span<const double> x, double t,
                           double dt, std::span<const double> out, std::span<double> mean) {
    sde_drift_from_output(schedule, x, t, out, mean);
    for (double& m : mean) {
        m *= dt;
    }
}

namespace {

TrajectoryStep make_step(const NoiseSchedule& schedule, std::span<const double> x, double t, double dt,
                         std::span<const double> out, RandomStream& rng) {
    TrajectoryStep st;
    st.t = t;
    st.dt = dt;
    st.x.assign(x.begin(), x.end());
    st.drift_mean.resize(x.size());
    step_mean_from_output(schedule, x, t, dt, out, st.drift_mean);
    st.noise_scale = schedule.noise_coeff(t) * std::sqrt(dt);
    st.action.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        st.action[i] = st.drift_mean[i] + st.noise_scale * rng.normal();
    }
    st.logprob_old = st.noise_scale > 0.0 ? gaussian_logpdf(st.action, st.drift_mean, st.noise_scale) : 0.0;
    return st;
}

}  // namespace

TrajectoryStep em_step(std::span<const double> x, double t, double dt, int context,
                       const PolicyParams& params, const NoiseSchedule& schedule, RandomStream& rng) {
    if (!(dt > 0.0)) {
        throw Error("step size must be positive");
    }
    if (!all_finite(x)) {
        throw Error("sampler diverged");
    }
    const Vec out = network_output(x, t, context, params);
    TrajectoryStep st = make_step(schedule, x, t, dt, out, rng);
    if (!all_finite(st.action)) {
        throw Error("sampler diverged");
    }
    return st;
}

std::vector<std::size_t> Group::active_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        if (trajectories[i].active) {
            out.push_back(i);
        }
    }
    return out;
}

std::size_t Group::active_count() const {
    std::size_t n = 0;
    for (const auto& tr : trajectories) {
        n += tr.active ? 1 : 0;
    }
    return n;
}

std::size_t Group::total_steps() const {
    std::size_t n = 0;
    for (const auto& tr : trajectories) {
        n += tr.steps.size();
    }
    return n;
}

Group init_group(int context, int g_count, std::uint64_t group_seed, int latent_dim) {
    if (g_count < 1) {
        throw Error("group needs at least one trajectory");
    }
    Group g;
    g.context = context;
    g.trajectories.reserve(static_cast<std::size_t>(g_count));
    for (int i = 0; i < g_count; ++i) {
        Trajectory tr;
        tr.context = context;
        tr.seed = derive_seed(group_seed, {static_cast<std::uint64_t>(i)});
        tr.rng = RandomStream(tr.seed);
        tr.state.resize(static_cast<std::size_t>(latent_dim));
        tr.rng.fill_normal(tr.state);
        g.trajectories.push_back(std::move(tr));
    }
    return g;
}

std::size_t advance_group(Group& group, int step_index, const PolicyParams& params,
                          const NoiseSchedule& schedule) {
    const std::vector<std::size_t> active = group.active_indices();
    if (active.empty()) {
        return 0;
    }
    const double t = schedule.grid_time(step_index);
    const double dt = schedule.grid_time(step_index + 1) - t;
    const int d = params.spec.latent_dim;
    std::vector<double> feats;
    for (std::size_t idx : active) {
        append_features(params.spec, group.trajectories[idx].state, t, group.context, feats);
    }
    std::vector<double> out(active.size() * static_cast<std::size_t>(d));
    forward_batch(params, feats, static_cast<int>(active.size()), out);
    for (std::size_t j = 0; j < active.size(); ++j) {
        Trajectory& tr = group.trajectories[active[j]];
        std::span<const double> o(out.data() + j * static_cast<std::size_t>(d), static_cast<std::size_t>(d));
        TrajectoryStep st = make_step(schedule, tr.state, t, dt, o, tr.rng);
        for (std::size_t i = 0; i < tr.state.size(); ++i) {
            tr.state[i] += st.action[i];
        }
        if (!all_finite(tr.state)) {
            throw Error("sampler diverged (trajectory " + std::to_string(active[j]) + ")");
        }
        tr.steps.push_back(std::move(st));
    }
    return active.size();
}

void finish_group(Group& group) {
    for (auto& tr : group.trajectories) {
        if (tr.active) {
            tr.terminal_state = tr.state;
        }
    }
}

Group sample_group(int context, int g_count, const PolicyParams& params, const NoiseSchedule& schedule,
                   std::uint64_t group_seed) {
    Group g = init_group(context, g_count, group_seed, params.spec.latent_dim);
    for (int k = 0; k < schedule.num_steps; ++k) {
        advance_group(g, k, params, schedule);
    }
    finish_group(g);
    return g;
}

Vec ode_lookahead(std::span<const double> x, double t, int context, const PolicyParams& params,
                  const NoiseSchedule& schedule) {
    const double remaining = schedule.t_end() - t;
    if (remaining < 0.0) {
        throw Error("lookahead from beyond the terminal time");
    }
    Vec out(x.begin(), x.end());
    if (remaining == 0.0) {
        return out;
    }
    const Vec d = sampler_drift_ode(x, t, context, params, schedule);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += remaining * d[i];
    }
    return out;
}

std::vector<Vec> ode_lookahead_batch(const Group& group, std::span<const std::size_t> indices, double t,
                                     const PolicyParams& params, const NoiseSchedule& schedule) {
    const double remaining = schedule.t_end() - t;
    if (remaining < 0.0) {
        throw Error("lookahead from beyond the terminal time");
    }
    std::vector<Vec> previews;
    previews.reserve(indices.size());
    if (remaining == 0.0) {
        for (std::size_t idx : indices) {
            previews.push_back(group.trajectories[idx].state);
        }
        return previews;
    }
    const int d = params.spec.latent_dim;
    std::vector<double> feats;
    for (std::size_t idx : indices) {
        append_features(params.spec, group.trajectories[idx].state, t, group.context, feats);
    }
    std::vector<double> out(indices.size() * static_cast<std::size_t>(d));
    forward_batch(params, feats, static_cast<int>(indices.size()), out);
    Vec drift(static_cast<std::size_t>(d));
    for (std::size_t j = 0; j < indices.size(); ++j) {
        const Vec& x = group.trajectories[indices[j]].state;
        ode_drift_from_output(schedule, x, t,
                              std::span<const double>(out.data() + j * static_cast<std::size_t>(d),
                                                      static_cast<std::size_t>(d)),
                              drift);
        Vec p = x;
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] += remaining * drift[i];
        }
        previews.push_back(std::move(p));
    }
    return previews;
}

Vec ode_integrate(std::span<const double> x, double t, int context, const PolicyParams& params,
                  const NoiseSchedule& schedule, int substeps) {
    if (substeps < 1) {
        throw Error("ode_integrate needs at least one substep");
    }
    Vec cur(x.begin(), x.end());
    const double h = (schedule.t_end() - t) / static_cast<double>(substeps);
    for (int k = 0; k < substeps; ++k) {
        const double tk = t + h * static_cast<double>(k);
        const Vec d = sampler_drift_ode(cur, tk, context, params, schedule);
        for (std::size_t i = 0; i < cur.size(); ++i) {
            cur[i] += h * d[i];
        }
    }
    return cur;
}

}  // namespace prunegrpo
