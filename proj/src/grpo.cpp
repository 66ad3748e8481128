// SPDX-License-Identifier: Apache-2.0

#include "prunegrpo/grpo.hpp"

#include <algorithm>
#include <cmath>

#include "prunegrpo/ovf.hpp"

namespace prunegrpo {

AdvantageSet normalized_advantages(std::span<const double> rewards, double adv_epsilon) {
    if (!(adv_epsilon >= 0.0)) {
        throw Error("advantage epsilon must be non-negative");
    }
    const ovf::GroupStats s = ovf::group_stats(rewards);
    AdvantageSet a;
    a.rewards.assign(rewards.begin(), rewards.end());
    a.mean = s.mean;
    a.std = s.std;
    a.epsilon = adv_epsilon;
    a.advantages.reserve(rewards.size());
    const double denom = s.std + adv_epsilon;
    for (double r : rewards) {
        const double dev = r - s.mean;
        a.advantages.push_back(dev == 0.0 ? 0.0 : dev / denom);
    }
    return a;
}

void LossConfig::validate() const {
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
        throw Error("loss config: clip_eps must lie in (0, 1)");
    }
    if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) {
        throw Error("loss config: kl_beta must be finite and non-negative");
    }
    if (!(adv_epsilon > 0.0) || !std::isfinite(adv_epsilon)) {
        throw Error("loss config: adv_epsilon must be positive");
    }
}

double step_logprob(const TrajectoryStep& step, int context, const PolicyParams& params,
                    const NoiseSchedule& schedule) {
    if (!(step.noise_scale > 0.0)) {
        throw Error("degenerate policy density");
    }
    const Vec out = forward(params, step.x, step.t, context);
    Vec mean(step.x.size());
    step_mean_from_output(schedule, step.x, step.t, step.dt, out, mean);
    return gaussian_logpdf(step.action, mean, step.noise_scale);
}

double importance_ratio(double logp_new, double logp_old) {
    if (!std::isfinite(logp_new) || !std::isfinite(logp_old)) {
        throw Error("importance ratio of non-finite log-probabilities");
    }
    return std::exp(std::clamp(logp_new - logp_old, -30.0, 30.0));
}

double clipped_surrogate(double ratio, double advantage, double clip_eps) {
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(ratio * advantage, clipped * advantage);
}

namespace {

// Batched means b(x, t) dt for a list of steps.
void batch_means(const PolicyParams& params, std::span<const TrajectoryStep* const> steps, int context,
                 const NoiseSchedule& schedule, std::vector<double>& means, ForwardCache* cache) {
    const int d = params.spec.latent_dim;
    std::vector<double> feats;
    for (const TrajectoryStep* st : steps) {
        append_features(params.spec, st->x, st->t, context, feats);
    }
    std::vector<double> out(steps.size() * static_cast<std::size_t>(d));
    forward_batch(params, feats, static_cast<int>(steps.size()), out, cache);
    means.assign(out.size(), 0.0);
    for (std::size_t j = 0; j < steps.size(); ++j) {
        const TrajectoryStep& st = *steps[j];
        step_mean_from_output(schedule, st.x, st.t, st.dt,
                              std::span<const double>(out.data() + j * d, static_cast<std::size_t>(d)),
                              std::span<double>(means.data() + j * d, static_cast<std::size_t>(d)));
    }
}

double kl_from_means(std::span<const double> a, std::span<const double> b, double scale) {
    if (!(scale > 0.0)) {
        throw Error("degenerate policy density");
    }
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double dlt = a[i] - b[i];
        ss += dlt * dlt;
    }
    return ss / (2.0 * scale * scale);
}

}  // namespace

double kl_penalty(const PolicyParams& params, const PolicyParams& ref_params,
                  std::span<const TrajectoryStep> steps, int context, const NoiseSchedule& schedule) {
    if (steps.empty()) {
        return 0.0;
    }
    std::vector<const TrajectoryStep*> ptrs;
    for (const auto& s : steps) {
        ptrs.push_back(&s);
    }
    std::vector<double> m_new;
    std::vector<double> m_ref;
    batch_means(params, ptrs, context, schedule, m_new, nullptr);
    batch_means(ref_params, ptrs, context, schedule, m_ref, nullptr);
    const std::size_t d = static_cast<std::size_t>(params.spec.latent_dim);
    double total = 0.0;
    for (std::size_t j = 0; j < ptrs.size(); ++j) {
        total += kl_from_means(std::span<const double>(m_new.data() + j * d, d),
                               std::span<const double>(m_ref.data() + j * d, d), ptrs[j]->noise_scale);
    }
    return total / static_cast<double>(ptrs.size());
}

LossResult pro_grpo_loss_and_grad(const Group& group, const PolicyParams& params,
                                  const PolicyParams& ref_params, const LossConfig& config,
                                  const NoiseSchedule& schedule) {
    config.validate();
    LossResult res;
    res.grads = zeros_like(params);
    std::vector<double> rewards;
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
        const Trajectory& tr = group.trajectories[i];
        if (!tr.active) {
            continue;
        }
        if (!tr.final_reward || tr.steps.size() != static_cast<std::size_t>(schedule.num_steps)) {
            throw Error("survivor " + std::to_string(i) + " is incomplete");
        }
        res.survivors.push_back(i);
        rewards.push_back(*tr.final_reward);
    }
    if (res.survivors.size() < 2) {
        throw Error("degenerate group");
    }
    res.advantages = normalized_advantages(rewards, config.adv_epsilon);
    res.zero_signal = res.advantages.std == 0.0;

    std::vector<const TrajectoryStep*> steps;
    std::vector<double> step_adv;
    for (std::size_t k = 0; k < res.survivors.size(); ++k) {
        for (const auto& st : group.trajectories[res.survivors[k]].steps) {
            if (!(st.noise_scale > 0.0)) {
                throw Error("degenerate policy density");
            }
            steps.push_back(&st);
            step_adv.push_back(res.advantages.advantages[k]);
        }
    }
    const std::size_t n = steps.size();
    const std::size_t d = static_cast<std::size_t>(params.spec.latent_dim);

    ForwardCache cache;
    std::vector<double> m_new;
    std::vector<double> m_ref;
    batch_means(params, steps, group.context, schedule, m_new, &cache);
    const bool use_kl = config.kl_beta > 0.0;
    if (use_kl) {
        batch_means(ref_params, steps, group.context, schedule, m_ref, nullptr);
    }

    // Each step carries weight 1 / (K T) in the surrogate and 1 / N in the KL mean.
    const double w = 1.0 / static_cast<double>(n);
    std::vector<double> upstream(n * d, 0.0);
    double sur_total = 0.0;
    double kl_total = 0.0;
    res.ratios.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        const TrajectoryStep& st = *steps[j];
        std::span<const double> mean(m_new.data() + j * d, d);
        const double logp = gaussian_logpdf(st.action, mean, st.noise_scale);
        const double r = importance_ratio(logp, st.logprob_old);
        res.ratios.push_back(r);
        const double a = step_adv[j];
        const double sur = clipped_surrogate(r, a, config.clip_eps);
        sur_total += sur;
        // d(surrogate)/d(logp): the unclipped branch is active iff r A <= clip(r) A.
        const double clipped = std::clamp(r, 1.0 - config.clip_eps, 1.0 + config.clip_eps);
        const double exponent = logp - st.logprob_old;
        const bool saturated = exponent < -30.0 || exponent > 30.0;
        const double dsur_dlogp = (r * a <= clipped * a && !saturated) ? a * r : 0.0;
        const double gain = sde_output_gain(schedule, st.t) * st.dt;
        const double inv_var = 1.0 / (st.noise_scale * st.noise_scale);
        for (std::size_t i = 0; i < d; ++i) {
            // d logp / d mean_i = (a_i - mean_i) / scale^2
            double g = -w * dsur_dlogp * (st.action[i] - mean[i]) * inv_var;
            if (use_kl) {
                g += config.kl_beta * w * (mean[i] - m_ref[j * d + i]) * inv_var;
            }
            upstream[j * d + i] = g * gain;
        }
        if (use_kl) {
            kl_total += kl_from_means(mean, std::span<const double>(m_ref.data() + j * d, d), st.noise_scale);
        }
    }
    res.surrogate = sur_total * w;
    res.kl = kl_total * w;
    res.loss = -res.surrogate + config.kl_beta * res.kl;
    backward_batch(params, cache, upstream, res.grads);
    return res;
}

}  // namespace prunegrpo
