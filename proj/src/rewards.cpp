// SPDX-License-Identifier: Apache-2.0

#include "prunegrpo/rewards.hpp"

#include <cmath>

namespace prunegrpo {

std::string to_string(RewardKind k) {
    switch (k) {
        case RewardKind::GaussianBump:
            return "gaussian-bump";
        case RewardKind::RingDistance:
            return "ring-distance";
        case RewardKind::HalfplaneMargin:
            return "halfplane-margin";
        case RewardKind::Composite:
            return "composite";
    }
    return "unknown";
}

RewardKind parse_reward_kind(const std::string& s) {
    if (s == "gaussian-bump") {
        return RewardKind::GaussianBump;
    }
    if (s == "ring-distance") {
        return RewardKind::RingDistance;
    }
    if (s == "halfplane-margin") {
        return RewardKind::HalfplaneMargin;
    }
    if (s == "composite") {
        return RewardKind::Composite;
    }
    throw Error("unknown reward kind '" + s + "'");
}

const Vec& RewardSpec::target_for(int context) const {
    if (targets.empty()) {
        throw Error("reward spec has no target");
    }
    if (!context_conditioned) {
        return targets.front();
    }
    if (context < 0 || static_cast<std::size_t>(context) >= targets.size()) {
        throw Error("reward spec has no target for prompt " + std::to_string(context));
    }
    return targets[static_cast<std::size_t>(context)];
}

void RewardSpec::validate() const {
    if (kind == RewardKind::Composite) {
        if (components.empty() || components.size() != weights.size()) {
            throw Error("composite reward: weight mismatch");
        }
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) {
                throw Error("composite reward: weights must be non-negative");
            }
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw Error("composite reward: weights must sum to 1");
        }
        for (const auto& c : components) {
            c.validate();
        }
        return;
    }
    if (kind == RewardKind::GaussianBump && !(temperature > 0.0)) {
        throw Error("gaussian-bump reward: temperature must be positive");
    }
    if (kind != RewardKind::RingDistance && targets.empty()) {
        throw Error("reward spec has no target");
    }
}

Vec Decoder::decode(std::span<const double> x) const {
    if (kind == DecoderKind::Identity) {
        return Vec(x.begin(), x.end());
    }
    const std::size_t d = x.size();
    if (out_dim <= 0 || matrix.size() != static_cast<std::size_t>(out_dim) * d) {
        throw Error("fixed-linear decoder: matrix shape does not match latent");
    }
    Vec y(static_cast<std::size_t>(out_dim), 0.0);
    for (int r = 0; r < out_dim; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            s += matrix[static_cast<std::size_t>(r) * d + c] * x[c];
        }
        y[static_cast<std::size_t>(r)] = s;
    }
    return y;
}

namespace {

double evaluate_decoded(std::span<const double> y, int context, const RewardSpec& spec,
                        const Decoder& decoder, std::span<const double> latent) {
    switch (spec.kind) {
        case RewardKind::GaussianBump: {
            const Vec& m = spec.target_for(context);
            if (m.size() != y.size()) {
                throw Error("reward target dimension does not match decoded sample");
            }
            double ss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                const double dlt = y[i] - m[i];
                ss += dlt * dlt;
            }
            return std::exp(-ss / (2.0 * spec.temperature * spec.temperature));
        }
        case RewardKind::RingDistance:
            return -std::abs(std::sqrt(squared_norm(y)) - spec.ring_radius);
        case RewardKind::HalfplaneMargin: {
            const Vec& w = spec.target_for(context);
            if (w.size() != y.size()) {
                throw Error("halfplane normal dimension does not match decoded sample");
            }
            return std::tanh(dot(w, y));
        }
        case RewardKind::Composite:
            return composite_reward(latent, context, spec.components, spec.weights, decoder);
    }
    throw Error("unknown reward kind");
}

}  // namespace

double reward_eval(std::span<const double> x, int context, const RewardSpec& spec, const Decoder& decoder) {
    if (!all_finite(x)) {
        throw Error("reward input is not finite");
    }
    if (spec.kind == RewardKind::Composite) {
        return composite_reward(x, context, spec.components, spec.weights, decoder);
    }
    const Vec y = decoder.decode(x);
    return evaluate_decoded(y, context, spec, decoder, x);
}

double composite_reward(std::span<const double> x, int context, const std::vector<RewardSpec>& specs,
                        const std::vector<double>& weights, const Decoder& decoder) {
    if (specs.empty() || specs.size() != weights.size()) {
        throw Error("composite reward: weight mismatch");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < specs.size(); ++j) {
        total += weights[j] * reward_eval(x, context, specs[j], decoder);
    }
    return total;
}

double proxy_reward(std::span<const double> x, double t, int context, const PolicyParams& params,
                    const NoiseSchedule& schedule, const RewardSpec& spec, const Decoder& decoder) {
    const Vec preview = ode_lookahead(x, t, context, params, schedule);
    return reward_eval(preview, context, spec, decoder);
}

}  // namespace prunegrpo
