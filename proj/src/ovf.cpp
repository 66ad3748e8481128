// SPDX-License-Identifier: Apache-2.0

#include "prunegrpo/ovf.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace prunegrpo::ovf {

namespace {

constexpr std::size_t kOracleLimit = 20;

void check_k(std::size_t g, std::size_t k) {
    if (k == 0) {
        throw Error("empty selection");
    }
    if (k > g) {
        throw Error("subset larger than group");
    }
}

SelectionResult finish(std::span<const double> values, std::vector<std::size_t> kept) {
    std::sort(kept.begin(), kept.end());
    SelectionResult out;
    out.variance = subset_variance(values, kept);
    out.kept = std::move(kept);
    return out;
}

}  // namespace

RewardList::RewardList(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) {
        throw Error("empty group");
    }
    sources_.resize(values_.size());
    std::iota(sources_.begin(), sources_.end(), std::size_t{0});
}

RewardList::RewardList(std::vector<double> values, std::vector<std::size_t> source_indices)
    : values_(std::move(values)), sources_(std::move(source_indices)) {
    if (values_.empty()) {
        throw Error("empty group");
    }
    if (values_.size() != sources_.size()) {
        throw Error("reward list: values and source indices differ in length");
    }
    std::unordered_set<std::size_t> seen(sources_.begin(), sources_.end());
    if (seen.size() != sources_.size()) {
        throw Error("reward list: duplicate source index");
    }
}

GroupStats group_stats(std::span<const double> values) {
    if (values.empty()) {
        throw Error("empty group");
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*lo == *hi) {
        return {*lo, 0.0};
    }
    const double n = static_cast<double>(values.size());
    double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    // One correction pass removes most of the rounding left by the naive sum.
    double resid = 0.0;
    for (double v : values) {
        resid += v - mean;
    }
    mean += resid / n;
    double ss = 0.0;
    for (double v : values) {
        const double d = v - mean;
        ss += d * d;
    }
    return {mean, std::sqrt(ss / n)};
}

GroupStats group_stats(const RewardList& rewards) { return group_stats(rewards.values()); }

double subset_variance(std::span<const double> values, std::span<const std::size_t> subset) {
    if (subset.empty()) {
        throw Error("empty selection");
    }
    std::vector<double> picked;
    picked.reserve(subset.size());
    for (std::size_t i : subset) {
        picked.push_back(values[i]);
    }
    const GroupStats s = group_stats(picked);
    return s.std * s.std;
}

SelectionResult ovf_select(const RewardList& rewards, std::size_t k) {
    const std::size_t g = rewards.size();
    check_k(g, k);
    const auto& vals = rewards.values();
    const auto& src = rewards.source_indices();

    std::vector<std::size_t> order(g);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (vals[a] != vals[b]) {
            return vals[a] < vals[b];
        }
        return src[a] < src[b];
    });

    // Centre before accumulating so the prefix sums of squares do not cancel.
    const double centre = group_stats(vals).mean;
    std::vector<double> s1(g + 1, 0.0);
    std::vector<double> s2(g + 1, 0.0);
    for (std::size_t i = 0; i < g; ++i) {
        const double c = vals[order[i]] - centre;
        s1[i + 1] = s1[i] + c;
        s2[i + 1] = s2[i] + c * c;
    }

    const double kd = static_cast<double>(k);
    std::size_t best_m = 0;
    double best = -1.0;
    for (std::size_t m = 0; m <= k; ++m) {
        const std::size_t tail = k - m;
        const double sum = s1[m] + (s1[g] - s1[g - tail]);
        const double sq = s2[m] + (s2[g] - s2[g - tail]);
        const double mean = sum / kd;
        const double var = std::max(0.0, sq / kd - mean * mean);
        const double tol = 64.0 * DBL_EPSILON * std::max(best, 0.0);
        if (var > best + tol) {
            best = var;
            best_m = m;
        }
    }

    std::vector<std::size_t> kept(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(best_m));
    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(best_m), order.end());
    std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
        if (vals[a] != vals[b]) {
            return vals[a] > vals[b];
        }
        return src[a] < src[b];
    });
    kept.insert(kept.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(k - best_m));
    return finish(vals, std::move(kept));
}

SelectionResult ovf_brute_force(const RewardList& rewards, std::size_t k) {
    const std::size_t g = rewards.size();
    if (g > kOracleLimit) {
        throw Error("instance too large for oracle");
    }
    check_k(g, k);
    const auto& vals = rewards.values();

    std::vector<std::size_t> combo(k);
    std::iota(combo.begin(), combo.end(), std::size_t{0});
    std::vector<std::size_t> best_combo = combo;
    double best = -1.0;
    while (true) {
        const double var = subset_variance(vals, combo);
        if (var > best) {
            best = var;
            best_combo = combo;
        }
        // Next combination in lexicographic order.
        std::size_t i = k;
        while (i > 0 && combo[i - 1] == g - k + (i - 1)) {
            --i;
        }
        if (i == 0) {
            break;
        }
        ++combo[i - 1];
        for (std::size_t j = i; j < k; ++j) {
            combo[j] = combo[j - 1] + 1;
        }
    }
    return finish(vals, std::move(best_combo));
}

SelectionResult uniform_subsample(const RewardList& rewards, std::size_t k, RandomStream& rng) {
    const std::size_t g = rewards.size();
    check_k(g, k);
    std::vector<std::size_t> pool(g);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = rng.uniform_index(i, g - 1);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return finish(rewards.values(), std::move(pool));
}

std::vector<std::size_t> clustered_indices(const RewardList& rewards, double delta) {
    if (!(delta > 0.0)) {
        throw Error("clustering width must be positive");
    }
    const GroupStats s = group_stats(rewards);
    std::vector<std::size_t> out;
    const auto& vals = rewards.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double dev = std::abs(vals[i] - s.mean);
        // dev / std <= delta is the same region as dev <= delta * std, but
        // rounding then guarantees dev / (std + eps) <= delta for any eps > 0.
        const bool inside = s.std == 0.0 ? dev == 0.0 : dev / s.std <= delta;
        if (inside) {
            out.push_back(i);
        }
    }
    return out;
}

double clustered_fraction(const RewardList& rewards, double delta) {
    return static_cast<double>(clustered_indices(rewards, delta).size()) /
           static_cast<double>(rewards.size());
}

}  // namespace prunegrpo::ovf
