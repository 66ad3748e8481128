// SPDX-License-Identifier: Apache-2.0

#include "prunegrpo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "prunegrpo/ovf.hpp"

namespace prunegrpo {

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double r = 0.5 * static_cast<double>(i + j);
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw Error("spearman needs two equal-length samples of size >= 2");
    }
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return sab / std::sqrt(saa * sbb);
}

std::vector<FidelityRow> proxy_fidelity(const PolicyParams& params, const NoiseSchedule& schedule,
                                        const RewardSpec& spec, const Decoder& decoder, int context, int n,
                                        const std::vector<int>& steps, std::uint64_t seed) {
    for (int s : steps) {
        if (s < 0 || s > schedule.num_steps) {
            throw Error("fidelity step outside [0, T]");
        }
    }
    Group g = init_group(context, n, seed, params.spec.latent_dim);
    const std::vector<std::size_t> all = g.active_indices();
    std::vector<std::vector<Vec>> previews(steps.size());
    for (int k = 0; k <= schedule.num_steps; ++k) {
        for (std::size_t c = 0; c < steps.size(); ++c) {
            if (steps[c] == k) {
                previews[c] = ode_lookahead_batch(g, all, schedule.grid_time(k), params, schedule);
            }
        }
        if (k < schedule.num_steps) {
            advance_group(g, k, params, schedule);
        }
    }
    finish_group(g);
    std::vector<double> terminal;
    for (const auto& tr : g.trajectories) {
        terminal.push_back(reward_eval(*tr.terminal_state, context, spec, decoder));
    }
    std::vector<FidelityRow> rows;
    for (std::size_t c = 0; c < steps.size(); ++c) {
        FidelityRow row;
        row.step = steps[c];
        row.t = schedule.grid_time(steps[c]);
        std::vector<double> proxy;
        double err = 0.0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            const Vec& y = previews[c][i];
            proxy.push_back(reward_eval(y, context, spec, decoder));
            double d2 = 0.0;
            for (std::size_t j = 0; j < y.size(); ++j) {
                const double e = y[j] - (*g.trajectories[i].terminal_state)[j];
                d2 += e * e;
            }
            err += std::sqrt(d2);
        }
        row.spearman = spearman(proxy, terminal);
        row.preview_error = err / static_cast<double>(all.size());
        rows.push_back(row);
    }
    return rows;
}

std::vector<ClusteringRow> clustering_profile(const PolicyParams& params, const NoiseSchedule& schedule,
                                              const RewardSpec& spec, const Decoder& decoder, int context,
                                              int groups, int g, const std::vector<double>& deltas,
                                              std::uint64_t seed) {
    if (groups < 1 || g < 2) {
        throw Error("clustering profile needs groups >= 1 and g >= 2");
    }
    std::vector<ClusteringRow> rows(deltas.size());
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        rows[i].delta = deltas[i];
    }
    for (int b = 0; b < groups; ++b) {
        const Group grp = sample_group(context, g, params, schedule, derive_seed(seed, {static_cast<std::uint64_t>(b)}));
        std::vector<double> r;
        for (const auto& tr : grp.trajectories) {
            r.push_back(reward_eval(*tr.terminal_state, context, spec, decoder));
        }
        const ovf::RewardList list(r);
        const double sd = ovf::group_stats(list).std;
        for (auto& row : rows) {
            row.clustered_fraction += ovf::clustered_fraction(list, row.delta);
            row.reward_std += sd;
        }
    }
    for (auto& row : rows) {
        row.clustered_fraction /= groups;
        row.reward_std /= groups;
    }
    return rows;
}

void write_fidelity_csv(const std::string& path, const std::vector<FidelityRow>& rows) {
    std::ofstream f(path);
    if (!f) {
        throw Error("cannot write fidelity table: " + path);
    }
    f << "step,t,spearman,preview_error\n";
    for (const auto& r : rows) {
        f << r.step << ',' << format_double(r.t) << ',' << format_double(r.spearman) << ','
          << format_double(r.preview_error) << '\n';
    }
}

void write_clustering_csv(const std::string& path, const std::vector<ClusteringRow>& rows) {
    std::ofstream f(path);
    if (!f) {
        throw Error("cannot write clustering table: " + path);
    }
    f << "delta,clustered_fraction,reward_std\n";
    for (const auto& r : rows) {
        f << format_double(r.delta) << ',' << format_double(r.clustered_fraction) << ','
          << format_double(r.reward_std) << '\n';
    }
}

}  // namespace prunegrpo
