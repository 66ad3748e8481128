// SPDX-License-Identifier: Apache-2.0

#include "prunegrpo/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "prunegrpo/ovf.hpp"

namespace prunegrpo {

using namespace ovf;

std::string to_string(RunMode m) {
    switch (m) {
        case RunMode::ProGrpo: return "pro-grpo";
        case RunMode::Baseline: return "baseline";
        case RunMode::PostHocOvf: return "post-hoc-ovf";
        case RunMode::UniformSubsample: return "uniform-subsample";
    }
    return "?";
}

RunMode parse_run_mode(const std::string& s) {
    if (s == "pro-grpo") return RunMode::ProGrpo;
    if (s == "baseline") return RunMode::Baseline;
    if (s == "post-hoc-ovf") return RunMode::PostHocOvf;
    if (s == "uniform-subsample") return RunMode::UniformSubsample;
    throw Error("unknown mode '" + s + "'");
}

int RunConfig::sampled_group_size() const {
    return mode == RunMode::ProGrpo ? prune.g_max : group_size;
}

void RunConfig::validate() const {
    schedule.validate();
    reward.validate();
    loss.validate();
    costs.validate();
    if (mode == RunMode::ProGrpo) {
        prune.validate(schedule.num_steps);
    } else if (group_size < 2) {
        throw Error("run config: group_size must be at least 2");
    }
    if (mode == RunMode::PostHocOvf || mode == RunMode::UniformSubsample) {
        if (trainees < 2 || trainees > group_size) {
            throw Error("run config: trainees must lie in [2, group_size]");
        }
    }
    if (iterations < 0 || groups_per_iteration < 1 || inner_updates < 1) {
        throw Error("run config: iterations, groups_per_iteration and inner_updates out of range");
    }
    if (prompts.empty()) {
        throw Error("run config: no prompts");
    }
    for (int p : prompts) {
        if (p < 0) {
            throw Error("run config: prompt ids must be non-negative");
        }
    }
    if (!(adam.learning_rate > 0.0) || !std::isfinite(adam.learning_rate)) {
        throw Error("run config: learning rate must be positive");
    }
    if (!(delta > 0.0) || !std::isfinite(delta)) {
        throw Error("run config: delta must be positive");
    }
    if (eval.samples < 0) {
        throw Error("run config: eval samples must be non-negative");
    }
}

std::vector<std::size_t> apply_prune_checkpoint(Group& group, int survivor_count, int step,
                                                const PolicyParams& params, const NoiseSchedule& schedule,
                                                const RewardSpec& spec, const Decoder& decoder,
                                                FlopsLedger& ledger) {
    const std::vector<std::size_t> active = group.active_indices();
    if (survivor_count < 1 || active.size() <= static_cast<std::size_t>(survivor_count)) {
        throw Error("nothing to prune");
    }
    const double t = schedule.grid_time(step);
    const std::vector<Vec> previews = ode_lookahead_batch(group, active, t, params, schedule);
    std::vector<double> proxy;
    proxy.reserve(active.size());
    for (const Vec& y : previews) {
        proxy.push_back(reward_eval(y, group.context, spec, decoder));
    }
    ledger.charge_checkpoint(active.size());

    const SelectionResult sel = ovf_select(RewardList(proxy), static_cast<std::size_t>(survivor_count));
    std::vector<bool> keep(active.size(), false);
    std::vector<std::size_t> survivors;
    for (std::size_t pos : sel.kept) {
        keep[pos] = true;
    }
    for (std::size_t j = 0; j < active.size(); ++j) {
        Trajectory& tr = group.trajectories[active[j]];
        if (keep[j]) {
            survivors.push_back(active[j]);
        } else {
            tr.active = false;
            tr.pruned_at = step;
        }
    }
    group.proxy_rewards.push_back(std::move(proxy));
    group.survivor_history.push_back({step, survivors});
    return survivors;
}

namespace {

struct GroupOutcome {
    Group group;
    std::vector<double> completed_rewards;
    std::vector<double> trainee_rewards;
};

// Sample one group under `params`, pruning per the config, then fix the trainees.
GroupOutcome run_group(const RunConfig& cfg, const PolicyParams& params, int context, std::uint64_t group_seed,
                       std::uint64_t filter_seed, FlopsLedger& ledger) {
    const NoiseSchedule& sch = cfg.schedule;
    GroupOutcome out;
    Group& g = out.group;
    g = init_group(context, cfg.sampled_group_size(), group_seed, params.spec.latent_dim);
    std::size_t next_cp = 0;
    const bool pruning = cfg.mode == RunMode::ProGrpo;
    for (int k = 0; k < sch.num_steps; ++k) {
        if (pruning && next_cp < cfg.prune.checkpoints.size() && cfg.prune.checkpoints[next_cp].step == k) {
            apply_prune_checkpoint(g, cfg.prune.checkpoints[next_cp].survivor_count, k, params, sch, cfg.reward,
                                   cfg.decoder, ledger);
            ++next_cp;
        }
        ledger.charge_sampling(advance_group(g, k, params, sch));
    }
    finish_group(g);
    std::vector<std::size_t> completed = g.active_indices();
    for (std::size_t idx : completed) {
        Trajectory& tr = g.trajectories[idx];
        tr.final_reward = reward_eval(*tr.terminal_state, context, cfg.reward, cfg.decoder);
        out.completed_rewards.push_back(*tr.final_reward);
    }
    ledger.charge_terminal(completed.size());

    if (cfg.mode == RunMode::PostHocOvf || cfg.mode == RunMode::UniformSubsample) {
        const RewardList list(out.completed_rewards);
        const auto k = static_cast<std::size_t>(cfg.trainees);
        SelectionResult sel;
        if (cfg.mode == RunMode::PostHocOvf) {
            sel = ovf_select(list, k);
        } else {
            RandomStream rng(filter_seed);
            sel = uniform_subsample(list, k, rng);
        }
        std::vector<bool> keep(completed.size(), false);
        for (std::size_t pos : sel.kept) {
            keep[pos] = true;
        }
        std::vector<std::size_t> trainees;
        for (std::size_t j = 0; j < completed.size(); ++j) {
            if (keep[j]) {
                trainees.push_back(completed[j]);
            } else {
                g.trajectories[completed[j]].active = false;
            }
        }
        g.survivor_history.push_back({sch.num_steps, trainees});
    }
    for (std::size_t idx : g.active_indices()) {
        out.trainee_rewards.push_back(*g.trajectories[idx].final_reward);
    }
    return out;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

RunResult run_experiment(const RunConfig& cfg, const PolicyParams& initial, const RunHooks& hooks) {
    cfg.validate();
    initial.validate();
    const int num_contexts = initial.spec.num_contexts;
    for (int p : cfg.prompts) {
        if (p >= num_contexts) {
            throw Error("prompt " + std::to_string(p) + " outside the policy's context range");
        }
    }
    RunResult res;
    res.params = initial;
    res.ledger = cfg.costs;
    res.ledger.noise_pred_sampling = res.ledger.noise_pred_lookahead = 0;
    res.ledger.decode_calls = res.ledger.reward_calls = res.ledger.train_steps = 0;
    const PolicyParams& ref = initial;
    AdamState adam = make_adam(res.params, cfg.adam);
    const auto start = std::chrono::steady_clock::now();
    const auto n_prompts = cfg.prompts.size();

    for (int it = 0; it < cfg.iterations; ++it) {
        MetricsRow row;
        row.iteration = it;
        std::vector<GroupOutcome> groups;
        groups.reserve(static_cast<std::size_t>(cfg.groups_per_iteration));
        double reward_sum = 0.0;
        std::size_t reward_n = 0;
        for (int slot = 0; slot < cfg.groups_per_iteration; ++slot) {
            const auto flat = static_cast<std::size_t>(it) * static_cast<std::size_t>(cfg.groups_per_iteration) +
                              static_cast<std::size_t>(slot);
            const int context = cfg.prompts[flat % n_prompts];
            const auto uit = static_cast<std::uint64_t>(it);
            const auto uslot = static_cast<std::uint64_t>(slot);
            groups.push_back(run_group(cfg, res.params, context, derive_seed(cfg.seed, {uit, uslot}),
                                       derive_seed(cfg.seed, {uit, uslot, 0x5u}), res.ledger));
            const GroupOutcome& go = groups.back();
            for (double r : go.completed_rewards) {
                reward_sum += r;
                ++reward_n;
            }
            const RewardList trainees(go.trainee_rewards);
            const GroupStats st = group_stats(trainees);
            row.reward_std += st.std;
            row.survivor_variance += st.std * st.std;
            row.clustered_frac += clustered_fraction(trainees, cfg.delta);
            if (hooks.on_group) {
                hooks.on_group(it, slot, go.group);
            }
        }
        const double inv_groups = 1.0 / static_cast<double>(groups.size());
        row.mean_reward = reward_n > 0 ? reward_sum / static_cast<double>(reward_n) : 0.0;
        row.reward_std *= inv_groups;
        row.survivor_variance *= inv_groups;
        row.clustered_frac *= inv_groups;

        std::vector<const GroupOutcome*> usable;
        for (const auto& go : groups) {
            if (go.trainee_rewards.size() >= 2 && group_stats(go.trainee_rewards).std > 0.0) {
                usable.push_back(&go);
            }
        }
        if (usable.empty()) {
            row.notice = "degenerate survivor group; update skipped";
        } else {
            const double inv_usable = 1.0 / static_cast<double>(usable.size());
            for (int epoch = 0; epoch < cfg.inner_updates; ++epoch) {
                Gradients grads = zeros_like(res.params);
                double loss = 0.0;
                double kl = 0.0;
                for (const GroupOutcome* go : usable) {
                    LossResult lr = pro_grpo_loss_and_grad(go->group, res.params, ref, cfg.loss, cfg.schedule);
                    grads.add_scaled(lr.grads, inv_usable);
                    loss += lr.loss * inv_usable;
                    kl += lr.kl * inv_usable;
                    res.ledger.charge_training(go->group.active_count() *
                                               static_cast<std::size_t>(cfg.schedule.num_steps));
                }
                if (epoch == 0) {
                    row.loss = loss;
                    row.kl = kl;
                }
                adam_update(res.params, grads, adam);
            }
        }
        row.cum_tflops = res.ledger.total_tflops();
        row.wall_ms = cfg.record_wall_time ? elapsed_ms(start) : 0.0;
        res.rows.push_back(std::move(row));
        if (hooks.on_iteration) {
            hooks.on_iteration(it, res.params);
        }
    }
    if (cfg.eval.samples > 0) {
        res.eval_mean_reward = evaluate_mean_reward(res.params, cfg.schedule, cfg.reward, cfg.decoder, cfg.prompts,
                                                    cfg.eval.samples, cfg.eval.seed);
    }
    return res;
}

RunResult run_pro_grpo(const RunConfig& config, const PolicyParams& initial, const RunHooks& hooks) {
    if (config.mode != RunMode::ProGrpo) {
        throw Error("run_pro_grpo needs mode pro-grpo");
    }
    return run_experiment(config, initial, hooks);
}

RunResult run_baseline_grpo(const RunConfig& config, const PolicyParams& initial, const RunHooks& hooks) {
    if (config.mode != RunMode::Baseline) {
        throw Error("run_baseline_grpo needs mode baseline");
    }
    return run_experiment(config, initial, hooks);
}

RunResult run_post_hoc_ovf(const RunConfig& config, const PolicyParams& initial, const RunHooks& hooks) {
    if (config.mode != RunMode::PostHocOvf && config.mode != RunMode::UniformSubsample) {
        throw Error("run_post_hoc_ovf needs mode post-hoc-ovf or uniform-subsample");
    }
    return run_experiment(config, initial, hooks);
}

FlopsBreakdown predicted_run_flops(const RunConfig& cfg) {
    const int T = cfg.schedule.num_steps;
    const double m = cfg.costs.train_multiplier;
    FlopsBreakdown per_group;
    switch (cfg.mode) {
        case RunMode::ProGrpo:
            per_group = flops_total(cfg.prune, T, cfg.costs, m, cfg.inner_updates);
            break;
        case RunMode::Baseline:
            per_group = flops_total(PruneSchedule::fixed(cfg.group_size), T, cfg.costs, m, cfg.inner_updates);
            break;
        case RunMode::PostHocOvf:
        case RunMode::UniformSubsample:
            per_group = flops_total_post_hoc(cfg.group_size, cfg.trainees, T, cfg.costs, m, cfg.inner_updates);
            break;
    }
    const auto groups = static_cast<std::uint64_t>(cfg.iterations) * static_cast<std::uint64_t>(cfg.groups_per_iteration);
    const double gd = static_cast<double>(groups);
    FlopsBreakdown b = per_group;
    b.sampling *= gd;
    b.checkpoint *= gd;
    b.terminal *= gd;
    b.training *= gd;
    b.total *= gd;
    b.noise_pred_sampling *= groups;
    b.noise_pred_lookahead *= groups;
    b.decode_calls *= groups;
    b.reward_calls *= groups;
    b.train_steps *= groups;
    return b;
}

double evaluate_mean_reward(const PolicyParams& params, const NoiseSchedule& schedule, const RewardSpec& spec,
                            const Decoder& decoder, const std::vector<int>& prompts, int n, std::uint64_t seed) {
    if (n < 1 || prompts.empty()) {
        throw Error("evaluation needs samples and prompts");
    }
    constexpr int chunk = 256;
    double total = 0.0;
    int done = 0;
    for (std::uint64_t c = 0; done < n; ++c) {
        const int context = prompts[static_cast<std::size_t>(c) % prompts.size()];
        const int g = std::min(chunk, n - done);
        const Group grp = sample_group(context, g, params, schedule, derive_seed(seed, {c}));
        for (const auto& tr : grp.trajectories) {
            total += reward_eval(*tr.terminal_state, context, spec, decoder);
        }
        done += g;
    }
    return total / static_cast<double>(n);
}

std::string metrics_header() {
    return "iteration,mean_reward,reward_std,clustered_frac,survivor_variance,loss,kl,cum_tflops,wall_ms";
}

void emit_metrics(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream f(path);
    if (!f) {
        throw Error("cannot write metrics: " + path);
    }
    f << metrics_header() << '\n';
    for (const auto& r : rows) {
        f << r.iteration << ',' << format_double(r.mean_reward) << ',' << format_double(r.reward_std) << ','
          << format_double(r.clustered_frac) << ',' << format_double(r.survivor_variance) << ','
          << format_double(r.loss) << ',' << format_double(r.kl) << ',' << format_double(r.cum_tflops) << ','
          << format_double(r.wall_ms) << '\n';
    }
    f.flush();
    if (!f) {
        throw Error("failed writing metrics: " + path);
    }
}

std::vector<MetricsRow> parse_metrics(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw Error("cannot read metrics: " + path);
    }
    std::string line;
    if (!std::getline(f, line) || line != metrics_header()) {
        throw Error("metrics header mismatch in " + path);
    }
    std::vector<MetricsRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() != 9) {
            throw Error("malformed metrics row in " + path + ": " + line);
        }
        MetricsRow r;
        r.iteration = static_cast<int>(parse_double(cells[0]));
        r.mean_reward = parse_double(cells[1]);
        r.reward_std = parse_double(cells[2]);
        r.clustered_frac = parse_double(cells[3]);
        r.survivor_variance = parse_double(cells[4]);
        r.loss = parse_double(cells[5]);
        r.kl = parse_double(cells[6]);
        r.cum_tflops = parse_double(cells[7]);
        r.wall_ms = parse_double(cells[8]);
        rows.push_back(r);
    }
    return rows;
}

std::string group_ndjson(int iteration, int slot, const Group& group) {
    using nlohmann::json;
    json j;
    j["iteration"] = iteration;
    j["slot"] = slot;
    j["context"] = group.context;
    json trs = json::array();
    for (const auto& tr : group.trajectories) {
        json t;
        t["seed"] = tr.seed;
        t["trained"] = tr.active;
        t["steps"] = tr.steps.size();
        t["pruned_at"] = tr.pruned_at ? json(*tr.pruned_at) : json(nullptr);
        t["terminal"] = tr.terminal_state ? json(*tr.terminal_state) : json(nullptr);
        t["reward"] = tr.final_reward ? json(*tr.final_reward) : json(nullptr);
        trs.push_back(std::move(t));
    }
    j["trajectories"] = std::move(trs);
    json hist = json::array();
    for (std::size_t i = 0; i < group.survivor_history.size(); ++i) {
        json h;
        h["step"] = group.survivor_history[i].step;
        h["survivors"] = group.survivor_history[i].survivors;
        if (i < group.proxy_rewards.size()) {
            h["proxy_rewards"] = group.proxy_rewards[i];
        }
        hist.push_back(std::move(h));
    }
    j["survivor_history"] = std::move(hist);
    return j.dump();
}

}  // namespace prunegrpo
