// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: the expand-and-prune training loop, fixed-group
// GRPO, the post-sampling filter ablations, and metrics output.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "prunegrpo/dynamics.hpp"
#include "prunegrpo/grpo.hpp"
#include "prunegrpo/ledger.hpp"
#include "prunegrpo/policy.hpp"
#include "prunegrpo/rewards.hpp"

namespace prunegrpo {

enum class RunMode { ProGrpo, Baseline, PostHocOvf, UniformSubsample };

std::string to_string(RunMode m);
RunMode parse_run_mode(const std::string& s);

struct EvalConfig {
    int samples = 0;  // 0 disables the final evaluation
    std::uint64_t seed = 12345;
};

struct RunConfig {
    RunMode mode = RunMode::ProGrpo;
    NoiseSchedule schedule;
    RewardSpec reward;
    Decoder decoder;
    PruneSchedule prune;  // pro-grpo
    int group_size = 24;  // baseline and post-hoc arms
    int trainees = 12;    // post-hoc arms
    LossConfig loss;
    AdamConfig adam;
    int iterations = 100;
    std::vector<int> prompts{0};
    int groups_per_iteration = 1;
    int inner_updates = 1;
    std::uint64_t seed = 0;
    double delta = 0.5;  // clustering half-width on normalised advantages
    FlopsLedger costs;   // counters ignored; costs and train_multiplier used
    std::string checkpoint;  // pretrained policy
    bool record_wall_time = true;
    EvalConfig eval;

    /// Group size sampled per prompt.
    int sampled_group_size() const;
    void validate() const;
};

struct MetricsRow {
    int iteration = 0;
    double mean_reward = 0.0;        // terminal rewards of every completed trajectory
    double reward_std = 0.0;         // population std of the trainee rewards, averaged over groups
    double clustered_frac = 0.0;     // |C_delta| / trainees, averaged over groups
    double survivor_variance = 0.0;  // trainee reward variance, averaged over groups
    double loss = 0.0;
    double kl = 0.0;
    double cum_tflops = 0.0;
    double wall_ms = 0.0;
    std::string notice;  // non-empty when the update was skipped
};

struct RunHooks {
    /// After a group is sampled, rewarded and its trainees fixed.
    std::function<void(int iteration, int slot, const Group&)> on_group;
    /// After the parameter update of an iteration.
    std::function<void(int iteration, const PolicyParams&)> on_iteration;
};

struct RunResult {
    std::vector<MetricsRow> rows;
    PolicyParams params;
    FlopsLedger ledger;
    double eval_mean_reward = 0.0;  // only when config.eval.samples > 0
};

/// Previews every active trajectory from its current state (having completed
/// `step` steps), keeps `survivor_count` by variance filtering and stops the
/// rest. Returns the surviving indices in ascending order.
std::vector<std::size_t> apply_prune_checkpoint(Group& group, int survivor_count, int step,
                                                const PolicyParams& params, const NoiseSchedule& schedule,
                                                const RewardSpec& spec, const Decoder& decoder,
                                                FlopsLedger& ledger);

/// Dispatches on config.mode.
RunResult run_experiment(const RunConfig& config, const PolicyParams& initial, const RunHooks& hooks = {});
RunResult run_pro_grpo(const RunConfig& config, const PolicyParams& initial, const RunHooks& hooks = {});
RunResult run_baseline_grpo(const RunConfig& config, const PolicyParams& initial, const RunHooks& hooks = {});
RunResult run_post_hoc_ovf(const RunConfig& config, const PolicyParams& initial, const RunHooks& hooks = {});

/// Closed-form ledger prediction for one whole run.
FlopsBreakdown predicted_run_flops(const RunConfig& config);

/// Mean terminal reward of n SDE samples, prompts cycling over `prompts`.
double evaluate_mean_reward(const PolicyParams& params, const NoiseSchedule& schedule, const RewardSpec& spec,
                            const Decoder& decoder, const std::vector<int>& prompts, int n, std::uint64_t seed);

std::string metrics_header();
void emit_metrics(const std::vector<MetricsRow>& rows, const std::string& path);
std::vector<MetricsRow> parse_metrics(const std::string& path);

/// One JSON object per line describing a sampled group.
std::string group_ndjson(int iteration, int slot, const Group& group);

}  // namespace prunegrpo
