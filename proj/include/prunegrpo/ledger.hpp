// SPDX-License-Identifier: Apache-2.0
//
// Analytic compute accounting: atomic per-call costs, call counters, and
// the closed-form per-group totals of a prune schedule.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace prunegrpo {

struct Checkpoint {
    int step = 0;              // prune before executing this step, 0 < step < T
    int survivor_count = 0;
    bool operator==(const Checkpoint&) const = default;
};

/// G_max -> K_2 -> ... -> K funnel.
struct PruneSchedule {
    int g_max = 24;
    std::vector<Checkpoint> checkpoints;
    int final_k = 24;

    /// Fixed group of `g` without checkpoints.
    static PruneSchedule fixed(int g);
    /// Active count while executing step `step`.
    int active_during(int step) const;
    void validate(int num_steps) const;
};

/// Per-call costs in TFLOPs plus counters for every call class.
struct FlopsLedger {
    double cost_noise_pred = 3.88;
    double cost_decode = 2.49;
    double cost_reward = 0.34;
    double train_multiplier = 3.0;

    std::uint64_t noise_pred_sampling = 0;
    std::uint64_t noise_pred_lookahead = 0;
    std::uint64_t decode_calls = 0;
    std::uint64_t reward_calls = 0;
    std::uint64_t train_steps = 0;  // trajectory-steps entering an update

    void charge_sampling(std::uint64_t n) { noise_pred_sampling += n; }
    /// One lookahead evaluation, decode and reward per previewed trajectory.
    void charge_checkpoint(std::uint64_t active);
    /// Decode and reward of n terminal samples.
    void charge_terminal(std::uint64_t n);
    void charge_training(std::uint64_t trajectory_steps) { train_steps += trajectory_steps; }

    double sampling_tflops() const;
    double lookahead_tflops() const;
    double decode_tflops() const;
    double reward_tflops() const;
    double training_tflops() const;
    double total_tflops() const;

    void validate() const;
};

struct FlopsBreakdown {
    double sampling = 0.0;
    double checkpoint = 0.0;
    double terminal = 0.0;
    double training = 0.0;
    double total = 0.0;
    double speedup = 1.0;  // baseline total / this total, when a baseline is supplied

    // Call counts behind the totals, for counter cross-checks.
    std::uint64_t noise_pred_sampling = 0;
    std::uint64_t noise_pred_lookahead = 0;
    std::uint64_t decode_calls = 0;
    std::uint64_t reward_calls = 0;
    std::uint64_t train_steps = 0;
};

/// Closed-form per-group cost of one sampling + training cycle. Only the
/// ledger's costs are read.
FlopsBreakdown flops_total(const PruneSchedule& schedule, int num_steps, const FlopsLedger& ledger,
                           double train_multiplier, int epochs = 1);
/// Same, for a full group of `g` whose k trainees are chosen after sampling.
FlopsBreakdown flops_total_post_hoc(int g, int k, int num_steps, const FlopsLedger& ledger,
                                    double train_multiplier, int epochs = 1);
FlopsBreakdown with_speedup(FlopsBreakdown b, const FlopsBreakdown& baseline);

void write_ledger_csv(const std::string& path, const FlopsLedger& ledger);
std::string breakdown_csv_header();
std::string breakdown_csv_row(const std::string& label, const FlopsBreakdown& b);

}  // namespace prunegrpo
