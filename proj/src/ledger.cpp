// SPDX-License-Identifier: Apache-2.0

#include "prunegrpo/ledger.hpp"

#include <cmath>
#include <fstream>

#include "prunegrpo/common.hpp"

namespace prunegrpo {

PruneSchedule PruneSchedule::fixed(int g) {
    PruneSchedule s;
    s.g_max = g;
    s.final_k = g;
    return s;
}

int PruneSchedule::active_during(int step) const {
    int active = g_max;
    for (const auto& c : checkpoints) {
        if (c.step <= step) {
            active = c.survivor_count;
        }
    }
    return active;
}

void PruneSchedule::validate(int num_steps) const {
    if (g_max < 1) {
        throw Error("prune schedule: g_max must be positive");
    }
    if (checkpoints.empty()) {
        if (final_k != g_max) {
            throw Error("prune schedule: without checkpoints final_k must equal g_max");
        }
        return;
    }
    int prev_step = 0;
    int prev_count = g_max;
    for (const auto& c : checkpoints) {
        if (c.step <= prev_step || c.step >= num_steps) {
            throw Error("prune schedule: checkpoint steps must be strictly increasing inside (0, T)");
        }
        if (c.survivor_count >= prev_count || c.survivor_count < 1) {
            throw Error("prune schedule: survivor counts must be strictly decreasing");
        }
        prev_step = c.step;
        prev_count = c.survivor_count;
    }
    if (prev_count != final_k) {
        throw Error("prune schedule: last survivor count must equal final_k");
    }
    if (final_k < 2) {
        throw Error("prune schedule: final_k must be at least 2");
    }
}

void FlopsLedger::charge_checkpoint(std::uint64_t active) {
    noise_pred_lookahead += active;
    decode_calls += active;
    reward_calls += active;
}

void FlopsLedger::charge_terminal(std::uint64_t n) {
    decode_calls += n;
    reward_calls += n;
}

double FlopsLedger::sampling_tflops() const { return static_cast<double>(noise_pred_sampling) * cost_noise_pred; }
double FlopsLedger::lookahead_tflops() const { return static_cast<double>(noise_pred_lookahead) * cost_noise_pred; }
double FlopsLedger::decode_tflops() const { return static_cast<double>(decode_calls) * cost_decode; }
double FlopsLedger::reward_tflops() const { return static_cast<double>(reward_calls) * cost_reward; }
double FlopsLedger::training_tflops() const {
    return static_cast<double>(train_steps) * train_multiplier * cost_noise_pred;
}
double FlopsLedger::total_tflops() const {
    return sampling_tflops() + lookahead_tflops() + decode_tflops() + reward_tflops() + training_tflops();
}

void FlopsLedger::validate() const {
    for (double c : {cost_noise_pred, cost_decode, cost_reward, train_multiplier}) {
        if (!(c >= 0.0) || !std::isfinite(c)) {
            throw Error("ledger: costs must be finite and non-negative");
        }
    }
}

namespace {

FlopsBreakdown price(const FlopsLedger& ledger, double train_multiplier, std::uint64_t np_sampling,
                     std::uint64_t checkpoint_calls, std::uint64_t terminal_calls, std::uint64_t train_steps) {
    FlopsBreakdown b;
    b.noise_pred_sampling = np_sampling;
    b.noise_pred_lookahead = checkpoint_calls;
    b.decode_calls = checkpoint_calls + terminal_calls;
    b.reward_calls = checkpoint_calls + terminal_calls;
    b.train_steps = train_steps;
    b.sampling = static_cast<double>(np_sampling) * ledger.cost_noise_pred;
    b.checkpoint = static_cast<double>(checkpoint_calls) *
                   (ledger.cost_noise_pred + ledger.cost_decode + ledger.cost_reward);
    b.terminal = static_cast<double>(terminal_calls) * (ledger.cost_decode + ledger.cost_reward);
    b.training = static_cast<double>(train_steps) * train_multiplier * ledger.cost_noise_pred;
    b.total = b.sampling + b.checkpoint + b.terminal + b.training;
    return b;
}

}  // namespace

FlopsBreakdown flops_total(const PruneSchedule& schedule, int num_steps, const FlopsLedger& ledger,
                           double train_multiplier, int epochs) {
    schedule.validate(num_steps);
    std::uint64_t sampling = 0;
    for (int k = 0; k < num_steps; ++k) {
        sampling += static_cast<std::uint64_t>(schedule.active_during(k));
    }
    std::uint64_t checkpoint = 0;
    int active = schedule.g_max;
    for (const auto& c : schedule.checkpoints) {
        checkpoint += static_cast<std::uint64_t>(active);
        active = c.survivor_count;
    }
    const auto k = static_cast<std::uint64_t>(schedule.final_k);
    return price(ledger, train_multiplier, sampling, checkpoint, k,
                 k * static_cast<std::uint64_t>(num_steps) * static_cast<std::uint64_t>(epochs));
}

FlopsBreakdown flops_total_post_hoc(int g, int k, int num_steps, const FlopsLedger& ledger,
                                    double train_multiplier, int epochs) {
    if (k < 1 || k > g) {
        throw Error("post-hoc schedule: need 1 <= k <= G");
    }
    const auto gg = static_cast<std::uint64_t>(g);
    const auto steps = static_cast<std::uint64_t>(num_steps);
    return price(ledger, train_multiplier, gg * steps, 0, gg,
                 static_cast<std::uint64_t>(k) * steps * static_cast<std::uint64_t>(epochs));
}

FlopsBreakdown with_speedup(FlopsBreakdown b, const FlopsBreakdown& baseline) {
    b.speedup = b.total > 0.0 ? baseline.total / b.total : 1.0;
    return b;
}

void write_ledger_csv(const std::string& path, const FlopsLedger& l) {
    std::ofstream f(path);
    if (!f) {
        throw Error("cannot write ledger summary: " + path);
    }
    f << "call_class,calls,cost_per_call_tflops,total_tflops\n";
    f << "noise_pred_sampling," << l.noise_pred_sampling << ',' << format_double(l.cost_noise_pred) << ','
      << format_double(l.sampling_tflops()) << '\n';
    f << "noise_pred_lookahead," << l.noise_pred_lookahead << ',' << format_double(l.cost_noise_pred) << ','
      << format_double(l.lookahead_tflops()) << '\n';
    f << "decode," << l.decode_calls << ',' << format_double(l.cost_decode) << ','
      << format_double(l.decode_tflops()) << '\n';
    f << "reward," << l.reward_calls << ',' << format_double(l.cost_reward) << ','
      << format_double(l.reward_tflops()) << '\n';
    f << "train_step," << l.train_steps << ',' << format_double(l.train_multiplier * l.cost_noise_pred) << ','
      << format_double(l.training_tflops()) << '\n';
    f << "total,," << "," << format_double(l.total_tflops()) << '\n';
    if (!f) {
        throw Error("failed writing ledger summary: " + path);
    }
}

std::string breakdown_csv_header() {
    return "schedule,sampling_tflops,checkpoint_tflops,terminal_tflops,training_tflops,total_tflops,speedup";
}

std::string breakdown_csv_row(const std::string& label, const FlopsBreakdown& b) {
    return label + ',' + format_double(b.sampling) + ',' + format_double(b.checkpoint) + ',' +
           format_double(b.terminal) + ',' + format_double(b.training) + ',' + format_double(b.total) + ',' +
           format_double(b.speedup);
}

}  // namespace prunegrpo
