// SPDX-License-Identifier: Apache-2.0
//
// prunegrpo: pretrain a toy generator, align it with GRPO variants, and
// inspect filtering, cost accounting and preview fidelity.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "prunegrpo/config.hpp"
#include "prunegrpo/diagnostics.hpp"
#include "prunegrpo/harness.hpp"
#include "prunegrpo/ledger.hpp"
#include "prunegrpo/ovf.hpp"
#include "prunegrpo/pretrain.hpp"

namespace fs = std::filesystem;
using namespace prunegrpo;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) {
        throw Error("cannot write " + path.string());
    }
    f << text << '\n';
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty()) {
            out.push_back(parse_double(cell));
        }
    }
    return out;
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int cmd_pretrain(const std::string& config_path, std::optional<std::uint64_t> seed, const fs::path& out_dir,
                 bool reuse) {
    PretrainConfig cfg = config_path.empty() ? PretrainConfig{} : load_pretrain_config(config_path);
    if (seed) {
        cfg.seed = *seed;
    }
    const std::string cfg_text = pretrain_config_json(cfg) + "\n";
    // Same config already trained into this directory: keep it.
    if (reuse && fs::exists(out_dir / "policy.ckpt") && fs::exists(out_dir / "loss_curve.csv") &&
        read_text(out_dir / "pretrain_config.json") == cfg_text) {
        const double val = validation_loss(load_checkpoint((out_dir / "policy.ckpt").string()), cfg);
        std::printf("reused %s  validation loss %s\n", out_dir.string().c_str(), format_double(val).c_str());
        return 0;
    }
    fs::create_directories(out_dir);
    fs::remove(out_dir / "pretrain_config.json");
    const PretrainResult res = pretrain_run(cfg);
    save_checkpoint((out_dir / "policy.ckpt").string(), res.params);
    write_loss_curve((out_dir / "loss_curve.csv").string(), res.curve);
    write_text(out_dir / "pretrain_config.json", pretrain_config_json(cfg));
    const double val = validation_loss(res.params, cfg);
    std::printf("steps %d  validation loss %s\n", res.steps_run, format_double(val).c_str());
    if (cfg.expected_val_loss > 0.0 && !(val < cfg.expected_val_loss)) {
        std::fprintf(stderr, "warning: validation loss above the expected %s\n",
                     format_double(cfg.expected_val_loss).c_str());
    }
    return 0;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const fs::path& out_dir,
              const std::string& checkpoint, const std::string& mode, bool dump) {
    RunConfig cfg = load_run_config(config_path);
    if (seed) {
        cfg.seed = *seed;
    }
    if (!checkpoint.empty()) {
        cfg.checkpoint = checkpoint;
    }
    if (!mode.empty()) {
        cfg.mode = parse_run_mode(mode);
        cfg.validate();
    }
    if (cfg.checkpoint.empty()) {
        throw Error("train needs a pretrained checkpoint (config key 'checkpoint' or --checkpoint)");
    }
    const PolicyParams init = load_checkpoint(cfg.checkpoint);
    fs::create_directories(out_dir);
    write_text(out_dir / "run_config.json", run_config_json(cfg));
    std::ofstream traj;
    RunHooks hooks;
    if (dump) {
        traj.open(out_dir / "trajectories.ndjson");
        if (!traj) {
            throw Error("cannot write " + (out_dir / "trajectories.ndjson").string());
        }
        hooks.on_group = [&](int it, int slot, const Group& g) { traj << group_ndjson(it, slot, g) << '\n'; };
    }
    const RunResult res = run_experiment(cfg, init, hooks);
    for (const auto& row : res.rows) {
        if (!row.notice.empty()) {
            std::fprintf(stderr, "iteration %d: %s\n", row.iteration, row.notice.c_str());
        }
    }
    emit_metrics(res.rows, (out_dir / "metrics.csv").string());
    write_ledger_csv((out_dir / "ledger.csv").string(), res.ledger);
    save_checkpoint((out_dir / "policy.ckpt").string(), res.params);
    if (!res.rows.empty()) {
        const auto& last = res.rows.back();
        std::printf("%s: %d iterations  last mean reward %s  cumulative %s TFLOPs\n", to_string(cfg.mode).c_str(),
                    cfg.iterations, format_double(last.mean_reward).c_str(), format_double(last.cum_tflops).c_str());
    }
    if (cfg.eval.samples > 0) {
        std::printf("evaluation mean reward %s over %d samples\n", format_double(res.eval_mean_reward).c_str(),
                    cfg.eval.samples);
    }
    return 0;
}

std::vector<double> read_reward_column(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw Error("cannot read rewards: " + path);
    }
    std::vector<double> out;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        const auto cell = line.substr(0, line.find(','));
        if (cell.empty()) {
            continue;
        }
        try {
            out.push_back(parse_double(cell));
        } catch (const Error&) {
            if (!first) {
                throw;
            }
        }
        first = false;
    }
    return out;
}

std::string kept_field(const std::vector<std::size_t>& kept) {
    std::string s;
    for (std::size_t i : kept) {
        s += (s.empty() ? "" : " ") + std::to_string(i);
    }
    return s;
}

int cmd_ovf(const std::string& input, const std::string& rewards, std::size_t k, double delta,
            std::optional<std::uint64_t> seed) {
    if (input.empty() == rewards.empty()) {
        throw Error("ovf needs exactly one of a reward CSV or --rewards");
    }
    const ovf::RewardList list(input.empty() ? parse_list(rewards) : read_reward_column(input));
    // Clustering does not depend on the filter; it is reported on the whole list.
    const std::string clustered = format_double(ovf::clustered_fraction(list, delta));
    const ovf::SelectionResult sel = ovf::ovf_select(list, k);
    std::printf("method,kept,variance,clustered_fraction\n");
    std::printf("ovf,%s,%s,%s\n", kept_field(sel.kept).c_str(), format_double(sel.variance).c_str(),
                clustered.c_str());
    if (seed) {
        RandomStream rng(*seed);
        const ovf::SelectionResult uni = ovf::uniform_subsample(list, k, rng);
        std::printf("uniform,%s,%s,%s\n", kept_field(uni.kept).c_str(), format_double(uni.variance).c_str(),
                    clustered.c_str());
    }
    return 0;
}

PruneSchedule make_schedule(int g_max, std::vector<Checkpoint> cps) {
    PruneSchedule s;
    s.g_max = g_max;
    s.checkpoints = std::move(cps);
    s.final_k = s.checkpoints.empty() ? g_max : s.checkpoints.back().survivor_count;
    return s;
}

int cmd_flops(const std::string& config_path, double train_multiplier, const fs::path& out_dir) {
    std::vector<std::pair<std::string, FlopsBreakdown>> table;
    if (!config_path.empty()) {
        RunConfig cfg = load_run_config(config_path);
        if (train_multiplier > 0.0) {
            cfg.costs.train_multiplier = train_multiplier;
        }
        table.emplace_back(to_string(cfg.mode) + " (whole run)", predicted_run_flops(cfg));
    } else {
        FlopsLedger costs;
        const double m = train_multiplier > 0.0 ? train_multiplier : costs.train_multiplier;
        const int T = 10;
        const FlopsBreakdown base = flops_total(PruneSchedule::fixed(24), T, costs, m);
        table.emplace_back("baseline G=24", with_speedup(base, base));
        table.emplace_back("standard 48-24-12",
                           with_speedup(flops_total(make_schedule(48, {{5, 24}, {7, 12}}), T, costs, m), base));
        table.emplace_back("flash 24-16-12",
                           with_speedup(flops_total(make_schedule(24, {{5, 16}, {7, 12}}), T, costs, m), base));
    }
    std::ostringstream csv;
    csv << breakdown_csv_header() << '\n';
    for (const auto& [label, b] : table) {
        csv << breakdown_csv_row(label, b) << '\n';
    }
    std::cout << csv.str();
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream f(out_dir / "flops.csv");
        f << csv.str();
    }
    return 0;
}

int cmd_diag(const std::string& config_path, std::optional<std::uint64_t> seed, const fs::path& out_dir,
             const std::string& checkpoint, int samples, const std::string& steps_arg) {
    RunConfig cfg = load_run_config(config_path);
    if (!checkpoint.empty()) {
        cfg.checkpoint = checkpoint;
    }
    if (cfg.checkpoint.empty()) {
        throw Error("diag needs a checkpoint");
    }
    const PolicyParams params = load_checkpoint(cfg.checkpoint);
    const std::uint64_t s = seed ? *seed : cfg.seed;
    std::vector<int> steps;
    for (double v : parse_list(steps_arg)) {
        steps.push_back(static_cast<int>(v));
    }
    const int context = cfg.prompts.front();
    const auto fid = proxy_fidelity(params, cfg.schedule, cfg.reward, cfg.decoder, context, samples, steps,
                                    derive_seed(s, {1}));
    const auto clu = clustering_profile(params, cfg.schedule, cfg.reward, cfg.decoder, context, 200,
                                        cfg.sampled_group_size(), {0.1, 0.25, 0.5, 1.0}, derive_seed(s, {2}));
    std::printf("step,t,spearman,preview_error\n");
    for (const auto& r : fid) {
        std::printf("%d,%s,%s,%s\n", r.step, format_double(r.t).c_str(), format_double(r.spearman).c_str(),
                    format_double(r.preview_error).c_str());
    }
    std::printf("delta,clustered_fraction,reward_std\n");
    for (const auto& r : clu) {
        std::printf("%s,%s,%s\n", format_double(r.delta).c_str(), format_double(r.clustered_fraction).c_str(),
                    format_double(r.reward_std).c_str());
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_fidelity_csv((out_dir / "fidelity.csv").string(), fid);
        write_clustering_csv((out_dir / "clustering.csv").string(), clu);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Variance-filtered GRPO on toy generative models"};
    app.require_subcommand(1);

    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string checkpoint;

    auto* pre = app.add_subcommand("pretrain", "fit the generator to the synthetic dataset");
    pre->add_option("--config", config, "pretrain config (JSON)");
    pre->add_option("--seed", seed, "override the config seed");
    pre->add_option("--out-dir", out_dir, "output directory")->required();
    bool reuse = false;
    pre->add_flag("--reuse", reuse, "skip training when out-dir already holds this config's checkpoint");

    auto* train = app.add_subcommand("train", "align a pretrained policy");
    std::string mode;
    bool dump = false;
    train->add_option("--config", config, "run config (JSON)")->required();
    train->add_option("--seed", seed, "override the config seed");
    train->add_option("--out-dir", out_dir, "output directory")->required();
    train->add_option("--checkpoint", checkpoint, "override the config checkpoint");
    train->add_option("--mode", mode, "pro-grpo | baseline | post-hoc-ovf | uniform-subsample");
    train->add_flag("--dump-trajectories", dump, "write trajectories.ndjson");

    auto* ovf_cmd = app.add_subcommand("ovf", "variance-optimal subset of a reward list");
    std::string input;
    std::string rewards;
    std::size_t k = 2;
    double delta = 0.5;
    ovf_cmd->add_option("input", input, "one-column CSV of rewards");
    ovf_cmd->add_option("--rewards", rewards, "comma-separated rewards instead of a file");
    ovf_cmd->add_option("--seed", seed, "also draw a uniform subsample with this seed");
    ovf_cmd->add_option("--k", k, "subset size");
    ovf_cmd->add_option("--delta", delta, "clustering half-width");

    auto* flops = app.add_subcommand("flops", "closed-form per-group compute");
    double multiplier = 0.0;
    flops->add_option("--config", config, "run config; without one the three reference schedules are shown");
    flops->add_option("--train-multiplier", multiplier, "training step cost in noise predictions");
    flops->add_option("--out-dir", out_dir, "also write flops.csv here");

    auto* diag = app.add_subcommand("diag", "preview fidelity and reward clustering");
    int samples = 200;
    std::string steps = "3,5,7,9";
    diag->add_option("--config", config, "run config (JSON)")->required();
    diag->add_option("--seed", seed, "override the config seed");
    diag->add_option("--out-dir", out_dir, "also write CSVs here");
    diag->add_option("--checkpoint", checkpoint, "override the config checkpoint");
    diag->add_option("--samples", samples, "trajectories for the fidelity table");
    diag->add_option("--steps", steps, "comma-separated preview steps");

    CLI11_PARSE(app, argc, argv);
    try {
        if (pre->parsed()) return cmd_pretrain(config, seed, out_dir, reuse);
        if (train->parsed()) return cmd_train(config, seed, out_dir, checkpoint, mode, dump);
        if (ovf_cmd->parsed()) return cmd_ovf(input, rewards, k, delta, seed);
        if (flops->parsed()) return cmd_flops(config, multiplier, out_dir);
        if (diag->parsed()) return cmd_diag(config, seed, out_dir, checkpoint, samples, steps);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
