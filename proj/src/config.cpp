// SPDX-License-Identifier: Apache-2.0

#include "prunegrpo/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace prunegrpo {

namespace {

using nlohmann::json;

// Reads keys out of one JSON object and rejects whatever was not asked for.
class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) {
            throw Error("config: " + where_ + " must be an object");
        }
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) {
            return;
        }
        try {
            out = it->get<T>();
        } catch (const json::exception& e) {
            throw Error("config: bad value for " + where_ + key + ": " + e.what());
        }
    }

    const json* child(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string path(const std::string& key) const { return where_ + key + "."; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw Error("config: unknown key '" + where_ + it.key() + "'");
            }
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

json parse_text(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(std::string("config: invalid JSON: ") + e.what());
    }
}

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw Error("cannot read config: " + path);
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void read_schedule(const json& j, const std::string& where, NoiseSchedule& s) {
    Section sec(j, where);
    std::string backbone = to_string(s.backbone);
    sec.get("backbone", backbone);
    s.backbone = parse_backbone(backbone);
    sec.get("num_steps", s.num_steps);
    sec.get("sigma0", s.sigma0);
    sec.get("eta", s.eta);
    sec.get("beta_min", s.beta_min);
    sec.get("beta_max", s.beta_max);
    sec.get("t_clamp", s.t_clamp);
    sec.finish();
}

json schedule_json(const NoiseSchedule& s) {
    return {{"backbone", to_string(s.backbone)}, {"num_steps", s.num_steps}, {"sigma0", s.sigma0},
            {"eta", s.eta},
            {"beta_min", s.beta_min}, {"beta_max", s.beta_max}, {"t_clamp", s.t_clamp}};
}

void read_reward(const json& j, const std::string& where, RewardSpec& r) {
    Section sec(j, where);
    std::string kind = to_string(r.kind);
    sec.get("kind", kind);
    r.kind = parse_reward_kind(kind);
    sec.get("targets", r.targets);
    sec.get("context_conditioned", r.context_conditioned);
    sec.get("temperature", r.temperature);
    sec.get("ring_radius", r.ring_radius);
    sec.get("weights", r.weights);
    if (const json* comps = sec.child("components")) {
        if (!comps->is_array()) {
            throw Error("config: " + sec.path("components") + " must be an array");
        }
        r.components.clear();
        for (std::size_t i = 0; i < comps->size(); ++i) {
            RewardSpec c;
            read_reward((*comps)[i], sec.path("components") + std::to_string(i) + ".", c);
            r.components.push_back(std::move(c));
        }
    }
    sec.finish();
}

json reward_json(const RewardSpec& r) {
    json j = {{"kind", to_string(r.kind)},
              {"targets", r.targets},
              {"context_conditioned", r.context_conditioned},
              {"temperature", r.temperature},
              {"ring_radius", r.ring_radius}};
    if (!r.components.empty()) {
        json comps = json::array();
        for (const auto& c : r.components) {
            comps.push_back(reward_json(c));
        }
        j["components"] = std::move(comps);
        j["weights"] = r.weights;
    }
    return j;
}

void read_decoder(const json& j, const std::string& where, Decoder& d) {
    Section sec(j, where);
    std::string kind = d.kind == DecoderKind::Identity ? "identity" : "fixed-linear";
    sec.get("kind", kind);
    if (kind == "identity") {
        d.kind = DecoderKind::Identity;
    } else if (kind == "fixed-linear") {
        d.kind = DecoderKind::FixedLinear;
    } else {
        throw Error("config: unknown decoder kind '" + kind + "'");
    }
    sec.get("out_dim", d.out_dim);
    sec.get("matrix", d.matrix);
    sec.finish();
}

void read_mlp(const json& j, const std::string& where, MlpSpec& m) {
    Section sec(j, where);
    sec.get("latent_dim", m.latent_dim);
    sec.get("hidden_dims", m.hidden_dims);
    std::string act = to_string(m.activation);
    sec.get("activation", act);
    m.activation = parse_activation(act);
    std::string emb = to_string(m.time_embedding);
    sec.get("time_embedding", emb);
    m.time_embedding = parse_time_embedding(emb);
    sec.get("time_frequencies", m.time_frequencies);
    sec.get("num_contexts", m.num_contexts);
    sec.finish();
}

void read_dataset(const json& j, const std::string& where, DatasetSpec& d) {
    Section sec(j, where);
    std::string kind = to_string(d.kind);
    sec.get("kind", kind);
    d.kind = parse_dataset_kind(kind);
    sec.get("modes", d.modes);
    sec.get("radius", d.radius);
    sec.get("component_std", d.component_std);
    sec.get("mean", d.mean);
    sec.get("num_prompts", d.num_prompts);
    sec.get("prompt_mode_weights", d.prompt_mode_weights);
    sec.finish();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
    const json root = parse_text(json_text);
    Section sec(root, "");
    RunConfig c;
    std::string mode = to_string(c.mode);
    sec.get("mode", mode);
    c.mode = parse_run_mode(mode);
    if (const json* s = sec.child("schedule")) read_schedule(*s, "schedule.", c.schedule);
    if (const json* r = sec.child("reward")) read_reward(*r, "reward.", c.reward);
    if (const json* d = sec.child("decoder")) read_decoder(*d, "decoder.", c.decoder);
    if (const json* p = sec.child("prune")) {
        Section ps(*p, "prune.");
        ps.get("g_max", c.prune.g_max);
        ps.get("final_k", c.prune.final_k);
        if (const json* cps = ps.child("checkpoints")) {
            if (!cps->is_array()) {
                throw Error("config: prune.checkpoints must be an array");
            }
            c.prune.checkpoints.clear();
            for (std::size_t i = 0; i < cps->size(); ++i) {
                Section cs((*cps)[i], "prune.checkpoints." + std::to_string(i) + ".");
                Checkpoint cp;
                cs.get("step", cp.step);
                cs.get("survivors", cp.survivor_count);
                cs.finish();
                c.prune.checkpoints.push_back(cp);
            }
        }
        ps.finish();
    }
    sec.get("group_size", c.group_size);
    sec.get("trainees", c.trainees);
    if (const json* l = sec.child("loss")) {
        Section ls(*l, "loss.");
        ls.get("clip_eps", c.loss.clip_eps);
        ls.get("kl_beta", c.loss.kl_beta);
        ls.get("adv_epsilon", c.loss.adv_epsilon);
        ls.finish();
    }
    if (const json* o = sec.child("optimizer")) {
        Section os(*o, "optimizer.");
        os.get("learning_rate", c.adam.learning_rate);
        os.get("beta1", c.adam.beta1);
        os.get("beta2", c.adam.beta2);
        os.get("epsilon", c.adam.epsilon);
        os.finish();
    }
    sec.get("iterations", c.iterations);
    sec.get("prompts", c.prompts);
    sec.get("groups_per_iteration", c.groups_per_iteration);
    sec.get("inner_updates", c.inner_updates);
    sec.get("seed", c.seed);
    sec.get("delta", c.delta);
    if (const json* l = sec.child("ledger")) {
        Section ls(*l, "ledger.");
        ls.get("cost_noise_pred", c.costs.cost_noise_pred);
        ls.get("cost_decode", c.costs.cost_decode);
        ls.get("cost_reward", c.costs.cost_reward);
        ls.get("train_multiplier", c.costs.train_multiplier);
        ls.finish();
    }
    sec.get("checkpoint", c.checkpoint);
    if (!c.checkpoint.empty() && std::filesystem::path(c.checkpoint).is_relative()) {
        c.checkpoint = (std::filesystem::path(base_dir) / c.checkpoint).lexically_normal().string();
    }
    sec.get("record_wall_time", c.record_wall_time);
    if (const json* e = sec.child("eval")) {
        Section es(*e, "eval.");
        es.get("samples", c.eval.samples);
        es.get("seed", c.eval.seed);
        es.finish();
    }
    sec.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    const auto dir = std::filesystem::path(path).parent_path();
    return parse_run_config(read_file(path), dir.empty() ? "." : dir.string());
}

std::string run_config_json(const RunConfig& c) {
    json cps = json::array();
    for (const auto& cp : c.prune.checkpoints) {
        cps.push_back({{"step", cp.step}, {"survivors", cp.survivor_count}});
    }
    json j = {
        {"mode", to_string(c.mode)},
        {"schedule", schedule_json(c.schedule)},
        {"reward", reward_json(c.reward)},
        {"decoder",
         {{"kind", c.decoder.kind == DecoderKind::Identity ? "identity" : "fixed-linear"},
          {"out_dim", c.decoder.out_dim},
          {"matrix", c.decoder.matrix}}},
        {"prune", {{"g_max", c.prune.g_max}, {"checkpoints", cps}, {"final_k", c.prune.final_k}}},
        {"group_size", c.group_size},
        {"trainees", c.trainees},
        {"loss", {{"clip_eps", c.loss.clip_eps}, {"kl_beta", c.loss.kl_beta}, {"adv_epsilon", c.loss.adv_epsilon}}},
        {"optimizer",
         {{"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon}}},
        {"iterations", c.iterations},
        {"prompts", c.prompts},
        {"groups_per_iteration", c.groups_per_iteration},
        {"inner_updates", c.inner_updates},
        {"seed", c.seed},
        {"delta", c.delta},
        {"ledger",
         {{"cost_noise_pred", c.costs.cost_noise_pred},
          {"cost_decode", c.costs.cost_decode},
          {"cost_reward", c.costs.cost_reward},
          {"train_multiplier", c.costs.train_multiplier}}},
        {"checkpoint", c.checkpoint},
        {"record_wall_time", c.record_wall_time},
        {"eval", {{"samples", c.eval.samples}, {"seed", c.eval.seed}}},
    };
    return j.dump(2);
}

PretrainConfig parse_pretrain_config(const std::string& json_text) {
    const json root = parse_text(json_text);
    Section sec(root, "");
    PretrainConfig c;
    if (const json* m = sec.child("mlp")) read_mlp(*m, "mlp.", c.mlp);
    if (const json* d = sec.child("dataset")) read_dataset(*d, "dataset.", c.dataset);
    if (const json* s = sec.child("schedule")) read_schedule(*s, "schedule.", c.schedule);
    sec.get("steps", c.steps);
    sec.get("batch_size", c.batch_size);
    sec.get("learning_rate", c.learning_rate);
    sec.get("final_learning_rate", c.final_learning_rate);
    sec.get("validation_size", c.validation_size);
    sec.get("log_every", c.log_every);
    sec.get("seed", c.seed);
    sec.get("target_val_loss", c.target_val_loss);
    sec.get("expected_val_loss", c.expected_val_loss);
    sec.finish();
    c.mlp.validate();
    c.dataset.validate();
    c.schedule.validate();
    return c;
}

PretrainConfig load_pretrain_config(const std::string& path) { return parse_pretrain_config(read_file(path)); }

std::string pretrain_config_json(const PretrainConfig& c) {
    json j = {
        {"mlp",
         {{"latent_dim", c.mlp.latent_dim},
          {"hidden_dims", c.mlp.hidden_dims},
          {"activation", to_string(c.mlp.activation)},
          {"time_embedding", to_string(c.mlp.time_embedding)},
          {"time_frequencies", c.mlp.time_frequencies},
          {"num_contexts", c.mlp.num_contexts}}},
        {"dataset",
         {{"kind", to_string(c.dataset.kind)},
          {"modes", c.dataset.modes},
          {"radius", c.dataset.radius},
          {"component_std", c.dataset.component_std},
          {"mean", c.dataset.mean},
          {"num_prompts", c.dataset.num_prompts},
          {"prompt_mode_weights", c.dataset.prompt_mode_weights}}},
        {"schedule", schedule_json(c.schedule)},
        {"steps", c.steps},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"final_learning_rate", c.final_learning_rate},
        {"validation_size", c.validation_size},
        {"log_every", c.log_every},
        {"seed", c.seed},
        {"target_val_loss", c.target_val_loss},
        {"expected_val_loss", c.expected_val_loss},
    };
    return j.dump(2);
}

}  // namespace prunegrpo
