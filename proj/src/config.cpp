#include "fipo/config.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>

#include "fipo/errors.hpp"

namespace fipo {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json tau_to_json(double tau) {
    if (tau >= kInfiniteTauThreshold) {
        return "inf";
    }
    return tau;
}

double tau_from_json(const json& j, const std::string& key) {
    if (j.is_string() && (j.get<std::string>() == "inf" || j.get<std::string>() == "infinity")) {
        return std::numeric_limits<double>::infinity();
    }
    if (j.is_number()) {
        return j.get<double>();
    }
    throw ConfigError(key + ": expected a number or \"inf\"");
}

bool same_kind(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) {
        return true;
    }
    return a.type() == b.type();
}

// Overlays `in` onto `tmpl`, rejecting keys that `tmpl` does not have.
void merge_strict(ordered_json& tmpl, const json& in, const std::string& prefix) {
    if (!in.is_object()) {
        throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
    }
    for (auto it = in.begin(); it != in.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (key == "schema_version") {
            if (!it.value().is_number_integer() || it.value().get<int>() != kSchemaVersion) {
                throw ConfigError("schema_version: unsupported value " + it.value().dump());
            }
            continue;
        }
        auto slot = tmpl.find(it.key());
        if (slot == tmpl.end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        if (slot->is_object()) {
            merge_strict(*slot, it.value(), key);
            continue;
        }
        if (key == "fipo.tau") {
            tau_from_json(it.value(), key);
        } else if (!same_kind(*slot, it.value())) {
            throw ConfigError(key + ": expected " + std::string(slot->type_name()) + ", got " +
                              std::string(it.value().type_name()));
        }
        *slot = it.value();
    }
}

int get_int(const ordered_json& j, const char* section, const char* name) {
    const auto& v = j.at(section).at(name);
    if (v.is_number_integer()) {
        return v.get<int>();
    }
    const double d = v.get<double>();
    if (std::floor(d) != d) {
        throw ConfigError(std::string(section) + "." + name + ": expected an integer");
    }
    return static_cast<int>(d);
}

double get_double(const ordered_json& j, const char* section, const char* name) {
    return j.at(section).at(name).get<double>();
}

}  // namespace

ordered_json to_json(const RunConfig& c) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["policy"] = {{"vocab_size", c.policy.shape.vocab_size},
                   {"d_emb", c.policy.shape.d_emb},
                   {"window", c.policy.shape.window},
                   {"d_hidden", c.policy.shape.d_hidden},
                   {"init_scale", c.policy.init_scale}};
    j["env"] = {{"family", std::string(to_string(c.env.family))},
                {"difficulty", c.env.difficulty},
                {"max_response_len", c.env.reward.max_response_len},
                {"overlong_buffer", c.env.reward.overlong_buffer},
                {"penalty_scale", c.env.reward.penalty_scale}};
    j["sampling"] = {{"temperature", c.sampling.rollout.temperature},
                     {"top_p", c.sampling.rollout.top_p},
                     {"eval_temperature", c.sampling.eval.temperature},
                     {"eval_top_p", c.sampling.eval.top_p}};
    j["fipo"] = {{"tau", tau_to_json(c.fipo.tau)},
                 {"safety_threshold", c.fipo.safety_threshold},
                 {"f_clip", ordered_json::array({c.fipo.f_low, c.fipo.f_high})},
                 {"chunk_size", c.fipo.chunk_size},
                 {"filtering", c.fipo.filtering},
                 {"detach_influence", c.fipo.detach_influence}};
    j["loss"] = {{"kind", std::string(to_string(c.loss.kind))},
                 {"eps_low", c.loss.clip.eps_low},
                 {"eps_high", c.loss.clip.eps_high},
                 {"dual_clip_c", c.loss.clip.dual_clip_c},
                 {"kl_beta", c.loss.clip.kl_beta}};
    j["optim"] = {{"lr", c.optim.lr},
                  {"beta1", c.optim.beta1},
                  {"beta2", c.optim.beta2},
                  {"eps", c.optim.eps},
                  {"weight_decay", c.optim.weight_decay},
                  {"grad_clip", c.optim.grad_clip},
                  {"warmup_steps", c.optim.warmup_steps}};
    j["trainer"] = {{"prompt_batch_size", c.trainer.prompt_batch_size},
                    {"group_size", c.trainer.group_size},
                    {"minibatch_prompts", c.trainer.minibatch_prompts},
                    {"total_steps", c.trainer.total_steps},
                    {"eval_every", c.trainer.eval_every},
                    {"eval_instances", c.trainer.eval_instances},
                    {"eval_samples", c.trainer.eval_samples},
                    {"seed", c.trainer.seed},
                    {"resample_cap_factor", c.trainer.resample_cap_factor},
                    {"threads", c.trainer.threads},
                    {"stop_at_accuracy", c.trainer.stop_at_accuracy},
                    {"checkpoint_every", c.trainer.checkpoint_every},
                    {"dump_raw_step", c.trainer.dump_raw_step}};
    return j;
}

RunConfig config_from_json(const json& in) {
    ordered_json m = to_json(RunConfig{});
    merge_strict(m, in, "");

    RunConfig c;
    try {
        c.policy.shape.vocab_size = get_int(m, "policy", "vocab_size");
        c.policy.shape.d_emb = get_int(m, "policy", "d_emb");
        c.policy.shape.window = get_int(m, "policy", "window");
        c.policy.shape.d_hidden = get_int(m, "policy", "d_hidden");
        c.policy.init_scale = get_double(m, "policy", "init_scale");

        c.env.family = parse_task_family(m.at("env").at("family").get<std::string>());
        c.env.difficulty = get_int(m, "env", "difficulty");
        c.env.reward.max_response_len = get_int(m, "env", "max_response_len");
        c.env.reward.overlong_buffer = get_int(m, "env", "overlong_buffer");
        c.env.reward.penalty_scale = get_double(m, "env", "penalty_scale");

        c.sampling.rollout.temperature = get_double(m, "sampling", "temperature");
        c.sampling.rollout.top_p = get_double(m, "sampling", "top_p");
        c.sampling.eval.temperature = get_double(m, "sampling", "eval_temperature");
        c.sampling.eval.top_p = get_double(m, "sampling", "eval_top_p");

        c.fipo.tau = tau_from_json(m.at("fipo").at("tau"), "fipo.tau");
        c.fipo.safety_threshold = get_double(m, "fipo", "safety_threshold");
        const auto& fc = m.at("fipo").at("f_clip");
        if (!fc.is_array() || fc.size() != 2 || !fc[0].is_number() || !fc[1].is_number()) {
            throw ConfigError("fipo.f_clip: expected [low, high]");
        }
        c.fipo.f_low = fc[0].get<double>();
        c.fipo.f_high = fc[1].get<double>();
        c.fipo.chunk_size = get_int(m, "fipo", "chunk_size");
        c.fipo.filtering = m.at("fipo").at("filtering").get<bool>();
        c.fipo.detach_influence = m.at("fipo").at("detach_influence").get<bool>();

        c.loss.kind = parse_loss_kind(m.at("loss").at("kind").get<std::string>());
        c.loss.clip.eps_low = get_double(m, "loss", "eps_low");
        c.loss.clip.eps_high = get_double(m, "loss", "eps_high");
        c.loss.clip.dual_clip_c = get_double(m, "loss", "dual_clip_c");
        c.loss.clip.kl_beta = get_double(m, "loss", "kl_beta");

        c.optim.lr = get_double(m, "optim", "lr");
        c.optim.beta1 = get_double(m, "optim", "beta1");
        c.optim.beta2 = get_double(m, "optim", "beta2");
        c.optim.eps = get_double(m, "optim", "eps");
        c.optim.weight_decay = get_double(m, "optim", "weight_decay");
        c.optim.grad_clip = get_double(m, "optim", "grad_clip");
        c.optim.warmup_steps = get_int(m, "optim", "warmup_steps");

        c.trainer.prompt_batch_size = get_int(m, "trainer", "prompt_batch_size");
        c.trainer.group_size = get_int(m, "trainer", "group_size");
        c.trainer.minibatch_prompts = get_int(m, "trainer", "minibatch_prompts");
        c.trainer.total_steps = get_int(m, "trainer", "total_steps");
        c.trainer.eval_every = get_int(m, "trainer", "eval_every");
        c.trainer.eval_instances = get_int(m, "trainer", "eval_instances");
        c.trainer.eval_samples = get_int(m, "trainer", "eval_samples");
        const auto& seed = m.at("trainer").at("seed");
        if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<std::int64_t>() < 0)) {
            throw ConfigError("trainer.seed: expected a non-negative integer");
        }
        c.trainer.seed = seed.get<std::uint64_t>();
        c.trainer.resample_cap_factor = get_int(m, "trainer", "resample_cap_factor");
        c.trainer.threads = get_int(m, "trainer", "threads");
        c.trainer.stop_at_accuracy = get_double(m, "trainer", "stop_at_accuracy");
        c.trainer.checkpoint_every = get_int(m, "trainer", "checkpoint_every");
        c.trainer.dump_raw_step = get_int(m, "trainer", "dump_raw_step");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config type error: ") + e.what());
    }
    c.validate();
    return c;
}

void RunConfig::validate() const {
    policy.shape.validate();
    if (policy.shape.vocab_size < tokens::kMinVocab) {
        throw ConfigError("policy.vocab_size must be >= " + std::to_string(tokens::kMinVocab) +
                          " for the built-in task families");
    }
    if (!(policy.init_scale >= 0.0)) {
        throw ConfigError("policy.init_scale must be >= 0");
    }
    if (env.difficulty < min_difficulty(env.family) || env.difficulty > max_difficulty(env.family)) {
        throw ConfigError("env.difficulty out of range for family " + std::string(to_string(env.family)));
    }
    env.reward.validate();
    for (const auto* s : {&sampling.rollout, &sampling.eval}) {
        if (!(s->temperature > 0.0)) {
            throw ConfigError("sampling temperature must be > 0");
        }
        if (!(s->top_p > 0.0 && s->top_p <= 1.0)) {
            throw ConfigError("sampling top_p must lie in (0, 1]");
        }
    }
    fipo.validate();
    loss.clip.validate();
    if (!(optim.lr > 0.0) || !(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0) ||
        !(optim.eps > 0.0) || !(optim.weight_decay >= 0.0) || !(optim.grad_clip >= 0.0) || optim.warmup_steps < 0) {
        throw ConfigError("optim: invalid optimizer settings");
    }
    const auto& t = trainer;
    if (t.prompt_batch_size < 1 || t.minibatch_prompts < 1) {
        throw ConfigError("trainer.prompt_batch_size and trainer.minibatch_prompts must be >= 1");
    }
    if (t.prompt_batch_size % t.minibatch_prompts != 0) {
        throw ConfigError("trainer.prompt_batch_size must be divisible by trainer.minibatch_prompts");
    }
    if (t.group_size < 2) {
        throw ConfigError("trainer.group_size must be >= 2");
    }
    if (t.total_steps < 0 || t.eval_every < 0 || t.eval_instances < 1 || t.eval_samples < 1) {
        throw ConfigError("trainer: invalid step/eval counts");
    }
    if (t.resample_cap_factor < 1 || t.threads < 1 || t.checkpoint_every < 0) {
        throw ConfigError("trainer: resample_cap_factor and threads must be >= 1, checkpoint_every >= 0");
    }
    if (!(t.stop_at_accuracy >= 0.0 && t.stop_at_accuracy <= 1.0)) {
        throw ConfigError("trainer.stop_at_accuracy must lie in [0, 1]");
    }
}

std::string resolve_config_path(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::exists(path)) {
        return path;
    }
    if (const char* dir = std::getenv("FIPO_CONFIG_DIR"); dir != nullptr && fs::path(path).is_relative()) {
        const fs::path alt = fs::path(dir) / path;
        if (fs::exists(alt)) {
            return alt.string();
        }
    }
    return path;
}

RunConfig load_config(const std::string& path) {
    const std::string resolved = resolve_config_path(path);
    std::ifstream in(resolved);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

void apply_override(RunConfig& cfg, std::string_view key, std::string_view value) {
    json v;
    try {
        v = json::parse(value);
    } catch (const json::parse_error&) {
        v = std::string(value);
    }
    json patch = json::object();
    json* cursor = &patch;
    std::string_view rest = key;
    while (true) {
        const auto dot = rest.find('.');
        const std::string part(rest.substr(0, dot));
        if (part.empty()) {
            throw ConfigError("malformed override key '" + std::string(key) + "'");
        }
        if (dot == std::string_view::npos) {
            (*cursor)[part] = v;
            break;
        }
        cursor = &(*cursor)[part];
        rest.remove_prefix(dot + 1);
    }
    ordered_json base = to_json(cfg);
    merge_strict(base, patch, "");
    cfg = config_from_json(json::parse(base.dump()));
}

}  // namespace fipo
