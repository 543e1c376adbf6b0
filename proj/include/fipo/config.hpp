#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "fipo/env.hpp"
#include "fipo/future_kl.hpp"
#include "fipo/objective.hpp"
#include "fipo/policy.hpp"

namespace fipo {

inline constexpr int kSchemaVersion = 1;

struct PolicyConfig {
    PolicyShape shape;
    double init_scale = 1.0;
    bool operator==(const PolicyConfig&) const = default;
};

struct EnvConfig {
    TaskFamily family = TaskFamily::modsum;
    int difficulty = 1;
    RewardConfig reward;
    bool operator==(const EnvConfig&) const = default;
};

struct SamplingSettings {
    SamplingConfig rollout{1.0, 1.0};
    SamplingConfig eval{1.0, 0.7};
    bool operator==(const SamplingSettings& o) const {
        return rollout.temperature == o.rollout.temperature && rollout.top_p == o.rollout.top_p &&
               eval.temperature == o.eval.temperature && eval.top_p == o.eval.top_p;
    }
};

struct LossConfig {
    LossKind kind = LossKind::fipo;
    ClipConfig clip;
    bool operator==(const LossConfig&) const = default;
};

struct TrainerConfig {
    int prompt_batch_size = 32;
    int group_size = 8;
    int minibatch_prompts = 8;
    int total_steps = 300;
    int eval_every = 10;
    int eval_instances = 64;
    int eval_samples = 16;
    std::uint64_t seed = 1;
    int resample_cap_factor = 20;
    int threads = 1;
    double stop_at_accuracy = 0.0;  // 0 disables early stopping
    int checkpoint_every = 0;       // 0 disables periodic checkpoints
    int dump_raw_step = -1;         // step whose raw tensors are written out; -1 disables
    bool operator==(const TrainerConfig&) const = default;
};

// Every tunable of a run, grouped the way the JSON file nests them.
struct RunConfig {
    PolicyConfig policy;
    EnvConfig env;
    SamplingSettings sampling;
    FutureKLConfig fipo;
    LossConfig loss;
    OptimizerConfig optim;
    TrainerConfig trainer;

    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);

// Strict: unknown keys and wrong types raise ConfigError naming the key.
// Missing keys keep their defaults.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

// Resolves `path`; when it does not exist and is relative, also tries
// $FIPO_CONFIG_DIR/path.
std::string resolve_config_path(const std::string& path);

// `key` is dotted ("fipo.tau"); `value` is parsed as JSON, falling back to a plain string.
void apply_override(RunConfig& cfg, std::string_view key, std::string_view value);

}  // namespace fipo
