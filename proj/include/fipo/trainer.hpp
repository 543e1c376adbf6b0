#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fipo/advantage.hpp"
#include "fipo/config.hpp"
#include "fipo/future_kl.hpp"
#include "fipo/metrics.hpp"
#include "fipo/rollout.hpp"

namespace fipo {

struct EvalResult {
    double mean_at_k = 0.0;
    double cons_at_k = 0.0;
    double pass_at_k = 0.0;
    std::size_t instances = 0;
    std::size_t samples_per_instance = 0;
    bool operator==(const EvalResult&) const = default;
};

// mean@k = mean verifier score; cons@k = accuracy of each instance's majority answer,
// a tie at the top counting as incorrect; pass@k = share of instances with any correct sample.
// responses[i] holds the k sampled responses for instances[i].
EvalResult score_samples(std::span<const TaskInstance> instances,
                         std::span<const std::vector<std::vector<int>>> responses);

EvalResult evaluate(const PolicyParams& params, TaskFamily family, int difficulty, int n_instances,
                    int n_samples_per, const GenerationConfig& gen, Rng& rng);

struct TrainerState {
    PolicyParams params;
    PolicyParams ref_params;  // frozen initial policy for the optional KL penalty
    OptimizerState optimizer;
    Rng rng;  // mini-batch shuffling
    std::int64_t step = 0;
    EvalResult last_eval;

    bool operator==(const TrainerState&) const = default;
};

TrainerState init_state(const RunConfig& cfg);

// Raw tensors of one step, enough to recompute the logged policy KL, entropy and
// length-weighted mean advantage independently of the training code path.
struct RawMinibatch {
    std::vector<double> params;  // values the mini-batch forward pass used
    std::vector<std::vector<int>> windows;
    std::vector<int> targets;  // token scored at each window
    std::vector<double> current_lp;
    std::vector<double> old_lp;
};

struct RawStepDump {
    std::int64_t step = 0;
    PolicyShape shape;
    std::vector<RawMinibatch> minibatches;
    std::vector<AdvantageView> advantages;
    StepMetrics metrics;
};

nlohmann::json to_json(const RawStepDump& dump);
RawStepDump raw_dump_from_json(const nlohmann::json& j);

// Optional per-step introspection for tests and tooling.
struct StepTrace {
    std::size_t kept_groups = 0;
    std::size_t sampled_groups = 0;
    std::vector<std::vector<std::size_t>> partition;  // kept-group indices per mini-batch
    std::vector<std::vector<CreditTensors>> credit;   // per mini-batch, per trajectory
    std::vector<std::vector<double>> max_abs_log_ratio;
    std::vector<std::size_t> trajectory_lengths;
    bool want_raw = false;
    RawStepDump raw;
};

// rollout under a frozen snapshot -> dynamic sampling -> shuffled mini-batches ->
// one optimizer step per mini-batch -> optional evaluation.
StepMetrics train_step(TrainerState& state, const RunConfig& cfg, StepTrace* trace = nullptr);

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const TrainerState& state, const RunConfig& cfg);

struct LoadedCheckpoint {
    TrainerState state;
    RunConfig config;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

struct RunSummary {
    std::string loss_kind;
    std::int64_t steps_run = 0;
    double peak_eval_mean_at_k = 0.0;
    std::int64_t peak_eval_step = -1;
    double final_eval_mean_at_k = 0.0;
    double final_eval_cons_at_k = 0.0;
    double final_eval_pass_at_k = 0.0;
    double mean_response_length = 0.0;
    double mean_entropy = 0.0;
    bool reached_target = false;
    double wall_seconds = 0.0;
    std::size_t param_count = 0;
};

nlohmann::ordered_json to_json(const RunSummary& s);

struct RunOptions {
    std::string out_dir;              // metrics.jsonl, summary.json, checkpoints; empty = no files
    std::optional<std::string> resume;  // checkpoint to continue from
    std::function<void(const StepMetrics&)> on_step;
};

// Runs until trainer.total_steps (or early stop). A non-finite loss writes
// crash_state.json to out_dir before the NumericError propagates.
RunSummary run_training(const RunConfig& cfg, const RunOptions& options);

}  // namespace fipo
