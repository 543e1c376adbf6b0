#include "fipo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "fipo/errors.hpp"
#include "fipo/objective.hpp"

namespace fipo {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kShuffleStream = 0x5u;
constexpr std::uint64_t kEvalStream = 0xE7A1;

GenerationConfig rollout_generation(const RunConfig& cfg) {
    return {cfg.env.reward.max_response_len, cfg.sampling.rollout};
}

GenerationConfig eval_generation(const RunConfig& cfg) { return {cfg.env.reward.max_response_len, cfg.sampling.eval}; }

std::string rng_to_string(const Rng& rng) {
    std::ostringstream s;
    s << rng;
    return s.str();
}

Rng rng_from_string(const std::string& text) {
    Rng rng;
    std::istringstream s(text);
    s >> rng;
    if (!s) {
        throw CheckpointError("checkpoint: malformed RNG state");
    }
    return rng;
}

json eval_to_json(const EvalResult& e) {
    return {{"mean_at_k", e.mean_at_k},
            {"cons_at_k", e.cons_at_k},
            {"pass_at_k", e.pass_at_k},
            {"instances", e.instances},
            {"samples_per_instance", e.samples_per_instance}};
}

EvalResult eval_from_json(const json& j) {
    return {j.at("mean_at_k").get<double>(), j.at("cons_at_k").get<double>(), j.at("pass_at_k").get<double>(),
            j.at("instances").get<std::size_t>(), j.at("samples_per_instance").get<std::size_t>()};
}

std::vector<double> values_from_json(const json& j, std::size_t expected, const char* what) {
    auto v = j.get<std::vector<double>>();
    if (v.size() != expected) {
        throw CheckpointError(std::string("checkpoint: ") + what + " has " + std::to_string(v.size()) +
                              " entries, expected " + std::to_string(expected));
    }
    return v;
}

PolicyParams params_from_values(const PolicyShape& shape, std::vector<double> values) {
    PolicyParams p(shape);
    std::copy(values.begin(), values.end(), p.values().begin());
    return p;
}

// Mean over mini-batches.
struct Running {
    double sum = 0.0;
    std::size_t n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    double mean() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
};

}  // namespace

EvalResult score_samples(std::span<const TaskInstance> instances,
                         std::span<const std::vector<std::vector<int>>> responses) {
    if (instances.size() != responses.size()) {
        throw InputError("score_samples: one response set per instance required");
    }
    EvalResult r;
    r.instances = instances.size();
    if (instances.empty()) {
        return r;
    }
    std::size_t correct_samples = 0;
    std::size_t total_samples = 0;
    std::size_t consensus_hits = 0;
    std::size_t pass_hits = 0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto& task = instances[i];
        const auto& samples = responses[i];
        if (samples.empty()) {
            throw InputError("score_samples: instance without samples");
        }
        r.samples_per_instance = std::max(r.samples_per_instance, samples.size());
        std::map<std::vector<int>, std::size_t> votes;
        std::size_t correct_here = 0;
        for (const auto& resp : samples) {
            correct_here += static_cast<std::size_t>(verify(task, resp));
            const auto ans = extract_answer(task, resp);
            // unterminated responses share one bucket that never matches an answer
            votes[ans.terminated ? ans.tokens : std::vector<int>{-1}] += 1;
        }
        correct_samples += correct_here;
        total_samples += samples.size();
        pass_hits += correct_here > 0 ? 1 : 0;

        std::size_t top = 0;
        for (const auto& [ans, count] : votes) {
            top = std::max(top, count);
        }
        std::size_t winners = 0;
        bool answer_on_top = false;
        for (const auto& [ans, count] : votes) {
            if (count == top) {
                ++winners;
                answer_on_top = answer_on_top || ans == task.answer;
            }
        }
        consensus_hits += (winners == 1 && answer_on_top) ? 1 : 0;
    }
    const double n = static_cast<double>(instances.size());
    r.mean_at_k = static_cast<double>(correct_samples) / static_cast<double>(total_samples);
    r.cons_at_k = static_cast<double>(consensus_hits) / n;
    r.pass_at_k = static_cast<double>(pass_hits) / n;
    return r;
}

EvalResult evaluate(const PolicyParams& params, TaskFamily family, int difficulty, int n_instances,
                    int n_samples_per, const GenerationConfig& gen, Rng& rng) {
    if (n_samples_per < 1 || n_instances < 1) {
        throw InputError("evaluate: need at least one instance and one sample per instance");
    }
    std::vector<TaskInstance> instances;
    std::vector<std::vector<std::vector<int>>> responses(n_instances);
    instances.reserve(n_instances);
    for (int i = 0; i < n_instances; ++i) {
        instances.push_back(sample_task(family, difficulty, rng));
        for (int k = 0; k < n_samples_per; ++k) {
            responses[i].push_back(sample_response(params, instances.back().prompt, gen, rng).response);
        }
    }
    return score_samples(instances, responses);
}

TrainerState init_state(const RunConfig& cfg) {
    cfg.validate();
    TrainerState s;
    Rng init(derive_seed(cfg.trainer.seed, kInitStream));
    s.params = PolicyParams::random(cfg.policy.shape, init, cfg.policy.init_scale);
    s.ref_params = s.params;
    s.optimizer = OptimizerState::zeros(s.params.size());
    s.rng = Rng(derive_seed(cfg.trainer.seed, kShuffleStream));
    s.step = 0;
    return s;
}

StepMetrics train_step(TrainerState& state, const RunConfig& cfg, StepTrace* trace) {
    const auto& tc = cfg.trainer;
    StepMetrics metrics;
    metrics.step = state.step;

    // (1) frozen rollout snapshot
    const PolicyParams old_params = state.params;

    // (2) dynamic sampling
    RolloutStream::Options ro;
    ro.family = cfg.env.family;
    ro.difficulty = cfg.env.difficulty;
    ro.group_size = tc.group_size;
    ro.gen = rollout_generation(cfg);
    ro.reward = cfg.env.reward;
    ro.seed = tc.seed;
    ro.step = static_cast<std::uint64_t>(state.step);
    ro.wave_size = static_cast<std::size_t>(tc.prompt_batch_size);
    ro.threads = tc.threads;
    RolloutStream stream(old_params, ro);
    const auto pbs = static_cast<std::size_t>(tc.prompt_batch_size);
    const TrainBatch batch =
        dynamic_sample([&stream] { return stream.next(); }, pbs, pbs * static_cast<std::size_t>(tc.resample_cap_factor));

    // (3) shuffled partition into mini-batches
    std::vector<std::size_t> order(batch.groups.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[uniform_index(state.rng, i)]);
    }
    const auto mb_size = static_cast<std::size_t>(tc.minibatch_prompts);

    if (trace != nullptr) {
        trace->kept_groups = batch.groups.size();
        trace->sampled_groups = batch.sampled_groups;
        trace->partition.clear();
        trace->credit.clear();
        trace->max_abs_log_ratio.clear();
        trace->trajectory_lengths.clear();
        trace->raw = RawStepDump{};
        trace->raw.step = state.step;
        trace->raw.shape = cfg.policy.shape;
    }

    Running loss, kl, ent, gnorm, pclip, lclip, infl_mean, infl_clip, overflow, lr;

    // (4) one optimizer step per mini-batch
    for (std::size_t start = 0; start < order.size(); start += mb_size) {
        const std::size_t end = std::min(order.size(), start + mb_size);
        ForwardTape tape;
        std::vector<std::vector<double>> current;
        std::vector<std::vector<double>> reference;
        std::vector<const Trajectory*> trajs;
        std::vector<double> advs;
        for (std::size_t k = start; k < end; ++k) {
            const Group& g = batch.groups[order[k]];
            for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
                const Trajectory& t = g.trajectories[i];
                current.push_back(sequence_log_probs(state.params, g.task.prompt, t.response, &tape));
                if (cfg.loss.kind == LossKind::grpo && cfg.loss.clip.kl_beta > 0.0) {
                    reference.push_back(sequence_log_probs(state.ref_params, g.task.prompt, t.response));
                }
                trajs.push_back(&t);
                advs.push_back(g.advantages[i]);
            }
        }

        std::vector<CreditTensors> credit;
        if (cfg.loss.kind == LossKind::fipo) {
            credit.reserve(trajs.size());
            for (std::size_t n = 0; n < trajs.size(); ++n) {
                credit.push_back(build_credit(current[n], trajs[n]->old_log_probs, advs[n], cfg.fipo));
            }
        }
        std::vector<SequenceInput> inputs(trajs.size());
        for (std::size_t n = 0; n < trajs.size(); ++n) {
            inputs[n].current_lp = current[n];
            inputs[n].old_lp = trajs[n]->old_log_probs;
            inputs[n].advantage = advs[n];
            if (!credit.empty()) {
                inputs[n].credit = &credit[n];
            }
            if (!reference.empty()) {
                inputs[n].ref_lp = reference[n];
            }
        }

        LossResult result;
        switch (cfg.loss.kind) {
            case LossKind::grpo:
                result = grpo_loss(inputs, cfg.loss.clip);
                break;
            case LossKind::dapo:
                result = dapo_loss(inputs, cfg.loss.clip);
                break;
            case LossKind::fipo:
                result = fipo_loss(inputs, cfg.loss.clip, cfg.fipo);
                break;
        }
        if (!std::isfinite(result.report.loss)) {
            throw NumericError("train_step " + std::to_string(state.step) + ": non-finite loss in mini-batch " +
                               std::to_string(start / mb_size));
        }

        std::vector<double> seeds;
        seeds.reserve(tape.size());
        for (const auto& d : result.dlogp) {
            seeds.insert(seeds.end(), d.begin(), d.end());
        }
        const GradVector grad = backward(state.params, tape, seeds);

        if (trace != nullptr) {
            std::vector<std::size_t> groups(order.begin() + static_cast<std::ptrdiff_t>(start),
                                            order.begin() + static_cast<std::ptrdiff_t>(end));
            trace->partition.push_back(std::move(groups));
            std::vector<double> max_lr;
            for (std::size_t n = 0; n < trajs.size(); ++n) {
                double m = 0.0;
                for (std::size_t t = 0; t < current[n].size(); ++t) {
                    m = std::max(m, std::abs(current[n][t] - trajs[n]->old_log_probs[t]));
                }
                max_lr.push_back(m);
            }
            trace->max_abs_log_ratio.push_back(std::move(max_lr));
            trace->credit.push_back(credit);
            if (trace->want_raw) {
                RawMinibatch raw;
                raw.params.assign(state.params.values().begin(), state.params.values().end());
                for (const auto& node : tape.nodes()) {
                    raw.windows.push_back(node.window);
                }
                for (std::size_t n = 0; n < trajs.size(); ++n) {
                    raw.targets.insert(raw.targets.end(), trajs[n]->response.begin(), trajs[n]->response.end());
                    raw.current_lp.insert(raw.current_lp.end(), current[n].begin(), current[n].end());
                    raw.old_lp.insert(raw.old_lp.end(), trajs[n]->old_log_probs.begin(),
                                      trajs[n]->old_log_probs.end());
                }
                trace->raw.minibatches.push_back(std::move(raw));
            }
        }

        loss.add(result.report.loss);
        kl.add(result.report.policy_kl);
        ent.add(tape.mean_entropy());
        gnorm.add(grad.norm);
        pclip.add(result.report.policy_clip_fraction);
        lclip.add(result.report.low_clip_fraction);
        overflow.add(static_cast<double>(result.report.ratio_overflow));
        lr.add(warmup_lr(cfg.optim, state.optimizer.step));
        if (!credit.empty()) {
            std::vector<double> f;
            std::vector<double> raw;
            for (const auto& c : credit) {
                f.insert(f.end(), c.influence.f.begin(), c.influence.f.end());
                raw.insert(raw.end(), c.influence.raw.begin(), c.influence.raw.end());
            }
            const auto im = influence_metrics(f, raw, cfg.fipo);
            infl_mean.add(im.mean_weight);
            infl_clip.add(im.clip_fraction);
        } else {
            infl_mean.add(1.0);
            infl_clip.add(0.0);
        }

        optimizer_step(state.params, state.optimizer, grad, cfg.optim);
    }

    // (5) aggregation
    std::vector<double> lengths;
    std::vector<AdvantageView> views;
    double reward_sum = 0.0;
    double shaped_sum = 0.0;
    std::size_t truncated = 0;
    for (const auto& g : batch.groups) {
        for (const auto& t : g.trajectories) {
            lengths.push_back(static_cast<double>(t.length()));
            reward_sum += t.reward;
            shaped_sum += t.shaped_reward;
            truncated += t.truncated ? 1 : 0;
        }
        const auto v = g.advantage_views();
        views.insert(views.end(), v.begin(), v.end());
    }
    const double n_traj = static_cast<double>(lengths.size());
    metrics.reward_mean = reward_sum / n_traj;
    metrics.shaped_reward_mean = shaped_sum / n_traj;
    metrics.truncated_fraction = static_cast<double>(truncated) / n_traj;
    metrics.length_min = *std::min_element(lengths.begin(), lengths.end());
    metrics.length_max = *std::max_element(lengths.begin(), lengths.end());
    metrics.length_q25 = quantile(lengths, 0.25);
    metrics.length_median = quantile(lengths, 0.5);
    metrics.length_q75 = quantile(lengths, 0.75);
    metrics.length_mean = std::accumulate(lengths.begin(), lengths.end(), 0.0) / n_traj;
    metrics.loss = loss.mean();
    metrics.policy_kl = kl.mean();
    metrics.entropy = ent.mean();
    metrics.grad_norm = gnorm.mean();
    metrics.policy_clip_fraction = pclip.mean();
    metrics.low_clip_fraction = lclip.mean();
    metrics.influence_mean = infl_mean.mean();
    metrics.influence_clip_fraction = infl_clip.mean();
    metrics.ratio_overflow = overflow.mean();
    metrics.lr = lr.mean();
    metrics.adv_length_weighted_mean = length_weighted_mean_advantage(views);
    metrics.sampled_batches = batch.sampled_ratio();

    if (tc.eval_every > 0 && ((state.step + 1) % tc.eval_every == 0 || state.step + 1 == tc.total_steps)) {
        Rng eval_rng(derive_seed(tc.seed, kEvalStream, static_cast<std::uint64_t>(state.step)));
        state.last_eval = evaluate(state.params, cfg.env.family, cfg.env.difficulty, tc.eval_instances,
                                   tc.eval_samples, eval_generation(cfg), eval_rng);
        metrics.eval_ran = true;
    }
    metrics.eval_mean_at_k = state.last_eval.mean_at_k;
    metrics.eval_cons_at_k = state.last_eval.cons_at_k;
    metrics.eval_pass_at_k = state.last_eval.pass_at_k;

    if (trace != nullptr) {
        for (const double l : lengths) {
            trace->trajectory_lengths.push_back(static_cast<std::size_t>(l));
        }
        trace->raw.advantages = views;
        trace->raw.metrics = metrics;
    }
    state.step += 1;
    return metrics;
}

json to_json(const RawStepDump& d) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["step"] = d.step;
    j["shape"] = {{"vocab_size", d.shape.vocab_size},
                  {"d_emb", d.shape.d_emb},
                  {"window", d.shape.window},
                  {"d_hidden", d.shape.d_hidden}};
    j["minibatches"] = json::array();
    for (const auto& mb : d.minibatches) {
        j["minibatches"].push_back(
            {{"params", mb.params},
             {"windows", mb.windows},
             {"targets", mb.targets},
             {"current_lp", mb.current_lp},
             {"old_lp", mb.old_lp}});
    }
    j["advantages"] = json::array();
    for (const auto& v : d.advantages) {
        j["advantages"].push_back({{"advantage", v.advantage}, {"length", v.length}});
    }
    j["metrics"] = json::parse(to_json(d.metrics).dump());
    return j;
}

RawStepDump raw_dump_from_json(const json& j) {
    RawStepDump d;
    try {
        d.step = j.at("step").get<std::int64_t>();
        const auto& s = j.at("shape");
        d.shape = {s.at("vocab_size").get<int>(), s.at("d_emb").get<int>(), s.at("window").get<int>(),
                   s.at("d_hidden").get<int>()};
        for (const auto& mb : j.at("minibatches")) {
            d.minibatches.push_back({mb.at("params").get<std::vector<double>>(),
                                     mb.at("windows").get<std::vector<std::vector<int>>>(),
                                     mb.at("targets").get<std::vector<int>>(),
                                     mb.at("current_lp").get<std::vector<double>>(),
                                     mb.at("old_lp").get<std::vector<double>>()});
        }
        for (const auto& v : j.at("advantages")) {
            d.advantages.push_back({v.at("advantage").get<double>(), v.at("length").get<std::size_t>()});
        }
        d.metrics = metrics_from_json(j.at("metrics"));
    } catch (const json::exception& e) {
        throw InputError(std::string("raw step dump: ") + e.what());
    }
    return d;
}

void save_checkpoint(const std::string& path, const TrainerState& state, const RunConfig& cfg) {
    ordered_json j;
    j["format"] = "fipo-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = to_json(cfg);
    j["step"] = state.step;
    j["params"] = std::vector<double>(state.params.values().begin(), state.params.values().end());
    j["ref_params"] = std::vector<double>(state.ref_params.values().begin(), state.ref_params.values().end());
    j["optimizer"] = {{"m", state.optimizer.m}, {"v", state.optimizer.v}, {"step", state.optimizer.step}};
    j["rng"] = rng_to_string(state.rng);
    j["last_eval"] = eval_to_json(state.last_eval);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw CheckpointError("cannot write checkpoint '" + path + "'");
        }
        out << j.dump() << '\n';
        if (!out) {
            throw CheckpointError("failed while writing checkpoint '" + path + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw CheckpointError("cannot open checkpoint '" + path + "'");
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw CheckpointError("checkpoint '" + path + "' is corrupt or truncated: " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "fipo-checkpoint") {
            throw CheckpointError("checkpoint '" + path + "': unknown format");
        }
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw CheckpointError("checkpoint '" + path + "': version " + std::to_string(version) +
                                  " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
        }
        LoadedCheckpoint out;
        out.config = config_from_json(j.at("config"));
        const PolicyShape& shape = out.config.policy.shape;
        const std::size_t n = shape.param_count();
        out.state.params = params_from_values(shape, values_from_json(j.at("params"), n, "params"));
        out.state.ref_params = params_from_values(shape, values_from_json(j.at("ref_params"), n, "ref_params"));
        const auto& opt = j.at("optimizer");
        out.state.optimizer.m = values_from_json(opt.at("m"), n, "optimizer.m");
        out.state.optimizer.v = values_from_json(opt.at("v"), n, "optimizer.v");
        out.state.optimizer.step = opt.at("step").get<std::int64_t>();
        out.state.rng = rng_from_string(j.at("rng").get<std::string>());
        out.state.step = j.at("step").get<std::int64_t>();
        out.state.last_eval = eval_from_json(j.at("last_eval"));
        if (!out.state.params.all_finite() || out.state.step < 0 || out.state.optimizer.step < 0) {
            throw CheckpointError("checkpoint '" + path + "': invalid state values");
        }
        return out;
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint '" + path + "' is missing fields: " + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError("checkpoint '" + path + "' has an invalid config: " + e.what());
    }
}

ordered_json to_json(const RunSummary& s) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["loss_kind"] = s.loss_kind;
    j["steps_run"] = s.steps_run;
    j["peak_eval_mean_at_k"] = s.peak_eval_mean_at_k;
    j["peak_eval_step"] = s.peak_eval_step;
    j["final_eval_mean_at_k"] = s.final_eval_mean_at_k;
    j["final_eval_cons_at_k"] = s.final_eval_cons_at_k;
    j["final_eval_pass_at_k"] = s.final_eval_pass_at_k;
    j["mean_response_length"] = s.mean_response_length;
    j["mean_entropy"] = s.mean_entropy;
    j["reached_target"] = s.reached_target;
    j["wall_seconds"] = s.wall_seconds;
    j["param_count"] = s.param_count;
    return j;
}

RunSummary run_training(const RunConfig& cfg, const RunOptions& options) {
    namespace fs = std::filesystem;
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    TrainerState state;
    if (options.resume) {
        auto loaded = load_checkpoint(*options.resume);
        if (!(loaded.config.policy == cfg.policy)) {
            throw CheckpointError("checkpoint policy shape does not match the run config");
        }
        state = std::move(loaded.state);
    } else {
        state = init_state(cfg);
    }

    const bool write_files = !options.out_dir.empty();
    std::ofstream metrics_file;
    if (write_files) {
        fs::create_directories(options.out_dir);
        const auto mode = options.resume ? std::ios::app : std::ios::trunc;
        metrics_file.open(fs::path(options.out_dir) / "metrics.jsonl", std::ios::out | mode);
        if (!metrics_file) {
            throw std::runtime_error("cannot open metrics.jsonl in '" + options.out_dir + "'");
        }
    }
    MetricsWriter writer(metrics_file);

    RunSummary summary;
    summary.loss_kind = std::string(to_string(cfg.loss.kind));
    summary.param_count = state.params.size();
    double length_sum = 0.0;
    double entropy_sum = 0.0;

    while (state.step < cfg.trainer.total_steps) {
        StepTrace trace;
        const bool dump_raw = write_files && state.step == cfg.trainer.dump_raw_step;
        trace.want_raw = dump_raw;
        StepMetrics m;
        try {
            m = train_step(state, cfg, dump_raw ? &trace : nullptr);
        } catch (const NumericError&) {
            if (write_files) {
                save_checkpoint((fs::path(options.out_dir) / "crash_state.json").string(), state, cfg);
            }
            throw;
        }
        if (write_files) {
            writer.write(m);
            if (dump_raw) {
                std::ofstream raw(fs::path(options.out_dir) / ("raw_step_" + std::to_string(m.step) + ".json"));
                raw << to_json(trace.raw).dump() << '\n';
            }
            if (cfg.trainer.checkpoint_every > 0 && state.step % cfg.trainer.checkpoint_every == 0) {
                save_checkpoint(
                    (fs::path(options.out_dir) / ("checkpoint_step" + std::to_string(state.step) + ".json")).string(),
                    state, cfg);
            }
        }
        if (options.on_step) {
            options.on_step(m);
        }

        summary.steps_run += 1;
        length_sum += m.length_mean;
        entropy_sum += m.entropy;
        if (m.eval_ran) {
            if (summary.peak_eval_step < 0 || m.eval_mean_at_k > summary.peak_eval_mean_at_k) {
                summary.peak_eval_mean_at_k = m.eval_mean_at_k;
                summary.peak_eval_step = m.step;
            }
            if (cfg.trainer.stop_at_accuracy > 0.0 && m.eval_mean_at_k >= cfg.trainer.stop_at_accuracy) {
                summary.reached_target = true;
                break;
            }
        }
    }

    summary.final_eval_mean_at_k = state.last_eval.mean_at_k;
    summary.final_eval_cons_at_k = state.last_eval.cons_at_k;
    summary.final_eval_pass_at_k = state.last_eval.pass_at_k;
    if (summary.steps_run > 0) {
        summary.mean_response_length = length_sum / static_cast<double>(summary.steps_run);
        summary.mean_entropy = entropy_sum / static_cast<double>(summary.steps_run);
    }
    if (cfg.trainer.stop_at_accuracy > 0.0 && summary.peak_eval_mean_at_k >= cfg.trainer.stop_at_accuracy) {
        summary.reached_target = true;
    }
    summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (write_files) {
        save_checkpoint((fs::path(options.out_dir) / "checkpoint_final.json").string(), state, cfg);
        std::ofstream out(fs::path(options.out_dir) / "summary.json");
        out << to_json(summary).dump(2) << '\n';
    }
    return summary;
}

}  // namespace fipo
