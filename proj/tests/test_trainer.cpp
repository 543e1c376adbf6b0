#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fipo/errors.hpp"
#include "fipo/trainer.hpp"

using namespace fipo;
using namespace fipo::tokens;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("fipo_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

RunConfig tiny_config(LossKind kind) {
    RunConfig c;
    c.loss.kind = kind;
    c.policy.shape.d_hidden = 24;
    c.trainer.prompt_batch_size = 4;
    c.trainer.group_size = 4;
    c.trainer.minibatch_prompts = 2;
    c.trainer.total_steps = 4;
    c.trainer.eval_every = 2;
    c.trainer.eval_instances = 4;
    c.trainer.eval_samples = 3;
    c.trainer.seed = 17;
    c.trainer.resample_cap_factor = 100;
    return c;
}

TaskInstance modsum_task(int a, int b) {
    TaskInstance t;
    t.prompt = {digit(a), kPlus, digit(b), kEquals};
    t.answer = {digit((a + b) % 10)};
    return t;
}

}  // namespace

TEST_CASE("eval scoring against a counting oracle") {
    const std::vector<TaskInstance> tasks{modsum_task(1, 2), modsum_task(4, 4), modsum_task(9, 9)};
    const std::vector<int> right0{digit(3), kEos};
    const std::vector<int> wrong0{digit(5), kEos};
    const std::vector<int> right1{digit(8), kEos};
    const std::vector<int> wrong1{digit(2), kEos};
    const std::vector<int> cut{digit(8)};  // never terminated
    const std::vector<std::vector<std::vector<int>>> responses{
        {right0, right0, wrong0, wrong0},  // tie at the top: consensus miss, pass hit
        {right1, wrong1, cut, cut},        // unterminated bucket wins: consensus miss
        {wrong1, wrong1, wrong1, wrong0},  // nothing correct
    };
    const EvalResult r = score_samples(tasks, responses);
    CHECK(r.instances == 3);
    CHECK(r.samples_per_instance == 4);
    CHECK(r.mean_at_k == doctest::Approx(3.0 / 12.0));
    CHECK(r.cons_at_k == 0.0);
    CHECK(r.pass_at_k == doctest::Approx(2.0 / 3.0));

    const std::vector<std::vector<std::vector<int>>> majority{
        {right0, right0, wrong0}, {right1, right1, right1}, {wrong0, wrong0, wrong1}};
    const EvalResult m = score_samples(tasks, majority);
    CHECK(m.cons_at_k == doctest::Approx(2.0 / 3.0));
    CHECK(m.mean_at_k == doctest::Approx(5.0 / 9.0));
    CHECK(m.pass_at_k == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("eval scoring property: cons <= pass and mean <= pass") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<TaskInstance> tasks;
        std::vector<std::vector<std::vector<int>>> responses;
        for (int i = 0; i < 5; ++i) {
            tasks.push_back(modsum_task(static_cast<int>(uniform_index(rng, 10)), static_cast<int>(uniform_index(rng, 10))));
            std::vector<std::vector<int>> s;
            for (int k = 0; k < 6; ++k) {
                s.push_back({digit(static_cast<int>(uniform_index(rng, 3))), kEos});
            }
            responses.push_back(s);
        }
        const EvalResult r = score_samples(tasks, responses);
        REQUIRE(r.cons_at_k <= r.pass_at_k);
        REQUIRE(r.mean_at_k <= r.pass_at_k);
    }
}

TEST_CASE("first mini-batch sees current == old: zero FutureKL and unit influence") {
    const RunConfig cfg = tiny_config(LossKind::fipo);
    TrainerState st = init_state(cfg);
    StepTrace trace;
    train_step(st, cfg, &trace);
    REQUIRE(trace.credit.size() == 2);
    for (const auto& c : trace.credit.front()) {
        for (std::size_t t = 0; t < c.future_kl.size(); ++t) {
            REQUIRE(c.future_kl[t] == 0.0);
            REQUIRE(c.influence.f[t] == 1.0);
        }
    }
    for (double m : trace.max_abs_log_ratio.front()) CHECK(m == 0.0);
    // later mini-batches run on updated params
    double moved = 0.0;
    for (double m : trace.max_abs_log_ratio.back()) moved = std::max(moved, m);
    CHECK(moved > 0.0);
    CHECK(trace.kept_groups == 4);
    CHECK(trace.partition.size() == 2);
    CHECK(trace.partition[0].size() == 2);
}

TEST_CASE("kept groups carry raw reward variance and standardized advantages") {
    const RunConfig cfg = tiny_config(LossKind::dapo);
    TrainerState st = init_state(cfg);
    for (int s = 0; s < 2; ++s) {
        const StepMetrics m = train_step(st, cfg);
        CHECK(m.sampled_batches >= 1.0);
        CHECK(m.all_finite());
        CHECK(m.policy_clip_fraction >= 0.0);
        CHECK(m.policy_clip_fraction <= 1.0);
        CHECK(m.length_min <= m.length_q25);
        CHECK(m.length_q25 <= m.length_median);
        CHECK(m.length_median <= m.length_q75);
        CHECK(m.length_q75 <= m.length_max);
    }
}

TEST_CASE("training is deterministic and independent of thread count") {
    const fs::path a = temp_dir("det_a");
    const fs::path b = temp_dir("det_b");
    const fs::path c = temp_dir("det_c");
    RunConfig cfg = tiny_config(LossKind::fipo);
    run_training(cfg, {a.string(), std::nullopt, {}});
    run_training(cfg, {b.string(), std::nullopt, {}});
    cfg.trainer.threads = 3;
    run_training(cfg, {c.string(), std::nullopt, {}});
    const std::string ma = slurp(a / "metrics.jsonl");
    CHECK(!ma.empty());
    CHECK(ma == slurp(b / "metrics.jsonl"));
    CHECK(ma == slurp(c / "metrics.jsonl"));
    CHECK(load_checkpoint((a / "checkpoint_final.json").string()).state ==
          load_checkpoint((b / "checkpoint_final.json").string()).state);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted stream") {
    const fs::path full = temp_dir("resume_full");
    const fs::path part = temp_dir("resume_part");
    RunConfig cfg = tiny_config(LossKind::fipo);
    cfg.trainer.checkpoint_every = 2;
    run_training(cfg, {full.string(), std::nullopt, {}});

    RunConfig first = cfg;
    first.trainer.total_steps = 2;
    run_training(first, {part.string(), std::nullopt, {}});
    run_training(cfg, {part.string(), (part / "checkpoint_step2.json").string(), {}});
    CHECK(slurp(full / "metrics.jsonl") == slurp(part / "metrics.jsonl"));
}

TEST_CASE("checkpoint round trip and corruption handling") {
    const fs::path dir = temp_dir("ckpt");
    const RunConfig cfg = tiny_config(LossKind::grpo);
    TrainerState st = init_state(cfg);
    train_step(st, cfg);
    const std::string path = (dir / "ck.json").string();
    save_checkpoint(path, st, cfg);
    const LoadedCheckpoint back = load_checkpoint(path);
    CHECK(back.state == st);
    CHECK(back.config == cfg);

    const std::string text = slurp(path);
    std::ofstream(dir / "trunc.json") << text.substr(0, text.size() / 2);
    CHECK_THROWS_AS(load_checkpoint((dir / "trunc.json").string()), CheckpointError);

    auto j = nlohmann::json::parse(text);
    j["version"] = 99;
    std::ofstream(dir / "ver.json") << j.dump();
    CHECK_THROWS_AS(load_checkpoint((dir / "ver.json").string()), CheckpointError);

    j = nlohmann::json::parse(text);
    j["params"].erase(j["params"].begin());
    std::ofstream(dir / "short.json") << j.dump();
    CHECK_THROWS_AS(load_checkpoint((dir / "short.json").string()), CheckpointError);

    CHECK_THROWS_AS(load_checkpoint((dir / "missing.json").string()), CheckpointError);
}

TEST_CASE("raw step dump round-trips through JSON") {
    const RunConfig cfg = tiny_config(LossKind::fipo);
    TrainerState st = init_state(cfg);
    StepTrace trace;
    trace.want_raw = true;
    train_step(st, cfg, &trace);
    REQUIRE(trace.raw.minibatches.size() == 2);
    const RawStepDump back = raw_dump_from_json(nlohmann::json::parse(to_json(trace.raw).dump()));
    CHECK(back.metrics == trace.raw.metrics);
    CHECK(back.minibatches.size() == 2);
    CHECK(back.minibatches[1].current_lp == trace.raw.minibatches[1].current_lp);
    CHECK(back.minibatches[1].params == trace.raw.minibatches[1].params);
    CHECK(back.advantages.size() == trace.raw.advantages.size());
}

TEST_CASE("run summary and output files") {
    const fs::path dir = temp_dir("summary");
    RunConfig cfg = tiny_config(LossKind::dapo);
    cfg.trainer.dump_raw_step = 1;
    const RunSummary s = run_training(cfg, {dir.string(), std::nullopt, {}});
    CHECK(s.loss_kind == "dapo");
    CHECK(s.steps_run == 4);
    CHECK(s.peak_eval_step >= 0);
    CHECK(fs::exists(dir / "summary.json"));
    CHECK(fs::exists(dir / "raw_step_1.json"));
    CHECK(fs::exists(dir / "checkpoint_final.json"));
    const auto j = nlohmann::json::parse(slurp(dir / "summary.json"));
    CHECK(j["loss_kind"] == "dapo");
    CHECK(j.contains("schema_version"));
}
