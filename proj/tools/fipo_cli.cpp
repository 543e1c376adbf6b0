#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fipo/ablate.hpp"
#include "fipo/checks.hpp"
#include "fipo/config.hpp"
#include "fipo/errors.hpp"
#include "fipo/metrics.hpp"
#include "fipo/plot.hpp"
#include "fipo/trainer.hpp"

namespace fs = std::filesystem;
using namespace fipo;

namespace {

enum Exit { kOk = 0, kValidation = 1, kRuntime = 2, kAcceptance = 3 };

const std::vector<std::string> kTrainPlotKeys = {"reward/mean",        "response_length/mean", "actor/policy_kl",
                                                 "actor/entropy",      "actor/grad_norm",      "actor/low_clip_fraction",
                                                 "actor/pg_clip_fraction", "eval/mean_at_k"};

// Config source shared by the subcommands: file (or defaults), then named flags, then --set.
struct ConfigFlags {
    std::string path;
    std::vector<std::string> sets;
    std::string loss;
    std::int64_t seed = -1;
    int steps = -1;

    void attach(CLI::App* app, bool training_flags) {
        app->add_option("--config", path, "run config JSON (relative paths also searched in $FIPO_CONFIG_DIR)");
        app->add_option("--set", sets, "override a config key, e.g. --set fipo.tau=128");
        app->add_option("--loss", loss, "loss.kind: grpo | dapo | fipo");
        if (training_flags) {
            app->add_option("--seed", seed, "trainer.seed");
            app->add_option("--steps", steps, "trainer.total_steps");
        }
    }

    RunConfig build() const {
        RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
        if (!loss.empty()) {
            apply_override(cfg, "loss.kind", loss);
        }
        if (seed >= 0) {
            cfg.trainer.seed = static_cast<std::uint64_t>(seed);
        }
        if (steps >= 0) {
            cfg.trainer.total_steps = steps;
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw ConfigError("--set '" + s + "': expected key=value");
            }
            apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
        }
        cfg.validate();
        return cfg;
    }
};

void print_step(const StepMetrics& m) {
    std::printf("step %4lld  reward %.3f  len %.2f  kl %+.2e  ent %.3f  gnorm %.3f", static_cast<long long>(m.step),
                m.reward_mean, m.length_mean, m.policy_kl, m.entropy, m.grad_norm);
    if (m.eval_ran) {
        std::printf("  eval mean@k %.3f cons@k %.3f", m.eval_mean_at_k, m.eval_cons_at_k);
    }
    std::printf("\n");
    std::fflush(stdout);
}

// One SVG per key plus metrics.csv; unknown keys raise InputError listing what exists.
void write_plots(const std::vector<nlohmann::json>& records, const std::vector<std::string>& keys,
                 const fs::path& out_dir) {
    if (records.empty()) {
        throw InputError("metrics stream is empty");
    }
    std::vector<std::string> canon;
    for (const auto& k : keys) {
        const std::string c = canonical_metric_key(k);
        if (!records.front().contains(c)) {
            std::string avail;
            for (const auto& [name, _] : records.front().items()) {
                avail += "\n  " + name;
            }
            throw InputError("unknown metric key '" + k + "'; available keys:" + avail);
        }
        canon.push_back(c);
    }
    fs::create_directories(out_dir);
    for (const auto& c : canon) {
        std::string file = c;
        std::replace(file.begin(), file.end(), '/', '.');
        std::ofstream svg(out_dir / (file + ".svg"));
        svg << render_svg(extract_series(records, c));
    }
    std::vector<std::string> columns{"step"};
    columns.insert(columns.end(), canon.begin(), canon.end());
    std::ofstream csv(out_dir / "metrics.csv");
    write_csv(csv, records, columns);
}

int cmd_train(const ConfigFlags& flags, const std::string& out, const std::string& resume, bool quiet) {
    const RunConfig cfg = flags.build();
    RunOptions opts;
    opts.out_dir = out;
    if (!resume.empty()) {
        opts.resume = resume;
    }
    if (!quiet) {
        opts.on_step = print_step;
    }
    fs::create_directories(out);
    {
        std::ofstream f(fs::path(out) / "config.json");
        f << to_json(cfg).dump(2) << '\n';
    }
    const RunSummary s = run_training(cfg, opts);
    write_plots(read_jsonl((fs::path(out) / "metrics.jsonl").string()), kTrainPlotKeys, fs::path(out) / "plots");
    std::cout << to_json(s).dump(2) << '\n';
    return kOk;
}

int cmd_eval(const ConfigFlags& flags, const std::string& checkpoint, int instances, int samples) {
    RunConfig cfg = flags.build();
    PolicyParams params;
    if (!checkpoint.empty()) {
        LoadedCheckpoint ck = load_checkpoint(checkpoint);
        params = std::move(ck.state.params);
        if (flags.path.empty()) {
            cfg = ck.config;
        }
    } else {
        params = init_state(cfg).params;
    }
    Rng rng(derive_seed(cfg.trainer.seed, 0xE7A1, 0));
    const EvalResult r = evaluate(params, cfg.env.family, cfg.env.difficulty,
                                  instances > 0 ? instances : cfg.trainer.eval_instances,
                                  samples > 0 ? samples : cfg.trainer.eval_samples,
                                  {cfg.env.reward.max_response_len, cfg.sampling.eval}, rng);
    nlohmann::ordered_json j{{"schema_version", kSchemaVersion},
                             {"mean_at_k", r.mean_at_k},
                             {"cons_at_k", r.cons_at_k},
                             {"pass_at_k", r.pass_at_k},
                             {"instances", r.instances},
                             {"k", r.samples_per_instance}};
    std::cout << j.dump(2) << '\n';
    return kOk;
}

int cmd_grad_check(const ConfigFlags& flags, bool all, const GradCheckOptions& opts, double tol) {
    const RunConfig cfg = flags.build();
    std::vector<LossKind> kinds{cfg.loss.kind};
    if (all) {
        kinds = {LossKind::grpo, LossKind::dapo, LossKind::fipo};
    }
    bool ok = true;
    for (const LossKind k : kinds) {
        RunConfig c = cfg;
        c.loss.kind = k;
        const GradCheckResult r = grad_check(c, k, opts);
        const bool pass = r.max_rel_error <= tol;
        ok = ok && pass;
        std::printf("%s: coords %zu  max_rel_err %.3e  max_abs_err %.3e  loss %.6f  %s\n",
                    std::string(to_string(k)).c_str(), r.coordinates, r.max_rel_error, r.max_abs_error, r.loss,
                    pass ? "PASS" : "FAIL");
    }
    return ok ? kOk : kAcceptance;
}

int cmd_oracle_check(const OracleSweepOptions& opts, double tol) {
    const OracleSweepResult r = oracle_sweep(opts);
    const bool pass = r.max_abs_deviation <= tol;
    std::printf("cases %zu  max_dev %.3e  recursion_residual %.3e  %.2fs  %s\n", r.cases, r.max_abs_deviation,
                r.max_recursion_residual, r.seconds, pass ? "PASS" : "FAIL");
    return pass ? kOk : kAcceptance;
}

int cmd_ablate(const ConfigFlags& flags, const std::string& axis_name, const std::string& values,
               const std::string& out, bool quiet) {
    const RunConfig base = flags.build();
    const AblationAxis axis = parse_ablation_axis(axis_name);
    AblationOptions opts;
    opts.out_dir = out;
    if (!quiet) {
        opts.on_step = [](const std::string& v, const StepMetrics& m) {
            std::printf("[%s] ", v.c_str());
            print_step(m);
        };
    }
    const auto rows = run_ablation(base, axis, split_values(values), opts);
    write_ablation_csv(std::cout, axis, rows);
    return kOk;
}

int cmd_plot(const std::string& metrics, const std::string& keys, const std::string& out) {
    if (!fs::exists(metrics)) {
        throw InputError("metrics file not found: " + metrics);
    }
    write_plots(read_jsonl(metrics), split_values(keys), out);
    return kOk;
}

int cmd_dump_tasks(const std::string& family, int difficulty, int count, std::uint64_t seed, const std::string& out) {
    if (count < 0) {
        throw InputError("--count must be >= 0");
    }
    Rng rng(seed);
    std::ofstream file;
    if (!out.empty()) {
        file.open(out);
        if (!file) {
            throw std::runtime_error("cannot open '" + out + "'");
        }
    }
    std::ostream& os = out.empty() ? std::cout : file;
    for (int i = 0; i < count; ++i) {
        const TaskInstance t = sample_task(family, difficulty, rng);
        nlohmann::ordered_json j{{"schema_version", kSchemaVersion},
                                 {"family", std::string(to_string(t.family))},
                                 {"difficulty", t.difficulty},
                                 {"prompt", t.prompt},
                                 {"answer", t.answer}};
        os << j.dump() << '\n';
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FIPO / DAPO / GRPO desk-scale trainer"};
    app.require_subcommand(1);

    ConfigFlags train_flags;
    std::string train_out = "runs/train";
    std::string resume;
    bool quiet = false;
    auto* train = app.add_subcommand("train", "run a training job");
    train_flags.attach(train, true);
    train->add_option("--out", train_out, "output directory");
    train->add_option("--resume", resume, "checkpoint to continue from");
    train->add_flag("--quiet", quiet, "no per-step console output");

    ConfigFlags eval_flags;
    std::string checkpoint;
    int eval_instances = 0;
    int eval_samples = 0;
    auto* eval = app.add_subcommand("eval", "score a checkpoint (or the initial policy) with mean/cons/pass@k");
    eval_flags.attach(eval, true);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file");
    eval->add_option("--instances", eval_instances, "eval instances (default trainer.eval_instances)");
    eval->add_option("--samples", eval_samples, "samples per instance (default trainer.eval_samples)");

    ConfigFlags gc_flags;
    GradCheckOptions gc_opts;
    bool gc_all = false;
    double gc_tol = 1e-4;
    auto* gc = app.add_subcommand("grad-check", "finite-difference audit of the configured loss");
    gc_flags.attach(gc, false);
    gc->add_flag("--all", gc_all, "audit grpo, dapo and fipo");
    gc->add_option("--coords", gc_opts.coordinates, "parameter coordinates to probe");
    gc->add_option("--fd-step", gc_opts.step, "central-difference step");
    gc->add_option("--check-seed", gc_opts.seed, "probe seed");
    gc->add_option("--tol", gc_tol, "max relative error");

    OracleSweepOptions oc_opts;
    double oc_tol = 1e-9;
    auto* oc = app.add_subcommand("oracle-check", "chunked vs. naive Future-KL sweep");
    oc->add_option("--cases", oc_opts.cases, "random cases");
    oc->add_option("--max-rows", oc_opts.max_rows, "max batch rows");
    oc->add_option("--max-length", oc_opts.max_length, "max sequence length")->check(CLI::PositiveNumber);
    oc->add_option("--seed", oc_opts.seed, "sweep seed");
    oc->add_flag("--inject-fault", oc_opts.inject_fault, "corrupt one chunked output (test hook)");
    oc->add_option("--tol", oc_tol, "max absolute deviation");

    ConfigFlags ab_flags;
    std::string ab_axis;
    std::string ab_values;
    std::string ab_out = "runs/ablate";
    bool ab_quiet = false;
    auto* ab = app.add_subcommand("ablate", "one training run per value of an ablation axis");
    ab_flags.attach(ab, true);
    ab->add_option("axis", ab_axis, "tau | f_clip | filtering | clip_high")->required();
    ab->add_option("values", ab_values, "comma-separated values, e.g. 8,32,128,256")->required();
    ab->add_option("--out", ab_out, "output directory");
    ab->add_flag("--quiet", ab_quiet, "no per-step console output");

    std::string plot_metrics;
    std::string plot_keys = "response_length/mean";
    std::string plot_out = "plots";
    auto* plot = app.add_subcommand("plot", "SVG charts and a CSV from metrics.jsonl");
    plot->add_option("metrics", plot_metrics, "metrics.jsonl")->required();
    plot->add_option("--keys", plot_keys, "comma-separated metric keys ('.' or '/' separated)");
    plot->add_option("--out", plot_out, "output directory");

    ConfigFlags pc_flags;
    auto* pc = app.add_subcommand("print-config", "print the effective config as JSON");
    pc_flags.attach(pc, true);

    std::string dt_family = "modsum";
    int dt_difficulty = 1;
    int dt_count = 10;
    std::uint64_t dt_seed = 1;
    std::string dt_out;
    auto* dt = app.add_subcommand("dump-tasks", "write sampled task instances as JSON lines");
    dt->add_option("--family", dt_family, "modsum | copy-reverse");
    dt->add_option("--difficulty", dt_difficulty, "family difficulty");
    dt->add_option("--count", dt_count, "instances");
    dt->add_option("--seed", dt_seed, "sampling seed");
    dt->add_option("--out", dt_out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*train) return cmd_train(train_flags, train_out, resume, quiet);
        if (*eval) return cmd_eval(eval_flags, checkpoint, eval_instances, eval_samples);
        if (*gc) return cmd_grad_check(gc_flags, gc_all, gc_opts, gc_tol);
        if (*oc) return cmd_oracle_check(oc_opts, oc_tol);
        if (*ab) return cmd_ablate(ab_flags, ab_axis, ab_values, ab_out, ab_quiet);
        if (*plot) return cmd_plot(plot_metrics, plot_keys, plot_out);
        if (*pc) {
            std::cout << to_json(pc_flags.build()).dump(2) << '\n';
            return kOk;
        }
        if (*dt) return cmd_dump_tasks(dt_family, dt_difficulty, dt_count, dt_seed, dt_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kValidation;
    } catch (const InputError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kValidation;
}
