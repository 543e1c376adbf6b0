#include "fipo/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>

#include "fipo/errors.hpp"
#include "fipo/future_kl.hpp"
#include "fipo/rollout.hpp"

namespace fipo {
namespace {

double recursion_residual(std::span<const double> f, std::span<const double> delta, std::span<const std::uint8_t> mask,
                          double gamma) {
    double worst = 0.0;
    const std::size_t n = f.size();
    for (std::size_t t = 0; t < n; ++t) {
        const double next = t + 1 < n ? f[t + 1] : 0.0;
        const double expect = (mask[t] != 0 ? delta[t] : 0.0) + gamma * next;
        worst = std::max(worst, std::abs(f[t] - expect));
    }
    return worst;
}

struct Sample {
    const TaskInstance* task;
    Trajectory traj;
    double advantage;
};

class LossProbe {
public:
    LossProbe(const RunConfig& cfg, LossKind kind, std::vector<Sample> samples, PolicyParams ref)
        : cfg_(cfg), kind_(kind), samples_(std::move(samples)), ref_(std::move(ref)) {}

    // Loss at `params`; when `frozen` is non-null those credit tensors are used
    // instead of rebuilding them from the current log-probs.
    double loss(const PolicyParams& params, const std::vector<CreditTensors>* frozen,
                std::vector<CreditTensors>* credit_out = nullptr, ForwardTape* tape = nullptr,
                LossResult* result_out = nullptr) const {
        std::vector<std::vector<double>> current;
        std::vector<std::vector<double>> reference;
        for (const auto& s : samples_) {
            current.push_back(sequence_log_probs(params, s.task->prompt, s.traj.response, tape));
            if (kind_ == LossKind::grpo && cfg_.loss.clip.kl_beta > 0.0) {
                reference.push_back(sequence_log_probs(ref_, s.task->prompt, s.traj.response));
            }
        }
        std::vector<CreditTensors> credit;
        if (kind_ == LossKind::fipo) {
            if (frozen != nullptr) {
                credit = *frozen;
            } else {
                for (std::size_t n = 0; n < samples_.size(); ++n) {
                    credit.push_back(
                        build_credit(current[n], samples_[n].traj.old_log_probs, samples_[n].advantage, cfg_.fipo));
                }
            }
        }
        std::vector<SequenceInput> inputs(samples_.size());
        for (std::size_t n = 0; n < samples_.size(); ++n) {
            inputs[n].current_lp = current[n];
            inputs[n].old_lp = samples_[n].traj.old_log_probs;
            inputs[n].advantage = samples_[n].advantage;
            if (!credit.empty()) {
                inputs[n].credit = &credit[n];
            }
            if (!reference.empty()) {
                inputs[n].ref_lp = reference[n];
            }
        }
        LossResult r;
        switch (kind_) {
            case LossKind::grpo:
                r = grpo_loss(inputs, cfg_.loss.clip);
                break;
            case LossKind::dapo:
                r = dapo_loss(inputs, cfg_.loss.clip);
                break;
            case LossKind::fipo:
                r = fipo_loss(inputs, cfg_.loss.clip, cfg_.fipo);
                break;
        }
        if (credit_out != nullptr) {
            *credit_out = std::move(credit);
        }
        const double value = r.report.loss;
        if (result_out != nullptr) {
            *result_out = std::move(r);
        }
        return value;
    }

private:
    const RunConfig& cfg_;
    LossKind kind_;
    std::vector<Sample> samples_;
    PolicyParams ref_;
};

}  // namespace

OracleSweepResult oracle_sweep(const OracleSweepOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    constexpr double kTaus[] = {1.0, 8.0, 32.0, 256.0, std::numeric_limits<double>::infinity()};
    Rng rng(options.seed);
    OracleSweepResult result;
    for (std::size_t c = 0; c < options.cases; ++c) {
        const std::size_t rows = 1 + uniform_index(rng, options.max_rows);
        const std::size_t length = 1 + uniform_index(rng, options.max_length);
        const std::size_t chunk_choices[] = {1, 7, 32, 256, length};
        const std::size_t chunk = chunk_choices[uniform_index(rng, 5)];
        const double gamma = decay_from_tau(kTaus[uniform_index(rng, 5)]);

        std::vector<double> delta(rows * length);
        Mask mask(rows * length);
        for (std::size_t i = 0; i < delta.size(); ++i) {
            delta[i] = 0.2 * standard_normal(rng);
            if (uniform01(rng) < 0.02) {
                delta[i] += 3.0;  // occasional spike, as a masked-out outlier would be
            }
            mask[i] = uniform01(rng) < 0.9 ? 1 : 0;
        }

        ChunkedFutureKL kernel(gamma, chunk);
        std::vector<double> chunked = kernel(delta, mask, rows, length);
        if (options.inject_fault && c == 0) {
            chunked[0] += 1e-6;
        }
        for (std::size_t b = 0; b < rows; ++b) {
            const std::span<const double> d(delta.data() + b * length, length);
            const std::span<const std::uint8_t> m(mask.data() + b * length, length);
            const std::span<const double> fc(chunked.data() + b * length, length);
            const auto naive = future_kl_naive(d, m, gamma);
            for (std::size_t t = 0; t < length; ++t) {
                result.max_abs_deviation = std::max(result.max_abs_deviation, std::abs(fc[t] - naive[t]));
            }
            result.max_recursion_residual =
                std::max({result.max_recursion_residual, recursion_residual(naive, d, m, gamma),
                          recursion_residual(fc, d, m, gamma)});
        }
        ++result.cases;
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

GradCheckResult grad_check(const RunConfig& cfg, LossKind kind, const GradCheckOptions& options) {
    cfg.validate();
    Rng rng(options.seed);
    const PolicyParams old_params = PolicyParams::random(cfg.policy.shape, rng, cfg.policy.init_scale);

    // Current params sit a finite distance from the rollout snapshot so ratios,
    // FutureKL and the clip branches are all non-trivial.
    PolicyParams params = old_params;
    for (double& v : params.values()) {
        v += options.param_noise * standard_normal(rng);
    }
    PolicyParams ref = old_params;
    for (double& v : ref.values()) {
        v += 0.5 * options.param_noise * standard_normal(rng);
    }

    std::vector<TaskInstance> tasks;
    tasks.reserve(options.groups);
    for (int g = 0; g < options.groups; ++g) {
        tasks.push_back(sample_task(cfg.env.family, cfg.env.difficulty, rng));
    }
    const GenerationConfig gen{std::min(cfg.env.reward.max_response_len, 12), cfg.sampling.rollout};
    std::vector<Sample> samples;
    for (const auto& task : tasks) {
        for (int i = 0; i < options.group_size; ++i) {
            samples.push_back({&task, sample_response(old_params, task.prompt, gen, rng), standard_normal(rng)});
        }
    }

    LossProbe probe(cfg, kind, std::move(samples), ref);
    ForwardTape tape;
    std::vector<CreditTensors> credit;
    LossResult analytic;
    const double base = probe.loss(params, nullptr, &credit, &tape, &analytic);
    std::vector<double> seeds;
    for (const auto& d : analytic.dlogp) {
        seeds.insert(seeds.end(), d.begin(), d.end());
    }
    const GradVector grad = backward(params, tape, seeds);

    const bool freeze = kind == LossKind::fipo && cfg.fipo.detach_influence;
    const std::vector<CreditTensors>* frozen = freeze ? &credit : nullptr;

    GradCheckResult out;
    out.kind = kind;
    out.loss = base;
    out.grad_norm = grad.norm;
    std::set<std::size_t> coords;
    const std::size_t want = std::min(options.coordinates, params.size());
    while (coords.size() < want) {
        coords.insert(static_cast<std::size_t>(uniform_index(rng, params.size())));
    }
    for (const std::size_t i : coords) {
        PolicyParams plus = params;
        PolicyParams minus = params;
        plus.values()[i] += options.step;
        minus.values()[i] -= options.step;
        const double numeric = (probe.loss(plus, frozen) - probe.loss(minus, frozen)) / (2.0 * options.step);
        const double a = grad.values[i];
        const double abs_err = std::abs(a - numeric);
        const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-6});
        out.max_rel_error = std::max(out.max_rel_error, rel);
        out.max_abs_error = std::max(out.max_abs_error, abs_err);
    }
    out.coordinates = coords.size();
    return out;
}

}  // namespace fipo
