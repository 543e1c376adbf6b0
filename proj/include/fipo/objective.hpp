#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "fipo/future_kl.hpp"

namespace fipo {

enum class LossKind { grpo, dapo, fipo };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

struct ClipConfig {
    double eps_low = 0.2;
    double eps_high = 0.28;
    double dual_clip_c = 10.0;
    double kl_beta = 0.0;

    void validate() const;
    bool operator==(const ClipConfig&) const = default;
};

// exp(current - old) with the log-ratio clamped to +-kLogRatioClamp.
// `overflow`, when given, is incremented once per clamped entry.
std::vector<double> importance_ratio(std::span<const double> current_lp, std::span<const double> old_lp,
                                     std::size_t* overflow = nullptr);

// Value of one token's surrogate term plus its partial derivatives.
struct TokenTerm {
    double value = 0.0;
    double d_ratio = 0.0;      // d value / d r
    double d_advantage = 0.0;  // d value / d A
    bool policy_clipped = false;
    bool dual_clipped = false;
};

// min(r A, clip(r, 1-eps_low, 1+eps_high) A), floored at c A when A < 0 and dual clip is on.
TokenTerm evaluate_token_term(double ratio, double advantage, const ClipConfig& cfg, bool dual_clip = true);
double clipped_token_term(double ratio, double advantage, const ClipConfig& cfg);

// One response as seen by the loss. Spans point into caller-owned storage.
struct SequenceInput {
    std::span<const double> current_lp;
    std::span<const double> old_lp;
    double advantage = 0.0;                 // group-relative, constant along the response
    const CreditTensors* credit = nullptr;  // required by fipo_loss
    std::span<const double> ref_lp;         // required by grpo_loss when kl_beta > 0
};

struct LossReport {
    double loss = 0.0;  // minimized value, i.e. -J
    double policy_clip_fraction = 0.0;
    double low_clip_fraction = 0.0;  // among negative-advantage tokens
    double policy_kl = 0.0;
    double kl_penalty = 0.0;  // mean k3 estimate against the reference policy
    std::size_t token_count = 0;
    std::size_t ratio_overflow = 0;
};

struct LossResult {
    LossReport report;
    std::vector<std::vector<double>> dlogp;  // d loss / d current log-prob, per sequence
};

// Token-level clipped surrogate normalized by the total token count, with f = 1.
LossResult dapo_loss(std::span<const SequenceInput> batch, const ClipConfig& cfg);

// As dapo_loss but each token's advantage is the reweighted A * f from its CreditTensors.
// With cfg_f.detach_influence == false the gradient also flows through f and FutureKL.
LossResult fipo_loss(std::span<const SequenceInput> batch, const ClipConfig& cfg, const FutureKLConfig& cfg_f);

// Sequence-mean then batch-mean clipped surrogate (symmetric or asymmetric eps, no dual
// clip) minus beta times the k3 estimate of KL(pi || pi_ref).
LossResult grpo_loss(std::span<const SequenceInput> batch, const ClipConfig& cfg);

// (1/N) sum (old - current) over every token in the batch.
double policy_kl(std::span<const double> current_lp, std::span<const double> old_lp);
double policy_kl(std::span<const SequenceInput> batch);

}  // namespace fipo
