#include "fipo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fipo/errors.hpp"

namespace fipo {
namespace {

void check_sequence(const SequenceInput& s) {
    if (s.current_lp.size() != s.old_lp.size()) {
        throw InputError("loss: current and old log-prob lengths differ");
    }
}

std::size_t total_tokens(std::span<const SequenceInput> batch) {
    std::size_t n = 0;
    for (const auto& s : batch) {
        check_sequence(s);
        n += s.current_lp.size();
    }
    return n;
}

// d r / d current_lp; zero where the log-ratio was clamped.
double ratio_slope(double log_ratio, double ratio) { return std::abs(log_ratio) < kLogRatioClamp ? ratio : 0.0; }

struct Counters {
    std::size_t tokens = 0;
    std::size_t policy_clipped = 0;
    std::size_t negative = 0;
    std::size_t dual_clipped = 0;
    std::size_t overflow = 0;

    void add(const TokenTerm& term, double advantage) {
        ++tokens;
        policy_clipped += term.policy_clipped ? 1 : 0;
        if (advantage < 0.0) {
            ++negative;
            dual_clipped += term.dual_clipped ? 1 : 0;
        }
    }

    void fill(LossReport& r) const {
        r.token_count = tokens;
        r.policy_clip_fraction = tokens == 0 ? 0.0 : static_cast<double>(policy_clipped) / static_cast<double>(tokens);
        r.low_clip_fraction = negative == 0 ? 0.0 : static_cast<double>(dual_clipped) / static_cast<double>(negative);
        r.ratio_overflow = overflow;
    }
};

LossResult token_level_loss(std::span<const SequenceInput> batch, const ClipConfig& cfg,
                            const FutureKLConfig* cfg_f) {
    if (batch.empty()) {
        throw InputError("loss: empty batch");
    }
    const std::size_t n_tokens = total_tokens(batch);
    if (n_tokens == 0) {
        throw InputError("loss: batch has no tokens");
    }
    const double norm = 1.0 / static_cast<double>(n_tokens);

    LossResult out;
    out.dlogp.reserve(batch.size());
    Counters counters;
    double objective = 0.0;

    for (const auto& s : batch) {
        const std::size_t len = s.current_lp.size();
        if (cfg_f != nullptr) {
            if (s.credit == nullptr) {
                throw InputError("fipo_loss: sequence without credit tensors");
            }
            if (s.credit->advantage.size() != len) {
                throw InputError("fipo_loss: credit tensors do not match the response length");
            }
        }
        const auto ratio = importance_ratio(s.current_lp, s.old_lp, &counters.overflow);
        std::vector<double> grad(len, 0.0);
        std::vector<double> grad_future_kl;
        const bool through_f = cfg_f != nullptr && !cfg_f->detach_influence;
        if (through_f) {
            grad_future_kl.assign(len, 0.0);
        }

        for (std::size_t t = 0; t < len; ++t) {
            const double adv = cfg_f != nullptr ? s.credit->advantage[t] : s.advantage;
            const TokenTerm term = evaluate_token_term(ratio[t], adv, cfg);
            counters.add(term, adv);
            objective += term.value;
            const double log_ratio = s.current_lp[t] - s.old_lp[t];
            grad[t] = -norm * term.d_ratio * ratio_slope(log_ratio, ratio[t]);

            if (through_f) {
                const auto& inf = s.credit->influence;
                const double raw = inf.raw[t];
                const bool active = inf.reset[t] == 0 && raw > cfg_f->f_min() && raw < cfg_f->f_max() &&
                                    s.credit->future_kl[t] < 700.0;
                if (active) {
                    // A~ = A f, f = exp(FutureKL) inside the clip band
                    grad_future_kl[t] = -norm * term.d_advantage * s.advantage * raw;
                }
            }
        }
        if (through_f) {
            const auto g_delta = future_kl_adjoint(grad_future_kl, s.credit->mask, cfg_f->gamma());
            for (std::size_t t = 0; t < len; ++t) {
                grad[t] += g_delta[t];
            }
        }
        out.dlogp.push_back(std::move(grad));
    }

    out.report.loss = -objective * norm;
    counters.fill(out.report);
    out.report.policy_kl = policy_kl(batch);
    return out;
}

}  // namespace

LossKind parse_loss_kind(std::string_view name) {
    if (name == "grpo") {
        return LossKind::grpo;
    }
    if (name == "dapo") {
        return LossKind::dapo;
    }
    if (name == "fipo") {
        return LossKind::fipo;
    }
    throw ConfigError("unknown loss kind '" + std::string(name) + "' (expected grpo, dapo or fipo)");
}

std::string_view to_string(LossKind kind) {
    switch (kind) {
        case LossKind::grpo:
            return "grpo";
        case LossKind::dapo:
            return "dapo";
        case LossKind::fipo:
            return "fipo";
    }
    return "?";
}

void ClipConfig::validate() const {
    if (!(eps_low > 0.0 && eps_low < 1.0) || !(eps_high > 0.0 && eps_high < 1.0)) {
        throw ConfigError("loss.eps_low and loss.eps_high must lie in (0, 1)");
    }
    if (!(dual_clip_c > 1.0 + eps_high)) {
        throw ConfigError("loss.dual_clip_c must exceed 1 + eps_high");
    }
    if (!(kl_beta >= 0.0)) {
        throw ConfigError("loss.kl_beta must be >= 0");
    }
}

std::vector<double> importance_ratio(std::span<const double> current_lp, std::span<const double> old_lp,
                                     std::size_t* overflow) {
    if (current_lp.size() != old_lp.size()) {
        throw InputError("importance_ratio: length mismatch");
    }
    std::vector<double> r(current_lp.size());
    for (std::size_t t = 0; t < r.size(); ++t) {
        const double d = current_lp[t] - old_lp[t];
        if (overflow != nullptr && std::abs(d) > kLogRatioClamp) {
            ++*overflow;
        }
        r[t] = clamped_ratio(d);
    }
    return r;
}

TokenTerm evaluate_token_term(double ratio, double advantage, const ClipConfig& cfg, bool dual_clip) {
    TokenTerm term;
    const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    const double unclipped = ratio * advantage;
    const double clipped = clipped_ratio * advantage;
    if (clipped < unclipped) {
        term.value = clipped;
        term.d_advantage = clipped_ratio;
        term.policy_clipped = true;
    } else {
        term.value = unclipped;
        term.d_ratio = advantage;
        term.d_advantage = ratio;
    }
    if (dual_clip && advantage < 0.0) {
        const double floor = cfg.dual_clip_c * advantage;
        if (floor > term.value) {
            term.value = floor;
            term.d_ratio = 0.0;
            term.d_advantage = cfg.dual_clip_c;
            term.dual_clipped = true;
        }
    }
    return term;
}

double clipped_token_term(double ratio, double advantage, const ClipConfig& cfg) {
    return evaluate_token_term(ratio, advantage, cfg).value;
}

LossResult dapo_loss(std::span<const SequenceInput> batch, const ClipConfig& cfg) {
    return token_level_loss(batch, cfg, nullptr);
}

LossResult fipo_loss(std::span<const SequenceInput> batch, const ClipConfig& cfg, const FutureKLConfig& cfg_f) {
    return token_level_loss(batch, cfg, &cfg_f);
}

LossResult grpo_loss(std::span<const SequenceInput> batch, const ClipConfig& cfg) {
    if (batch.empty()) {
        throw InputError("grpo_loss: empty batch");
    }
    const double n_seq = static_cast<double>(batch.size());
    LossResult out;
    out.dlogp.reserve(batch.size());
    Counters counters;
    double objective = 0.0;
    double k3_total = 0.0;
    const bool use_kl = cfg.kl_beta > 0.0;

    for (const auto& s : batch) {
        check_sequence(s);
        const std::size_t len = s.current_lp.size();
        if (len == 0) {
            throw InputError("grpo_loss: empty response");
        }
        if (use_kl && s.ref_lp.size() != len) {
            throw InputError("grpo_loss: reference log-probs required when kl_beta > 0");
        }
        const double w = 1.0 / (static_cast<double>(len) * n_seq);
        const auto ratio = importance_ratio(s.current_lp, s.old_lp, &counters.overflow);
        std::vector<double> grad(len, 0.0);
        double seq_obj = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
            const TokenTerm term = evaluate_token_term(ratio[t], s.advantage, cfg, false);
            counters.add(term, s.advantage);
            const double log_ratio = s.current_lp[t] - s.old_lp[t];
            double value = term.value;
            double d_lp = term.d_ratio * ratio_slope(log_ratio, ratio[t]);
            if (!s.ref_lp.empty()) {
                const double lr = s.ref_lp[t] - s.current_lp[t];
                const double e = std::exp(std::min(lr, 700.0));
                const double k3 = e - lr - 1.0;
                k3_total += k3;
                if (use_kl) {
                    value -= cfg.kl_beta * k3;
                    d_lp -= cfg.kl_beta * (1.0 - e);  // d k3 / d current = 1 - exp(lr)
                }
            }
            seq_obj += value;
            grad[t] = -w * d_lp;
        }
        objective += seq_obj * w;
        out.dlogp.push_back(std::move(grad));
    }
    out.report.loss = -objective;
    counters.fill(out.report);
    out.report.kl_penalty = counters.tokens == 0 ? 0.0 : k3_total / static_cast<double>(counters.tokens);
    out.report.policy_kl = policy_kl(batch);
    return out;
}

double policy_kl(std::span<const double> current_lp, std::span<const double> old_lp) {
    if (current_lp.size() != old_lp.size()) {
        throw InputError("policy_kl: token counts differ");
    }
    if (current_lp.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (std::size_t t = 0; t < current_lp.size(); ++t) {
        s += old_lp[t] - current_lp[t];
    }
    return s / static_cast<double>(current_lp.size());
}

double policy_kl(std::span<const SequenceInput> batch) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& seq : batch) {
        check_sequence(seq);
        for (std::size_t t = 0; t < seq.current_lp.size(); ++t) {
            s += seq.old_lp[t] - seq.current_lp[t];
        }
        n += seq.current_lp.size();
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

}  // namespace fipo
