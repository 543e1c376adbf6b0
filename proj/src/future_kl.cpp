#include "fipo/future_kl.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fipo/errors.hpp"

namespace fipo {
namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw InputError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) +
                         ")");
    }
}

}  // namespace

double decay_from_tau(double tau) {
    if (!(tau > 0.0)) {
        throw ConfigError("fipo.tau must be > 0");
    }
    if (tau >= kInfiniteTauThreshold) {
        return 1.0;
    }
    return std::pow(2.0, -1.0 / tau);
}

double FutureKLConfig::gamma() const { return decay_from_tau(tau); }

void FutureKLConfig::validate() const {
    decay_from_tau(tau);
    if (!(safety_threshold > 1.0)) {
        throw ConfigError("fipo.safety_threshold must be > 1");
    }
    if (!(f_low >= 0.0 && f_low <= 1.0)) {
        throw ConfigError("fipo.f_clip lower bound must lie in [0, 1]");
    }
    if (!(f_high > 1.0)) {
        throw ConfigError("fipo.f_clip upper bound must exceed 1");
    }
    if (chunk_size < 1) {
        throw ConfigError("fipo.chunk_size must be >= 1");
    }
}

std::vector<double> delta_log_p(std::span<const double> current_lp, std::span<const double> old_lp) {
    require_same_length(current_lp.size(), old_lp.size(), "delta_log_p");
    std::vector<double> out(current_lp.size());
    for (std::size_t t = 0; t < out.size(); ++t) {
        out[t] = current_lp[t] - old_lp[t];
    }
    return out;
}

Mask stability_mask(std::span<const double> current_lp, std::span<const double> old_lp, double safety_threshold) {
    require_same_length(current_lp.size(), old_lp.size(), "stability_mask");
    // Compared in log space so huge ratios cannot overflow.
    const double log_c = std::log(safety_threshold);
    Mask m(current_lp.size());
    for (std::size_t t = 0; t < m.size(); ++t) {
        m[t] = (current_lp[t] - old_lp[t]) <= log_c ? 1 : 0;
    }
    return m;
}

std::vector<double> future_kl_naive(std::span<const double> delta, std::span<const std::uint8_t> mask, double gamma) {
    require_same_length(delta.size(), mask.size(), "future_kl_naive");
    const std::size_t n = delta.size();
    std::vector<double> powers(n);
    for (std::size_t d = 0; d < n; ++d) {
        powers[d] = std::pow(gamma, static_cast<double>(d));
    }
    std::vector<double> out(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t k = t; k < n; ++k) {
            if (mask[k] != 0) {
                acc += powers[k - t] * delta[k];
            }
        }
        out[t] = acc;
    }
    return out;
}

ChunkedFutureKL::ChunkedFutureKL(double gamma, std::size_t chunk_size) : gamma_(gamma), chunk_(chunk_size) {
    if (chunk_ == 0) {
        throw InputError("future_kl_chunked: chunk size must be >= 1");
    }
}

std::vector<double> ChunkedFutureKL::operator()(std::span<const double> delta, std::span<const std::uint8_t> mask,
                                                std::size_t rows, std::size_t length) {
    require_same_length(delta.size(), rows * length, "future_kl_chunked (delta)");
    require_same_length(mask.size(), rows * length, "future_kl_chunked (mask)");

    // D = delta * M
    std::vector<double> masked(delta.size());
    for (std::size_t i = 0; i < masked.size(); ++i) {
        masked[i] = mask[i] != 0 ? delta[i] : 0.0;
    }
    std::vector<double> out(delta.size(), 0.0);
    if (length == 0) {
        return out;
    }

    if (powers_.size() < length) {
        const std::size_t from = powers_.size();
        powers_.resize(length);
        for (std::size_t d = from; d < length; ++d) {
            powers_[d] = std::pow(gamma_, static_cast<double>(d));
        }
    }

    const std::size_t k = std::min(chunk_, length);
    block_.resize(length * k);
    peak_block_ = std::max(peak_block_, block_.size());

    for (std::size_t j_start = 0; j_start < length; j_start += k) {
        const std::size_t j_end = std::min(j_start + k, length);
        const std::size_t width = j_end - j_start;

        // W[i, jj] = gamma^(j - i) for j >= i, else 0; j = j_start + jj
        for (std::size_t i = 0; i < length; ++i) {
            double* w = block_.data() + i * k;
            for (std::size_t jj = 0; jj < width; ++jj) {
                const std::size_t j = j_start + jj;
                w[jj] = j >= i ? powers_[j - i] : 0.0;
            }
        }

        // F[b, i] += sum_jj V[b, jj] W[i, jj]; rows i > j_end - 1 see an all-zero block.
        for (std::size_t b = 0; b < rows; ++b) {
            const double* v = masked.data() + b * length + j_start;
            double* f = out.data() + b * length;
            for (std::size_t i = 0; i < j_end; ++i) {
                const double* w = block_.data() + i * k;
                double acc = 0.0;
                for (std::size_t jj = 0; jj < width; ++jj) {
                    acc += v[jj] * w[jj];
                }
                f[i] += acc;
            }
        }
    }
    return out;
}

std::vector<double> future_kl_chunked(std::span<const double> delta, std::span<const std::uint8_t> mask,
                                      double gamma, std::size_t chunk_size) {
    require_same_length(delta.size(), mask.size(), "future_kl_chunked");
    ChunkedFutureKL kernel(gamma, chunk_size);
    return kernel(delta, mask, 1, delta.size());
}

std::vector<double> future_kl_adjoint(std::span<const double> grad_future_kl, std::span<const std::uint8_t> mask,
                                      double gamma) {
    require_same_length(grad_future_kl.size(), mask.size(), "future_kl_adjoint");
    std::vector<double> out(grad_future_kl.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
        acc = grad_future_kl[k] + gamma * acc;
        out[k] = mask[k] != 0 ? acc : 0.0;
    }
    return out;
}

double clamped_ratio(double log_ratio) {
    return std::exp(std::clamp(log_ratio, -kLogRatioClamp, kLogRatioClamp));
}

InfluenceWeights influence_weight(std::span<const double> future_kl, std::span<const double> advantage,
                                  std::span<const double> ratio, const FutureKLConfig& cfg) {
    require_same_length(future_kl.size(), advantage.size(), "influence_weight (advantage)");
    require_same_length(future_kl.size(), ratio.size(), "influence_weight (ratio)");
    const std::size_t n = future_kl.size();
    InfluenceWeights w{std::vector<double>(n), std::vector<double>(n), std::vector<std::uint8_t>(n, 0)};
    for (std::size_t t = 0; t < n; ++t) {
        const double raw = std::exp(std::min(future_kl[t], 700.0));
        w.raw[t] = raw;
        w.f[t] = std::clamp(raw, cfg.f_min(), cfg.f_max());
        if (advantage[t] < 0.0 && ratio[t] > cfg.safety_threshold) {
            w.f[t] = 1.0;
            w.reset[t] = 1;
        }
    }
    return w;
}

std::vector<double> reweighted_advantage(std::span<const double> advantage, std::span<const double> f) {
    require_same_length(advantage.size(), f.size(), "reweighted_advantage");
    std::vector<double> out(advantage.size());
    for (std::size_t t = 0; t < out.size(); ++t) {
        out[t] = advantage[t] * f[t];
    }
    return out;
}

InfluenceMetrics influence_metrics(std::span<const double> f, std::span<const double> raw, const FutureKLConfig& cfg) {
    require_same_length(f.size(), raw.size(), "influence_metrics");
    InfluenceMetrics m;
    m.count = f.size();
    if (f.empty()) {
        return m;
    }
    double sum = 0.0;
    std::size_t clipped = 0;
    for (std::size_t t = 0; t < f.size(); ++t) {
        sum += f[t];
        if (raw[t] < cfg.f_min() || raw[t] > cfg.f_max()) {
            ++clipped;
        }
    }
    m.mean_weight = sum / static_cast<double>(f.size());
    m.clip_fraction = static_cast<double>(clipped) / static_cast<double>(f.size());
    return m;
}

CreditTensors build_credit(std::span<const double> current_lp, std::span<const double> old_lp, double advantage,
                           const FutureKLConfig& cfg) {
    CreditTensors c;
    c.delta = delta_log_p(current_lp, old_lp);
    c.mask = cfg.filtering ? stability_mask(current_lp, old_lp, cfg.safety_threshold) : Mask(c.delta.size(), 1);
    c.future_kl = future_kl_chunked(c.delta, c.mask, cfg.gamma(), static_cast<std::size_t>(cfg.chunk_size));
    c.ratio.resize(c.delta.size());
    for (std::size_t t = 0; t < c.ratio.size(); ++t) {
        c.ratio[t] = clamped_ratio(c.delta[t]);
    }
    const std::vector<double> adv(c.delta.size(), advantage);
    c.influence = influence_weight(c.future_kl, adv, c.ratio, cfg);
    c.advantage = reweighted_advantage(adv, c.influence.f);
    return c;
}

}  // namespace fipo
