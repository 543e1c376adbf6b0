#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace fipo {

// |log ratio| is clamped to this before exponentiation.
inline constexpr double kLogRatioClamp = 30.0;

// tau at or above this value is treated as an infinite horizon (gamma = 1).
inline constexpr double kInfiniteTauThreshold = 1e9;

struct FutureKLConfig {
    double tau = 32.0;  // half-life in tokens; +inf allowed
    double safety_threshold = 10.0;
    double f_low = 1.0;   // 1 - eps_f_low
    double f_high = 1.2;  // 1 + eps_f_high
    int chunk_size = 256;
    bool filtering = true;         // apply the stability mask
    bool detach_influence = true;  // treat f as a constant in the loss gradient

    double gamma() const;
    double f_min() const { return f_low; }
    double f_max() const { return f_high; }
    double eps_f_low() const { return 1.0 - f_low; }
    double eps_f_high() const { return f_high - 1.0; }
    void validate() const;
    bool operator==(const FutureKLConfig&) const = default;
};

// gamma = 2^(-1/tau), exactly 1 for the infinite-horizon sentinel.
double decay_from_tau(double tau);

using Mask = std::vector<std::uint8_t>;

std::vector<double> delta_log_p(std::span<const double> current_lp, std::span<const double> old_lp);

// M_k = 1 iff pi/pi_old = exp(delta_k) <= threshold.
Mask stability_mask(std::span<const double> current_lp, std::span<const double> old_lp, double safety_threshold);

// FutureKL_t = sum_{k >= t} M_k gamma^(k-t) delta_k, evaluated by the direct O(L^2) double loop.
std::vector<double> future_kl_naive(std::span<const double> delta, std::span<const std::uint8_t> mask, double gamma);

// Blockwise evaluation over column chunks of width K. Only an L x K decay block is
// materialized at any time, so auxiliary memory is O(L K) independent of how many
// rows are processed.
class ChunkedFutureKL {
public:
    ChunkedFutureKL(double gamma, std::size_t chunk_size);

    // `delta` and `mask` are row-major [rows x length]; returns the same shape.
    std::vector<double> operator()(std::span<const double> delta, std::span<const std::uint8_t> mask,
                                   std::size_t rows, std::size_t length);

    // Largest decay block allocated so far (elements), for memory-bound checks.
    std::size_t peak_block_elements() const { return peak_block_; }

private:
    double gamma_;
    std::size_t chunk_;
    std::vector<double> powers_;
    std::vector<double> block_;
    std::size_t peak_block_ = 0;
};

std::vector<double> future_kl_chunked(std::span<const double> delta, std::span<const std::uint8_t> mask,
                                      double gamma, std::size_t chunk_size);

// Transpose of the FutureKL map: given dL/dFutureKL returns dL/ddelta.
std::vector<double> future_kl_adjoint(std::span<const double> grad_future_kl, std::span<const std::uint8_t> mask,
                                      double gamma);

// exp(delta) with delta clamped to +-kLogRatioClamp.
double clamped_ratio(double log_ratio);

struct InfluenceWeights {
    std::vector<double> f;
    std::vector<double> raw;  // exp(FutureKL) before clipping and reset
    std::vector<std::uint8_t> reset;
};

// f = clip(exp(FutureKL), 1-eps_f_low, 1+eps_f_high), then f = 1 wherever the
// advantage is negative and the importance ratio exceeds the safety threshold.
InfluenceWeights influence_weight(std::span<const double> future_kl, std::span<const double> advantage,
                                  std::span<const double> ratio, const FutureKLConfig& cfg);

std::vector<double> reweighted_advantage(std::span<const double> advantage, std::span<const double> f);

struct InfluenceMetrics {
    double mean_weight = 1.0;
    double clip_fraction = 0.0;
    std::size_t count = 0;
};

InfluenceMetrics influence_metrics(std::span<const double> f, std::span<const double> raw, const FutureKLConfig& cfg);

// All per-token credit quantities for one response.
struct CreditTensors {
    std::vector<double> delta;
    Mask mask;
    std::vector<double> future_kl;
    std::vector<double> ratio;
    InfluenceWeights influence;
    std::vector<double> advantage;  // reweighted, A_t * f_t
};

CreditTensors build_credit(std::span<const double> current_lp, std::span<const double> old_lp, double advantage,
                           const FutureKLConfig& cfg);

}  // namespace fipo
