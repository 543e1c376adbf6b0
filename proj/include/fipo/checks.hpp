#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fipo/config.hpp"
#include "fipo/objective.hpp"

namespace fipo {

struct OracleSweepOptions {
    std::size_t cases = 1000;
    std::size_t max_rows = 8;
    std::size_t max_length = 1024;
    std::uint64_t seed = 7;
    bool inject_fault = false;  // corrupts one chunked output to exercise the failure path
};

struct OracleSweepResult {
    std::size_t cases = 0;
    double max_abs_deviation = 0.0;
    double max_recursion_residual = 0.0;  // |F_t - (M_t d_t + gamma F_{t+1})| over both kernels
    double seconds = 0.0;
};

// Random (delta, mask, tau, K) cases; chunked kernel vs. the naive double loop.
// K is drawn from {1, 7, 32, 256, L}, tau from {1, 8, 32, 256, inf}.
OracleSweepResult oracle_sweep(const OracleSweepOptions& options);

struct GradCheckOptions {
    std::size_t coordinates = 200;
    double step = 1e-5;
    std::uint64_t seed = 11;
    int groups = 2;
    int group_size = 4;
    double param_noise = 0.03;  // distance of the current params from the rollout snapshot
};

struct GradCheckResult {
    LossKind kind = LossKind::fipo;
    std::size_t coordinates = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, 1e-6) between the analytic gradient and a
// central difference. With detached influence weights the credit tensors are frozen
// at the evaluation point, matching what the analytic gradient differentiates.
GradCheckResult grad_check(const RunConfig& cfg, LossKind kind, const GradCheckOptions& options);

}  // namespace fipo
