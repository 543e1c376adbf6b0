#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fipo {

struct GroupStats {
    double mean = 0.0;
    double std = 0.0;  // population convention
};

GroupStats group_stats(std::span<const double> rewards);

// (R_i - mean) / std with the population std. Throws DegenerateGroupError when std == 0.
std::vector<double> group_advantage(std::span<const double> rewards);

// A trajectory-level advantage broadcast over `length` tokens. Kept as scalar + length;
// only loss evaluation materializes the per-token view.
struct AdvantageView {
    double advantage = 0.0;
    std::size_t length = 0;

    std::vector<double> per_token() const { return std::vector<double>(length, advantage); }
};

// sum_i sum_t A_{i,t} / sum_i L_i
double length_weighted_mean_advantage(std::span<const AdvantageView> batch);

}  // namespace fipo
