#include "fipo/advantage.hpp"

#include <cmath>

#include "fipo/errors.hpp"

namespace fipo {

GroupStats group_stats(std::span<const double> rewards) {
    GroupStats s;
    if (rewards.empty()) {
        return s;
    }
    const double n = static_cast<double>(rewards.size());
    for (double r : rewards) {
        s.mean += r;
    }
    s.mean /= n;
    double var = 0.0;
    for (double r : rewards) {
        var += (r - s.mean) * (r - s.mean);
    }
    s.std = std::sqrt(var / n);
    return s;
}

std::vector<double> group_advantage(std::span<const double> rewards) {
    if (rewards.size() < 2) {
        throw InputError("group_advantage: a group needs at least 2 rewards");
    }
    const GroupStats s = group_stats(rewards);
    if (!(s.std > 0.0)) {
        throw DegenerateGroupError("group_advantage: rewards have zero standard deviation");
    }
    std::vector<double> adv(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        adv[i] = (rewards[i] - s.mean) / s.std;
    }
    return adv;
}

double length_weighted_mean_advantage(std::span<const AdvantageView> batch) {
    if (batch.empty()) {
        throw InputError("length_weighted_mean_advantage: empty batch");
    }
    double num = 0.0;
    std::size_t tokens = 0;
    for (const auto& v : batch) {
        num += v.advantage * static_cast<double>(v.length);
        tokens += v.length;
    }
    if (tokens == 0) {
        throw InputError("length_weighted_mean_advantage: batch has no tokens");
    }
    return num / static_cast<double>(tokens);
}

}  // namespace fipo
