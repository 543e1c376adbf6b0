#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace fipo {

// One training iteration's diagnostics. Scalar optimizer-side values are means
// over the iteration's mini-batches; length and reward statistics are over the
// kept trajectories.
struct StepMetrics {
    std::int64_t step = 0;
    double reward_mean = 0.0;
    double shaped_reward_mean = 0.0;
    double length_min = 0.0;
    double length_q25 = 0.0;
    double length_median = 0.0;
    double length_mean = 0.0;
    double length_q75 = 0.0;
    double length_max = 0.0;
    double truncated_fraction = 0.0;
    double loss = 0.0;
    double policy_kl = 0.0;
    double entropy = 0.0;
    double grad_norm = 0.0;
    double policy_clip_fraction = 0.0;
    double low_clip_fraction = 0.0;
    double influence_mean = 1.0;
    double influence_clip_fraction = 0.0;
    double adv_length_weighted_mean = 0.0;
    double sampled_batches = 1.0;
    double ratio_overflow = 0.0;
    double lr = 0.0;
    double eval_mean_at_k = 0.0;  // most recent evaluation, carried forward
    double eval_cons_at_k = 0.0;
    double eval_pass_at_k = 0.0;
    bool eval_ran = false;

    bool all_finite() const;
    bool operator==(const StepMetrics&) const = default;
};

// Stable key list of the metrics stream, in emission order.
const std::vector<std::string>& metric_keys();

nlohmann::ordered_json to_json(const StepMetrics& m);
StepMetrics metrics_from_json(const nlohmann::json& j);

// Linear-interpolated quantile of unsorted values, q in [0, 1].
double quantile(std::vector<double> values, double q);

// Writes one JSON object per line and flushes after each record.
class MetricsWriter {
public:
    explicit MetricsWriter(std::ostream& out) : out_(out) {}
    void write(const StepMetrics& m);

private:
    std::ostream& out_;
};

std::vector<nlohmann::json> read_jsonl(const std::string& path);

// CSV with a header row of `keys` and one row per record. Missing values are left empty.
void write_csv(std::ostream& out, std::span<const nlohmann::json> records, std::span<const std::string> keys);

}  // namespace fipo
