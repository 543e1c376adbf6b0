#include "fipo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "fipo/config.hpp"
#include "fipo/errors.hpp"

namespace fipo {

namespace {

struct Field {
    const char* key;
    double StepMetrics::*member;
};

constexpr Field kFields[] = {
    {"reward/mean", &StepMetrics::reward_mean},
    {"reward/shaped_mean", &StepMetrics::shaped_reward_mean},
    {"response_length/min", &StepMetrics::length_min},
    {"response_length/q25", &StepMetrics::length_q25},
    {"response_length/median", &StepMetrics::length_median},
    {"response_length/mean", &StepMetrics::length_mean},
    {"response_length/q75", &StepMetrics::length_q75},
    {"response_length/max", &StepMetrics::length_max},
    {"response_length/truncated_fraction", &StepMetrics::truncated_fraction},
    {"actor/loss", &StepMetrics::loss},
    {"actor/policy_kl", &StepMetrics::policy_kl},
    {"actor/entropy", &StepMetrics::entropy},
    {"actor/grad_norm", &StepMetrics::grad_norm},
    {"actor/pg_clip_fraction", &StepMetrics::policy_clip_fraction},
    {"actor/low_clip_fraction", &StepMetrics::low_clip_fraction},
    {"actor/ratio_overflow", &StepMetrics::ratio_overflow},
    {"actor/lr", &StepMetrics::lr},
    {"fipo/influence_mean", &StepMetrics::influence_mean},
    {"fipo/influence_clip_fraction", &StepMetrics::influence_clip_fraction},
    {"adv/length_weighted_mean", &StepMetrics::adv_length_weighted_mean},
    {"batch/sampled_batches", &StepMetrics::sampled_batches},
    {"eval/mean_at_k", &StepMetrics::eval_mean_at_k},
    {"eval/cons_at_k", &StepMetrics::eval_cons_at_k},
    {"eval/pass_at_k", &StepMetrics::eval_pass_at_k},
};

}  // namespace

bool StepMetrics::all_finite() const {
    return std::all_of(std::begin(kFields), std::end(kFields),
                       [this](const Field& f) { return std::isfinite(this->*f.member); });
}

const std::vector<std::string>& metric_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k{"schema_version", "step"};
        for (const auto& f : kFields) {
            k.emplace_back(f.key);
        }
        k.emplace_back("eval/ran");
        return k;
    }();
    return keys;
}

nlohmann::ordered_json to_json(const StepMetrics& m) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["step"] = m.step;
    for (const auto& f : kFields) {
        j[f.key] = m.*f.member;
    }
    j["eval/ran"] = m.eval_ran ? 1 : 0;
    return j;
}

StepMetrics metrics_from_json(const nlohmann::json& j) {
    StepMetrics m;
    try {
        m.step = j.at("step").get<std::int64_t>();
        for (const auto& f : kFields) {
            m.*f.member = j.at(f.key).get<double>();
        }
        m.eval_ran = j.at("eval/ran").get<int>() != 0;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("metrics record: ") + e.what());
    }
    return m;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) {
        return 0.0;
    }
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

void MetricsWriter::write(const StepMetrics& m) {
    out_ << to_json(m).dump() << '\n';
    out_.flush();
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open metrics file '" + path + "'");
    }
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_csv(std::ostream& out, std::span<const nlohmann::json> records, std::span<const std::string> keys) {
    for (std::size_t i = 0; i < keys.size(); ++i) {
        out << (i ? "," : "") << keys[i];
    }
    out << '\n';
    for (const auto& r : records) {
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (i) {
                out << ',';
            }
            auto it = r.find(keys[i]);
            if (it != r.end()) {
                out << (it->is_string() ? it->get<std::string>() : it->dump());
            }
        }
        out << '\n';
    }
}

}  // namespace fipo
