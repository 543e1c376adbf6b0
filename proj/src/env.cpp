#include "fipo/env.hpp"

#include <algorithm>

#include "fipo/errors.hpp"

namespace fipo {

TaskFamily parse_task_family(std::string_view name) {
    if (name == "modsum") {
        return TaskFamily::modsum;
    }
    if (name == "copy-reverse") {
        return TaskFamily::copy_reverse;
    }
    throw ConfigError("unknown task family '" + std::string(name) + "' (expected modsum or copy-reverse)");
}

std::string_view to_string(TaskFamily family) {
    switch (family) {
        case TaskFamily::modsum:
            return "modsum";
        case TaskFamily::copy_reverse:
            return "copy-reverse";
    }
    return "?";
}

int min_difficulty(TaskFamily) { return 1; }

int max_difficulty(TaskFamily family) { return family == TaskFamily::modsum ? 4 : 8; }

TaskInstance sample_task(TaskFamily family, int difficulty, Rng& rng) {
    if (difficulty < min_difficulty(family) || difficulty > max_difficulty(family)) {
        throw ConfigError("difficulty " + std::to_string(difficulty) + " outside range [" +
                          std::to_string(min_difficulty(family)) + ", " + std::to_string(max_difficulty(family)) +
                          "] for " + std::string(to_string(family)));
    }
    TaskInstance t;
    t.family = family;
    t.difficulty = difficulty;
    switch (family) {
        case TaskFamily::modsum: {
            // d1 + d2 + ... + d_{k} =   with k = difficulty + 1 operands
            int sum = 0;
            for (int i = 0; i <= difficulty; ++i) {
                const int d = static_cast<int>(uniform_index(rng, 10));
                sum += d;
                if (i > 0) {
                    t.prompt.push_back(tokens::kPlus);
                }
                t.prompt.push_back(tokens::digit(d));
            }
            t.prompt.push_back(tokens::kEquals);
            t.answer = {tokens::digit(sum % 10)};
            break;
        }
        case TaskFamily::copy_reverse: {
            t.prompt.push_back(tokens::kReverse);
            for (int i = 0; i < difficulty; ++i) {
                t.prompt.push_back(tokens::digit(static_cast<int>(uniform_index(rng, 10))));
            }
            t.prompt.push_back(tokens::kSep);
            t.answer.assign(t.prompt.rbegin() + 1, t.prompt.rend() - 1);
            break;
        }
    }
    return t;
}

TaskInstance sample_task(std::string_view family, int difficulty, Rng& rng) {
    return sample_task(parse_task_family(family), difficulty, rng);
}

ExtractedAnswer extract_answer(const TaskInstance& instance, std::span<const int> response) {
    ExtractedAnswer out;
    const auto eos = std::find(response.begin(), response.end(), tokens::kEos);
    if (eos == response.end()) {
        return out;
    }
    const bool clean_tail =
        std::all_of(eos, response.end(), [](int t) { return t == tokens::kEos || t == tokens::kPad; });
    if (!clean_tail) {
        return out;
    }
    out.terminated = true;
    const auto body = static_cast<std::size_t>(eos - response.begin());
    const std::size_t take = std::min(body, instance.answer.size());
    out.tokens.assign(eos - static_cast<std::ptrdiff_t>(take), eos);
    return out;
}

int verify(const TaskInstance& instance, std::span<const int> response) {
    const auto got = extract_answer(instance, response);
    return (got.terminated && got.tokens == instance.answer) ? 1 : 0;
}

void RewardConfig::validate() const {
    if (!(overlong_buffer > 0 && overlong_buffer < max_response_len)) {
        throw ConfigError("env.overlong_buffer must satisfy 0 < overlong_buffer < max_response_len");
    }
    if (penalty_scale < 0.0) {
        throw ConfigError("env.penalty_scale must be >= 0");
    }
}

double overlong_penalty(std::size_t length, const RewardConfig& cfg) {
    const auto start = static_cast<std::size_t>(cfg.max_response_len - cfg.overlong_buffer);
    if (length <= start) {
        return 0.0;
    }
    const auto over = static_cast<double>(std::min(length, static_cast<std::size_t>(cfg.max_response_len)) - start);
    return -cfg.penalty_scale * over / static_cast<double>(cfg.overlong_buffer);
}

double shaped_reward(const TaskInstance& instance, std::span<const int> response, const RewardConfig& cfg) {
    return static_cast<double>(verify(instance, response)) + overlong_penalty(response.size(), cfg);
}

}  // namespace fipo
