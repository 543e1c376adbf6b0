#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fipo/policy.hpp"
#include "fipo/rng.hpp"

namespace fipo {

// Vocabulary layout shared by the synthetic task families.
namespace tokens {
inline constexpr int kPad = kPadToken;
inline constexpr int kEos = 1;
inline constexpr int kDigit0 = 2;  // digits 0..9 map to 2..11
inline constexpr int kPlus = 12;
inline constexpr int kEquals = 13;
inline constexpr int kReverse = 14;
inline constexpr int kSep = 15;
inline constexpr int kMinVocab = 16;

constexpr int digit(int d) { return kDigit0 + d; }
constexpr bool is_digit(int tok) { return tok >= kDigit0 && tok < kDigit0 + 10; }
}  // namespace tokens

enum class TaskFamily { modsum, copy_reverse };

TaskFamily parse_task_family(std::string_view name);
std::string_view to_string(TaskFamily family);

// Inclusive difficulty range per family: modsum = operand count - 1,
// copy-reverse = payload length.
int min_difficulty(TaskFamily family);
int max_difficulty(TaskFamily family);

struct TaskInstance {
    TaskFamily family = TaskFamily::modsum;
    int difficulty = 1;
    std::vector<int> prompt;
    std::vector<int> answer;
};

TaskInstance sample_task(TaskFamily family, int difficulty, Rng& rng);
TaskInstance sample_task(std::string_view family, int difficulty, Rng& rng);

// 1 iff the tokens before the first EOS end with the answer and only PAD/EOS follow it.
int verify(const TaskInstance& instance, std::span<const int> response);

// The answer-length suffix before the first EOS. `terminated` is false when the
// response never emitted EOS (or has non-PAD tokens after it).
struct ExtractedAnswer {
    bool terminated = false;
    std::vector<int> tokens;  // the trailing answer-length tokens before EOS
    bool operator==(const ExtractedAnswer&) const = default;
};
ExtractedAnswer extract_answer(const TaskInstance& instance, std::span<const int> response);

struct RewardConfig {
    int max_response_len = 32;
    int overlong_buffer = 8;
    double penalty_scale = 1.0;

    void validate() const;
    bool operator==(const RewardConfig&) const = default;
};

// Linear ramp from 0 at the buffer start down to -penalty_scale at max_response_len.
double overlong_penalty(std::size_t length, const RewardConfig& cfg);
double shaped_reward(const TaskInstance& instance, std::span<const int> response, const RewardConfig& cfg);

}  // namespace fipo
