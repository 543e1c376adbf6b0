#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "fipo/advantage.hpp"
#include "fipo/env.hpp"
#include "fipo/policy.hpp"

namespace fipo {

struct GenerationConfig {
    int max_response_len = 32;
    SamplingConfig sampling;
};

struct Trajectory {
    std::vector<int> response;
    std::vector<double> old_log_probs;  // cached while sampling
    int reward = 0;                     // verifier output
    double shaped_reward = 0.0;
    bool truncated = false;  // hit max_response_len without EOS

    std::size_t length() const { return response.size(); }
};

struct Group {
    TaskInstance task;
    std::vector<Trajectory> trajectories;
    GroupStats shaped_stats;
    std::vector<double> advantages;  // filled once the group is kept

    double raw_reward_std() const;
    std::vector<double> shaped_rewards() const;
    std::vector<AdvantageView> advantage_views() const;
};

// Samples until EOS or max_response_len; rewards are left unset.
Trajectory sample_response(const PolicyParams& params, std::span<const int> prompt, const GenerationConfig& gen,
                           Rng& rng);

Trajectory generate_trajectory(const PolicyParams& params, const TaskInstance& task, const GenerationConfig& gen,
                               const RewardConfig& reward, Rng& rng);

// G responses sampled from the frozen old policy; advantages are left empty.
Group rollout_group(const PolicyParams& old_params, const TaskInstance& task, int group_size,
                    const GenerationConfig& gen, const RewardConfig& reward, Rng& rng);

// A group carries learning signal iff its raw rewards are not all equal. Groups whose
// shaped rewards collapse to a single value are dropped as well, since the
// standardized advantage is undefined for them.
bool has_signal(const Group& group);

struct TrainBatch {
    std::vector<Group> groups;
    std::size_t sampled_groups = 0;

    double sampled_ratio() const {
        return groups.empty() ? 0.0 : static_cast<double>(sampled_groups) / static_cast<double>(groups.size());
    }
    std::size_t trajectory_count() const;
};

using GroupSource = std::function<Group()>;

// Pulls groups in arrival order, drops those without signal and stops after
// `prompt_batch_size` kept groups. Kept groups get their advantages computed.
// Throws TrainingStallError once `resample_cap` groups were drawn without filling the batch.
TrainBatch dynamic_sample(const GroupSource& source, std::size_t prompt_batch_size, std::size_t resample_cap);

// Seed-deterministic stream of groups for one training step. Group i's task and
// responses come from its own RNG stream, so the output does not depend on
// how generation is scheduled across threads.
class RolloutStream {
public:
    struct Options {
        TaskFamily family = TaskFamily::modsum;
        int difficulty = 1;
        int group_size = 8;
        GenerationConfig gen;
        RewardConfig reward;
        std::uint64_t seed = 0;
        std::uint64_t step = 0;
        std::size_t wave_size = 32;
        int threads = 1;
    };

    RolloutStream(const PolicyParams& old_params, Options options);

    Group next();
    std::size_t produced() const { return next_index_; }

private:
    void refill();

    const PolicyParams& params_;
    Options opt_;
    std::vector<Group> buffer_;
    std::size_t buffer_pos_ = 0;
    std::size_t next_index_ = 0;
    std::size_t generated_ = 0;
};

}  // namespace fipo
