#include "fipo/rollout.hpp"

#include <algorithm>
#include <string>
#include <thread>

#include "fipo/errors.hpp"

namespace fipo {

double Group::raw_reward_std() const {
    std::vector<double> raw;
    raw.reserve(trajectories.size());
    for (const auto& t : trajectories) {
        raw.push_back(static_cast<double>(t.reward));
    }
    return group_stats(raw).std;
}

std::vector<double> Group::shaped_rewards() const {
    std::vector<double> r;
    r.reserve(trajectories.size());
    for (const auto& t : trajectories) {
        r.push_back(t.shaped_reward);
    }
    return r;
}

std::vector<AdvantageView> Group::advantage_views() const {
    std::vector<AdvantageView> v;
    v.reserve(trajectories.size());
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        v.push_back({advantages.at(i), trajectories[i].length()});
    }
    return v;
}

Trajectory sample_response(const PolicyParams& params, std::span<const int> prompt, const GenerationConfig& gen,
                           Rng& rng) {
    if (gen.max_response_len < 1) {
        throw InputError("sample_response: max_response_len must be >= 1");
    }
    Trajectory traj;
    std::vector<int> history(prompt.begin(), prompt.end());
    history.reserve(prompt.size() + gen.max_response_len);
    for (int t = 0; t < gen.max_response_len; ++t) {
        const SampledToken s = sample_token(params, history, gen.sampling, rng);
        traj.response.push_back(s.token);
        traj.old_log_probs.push_back(s.log_prob);
        history.push_back(s.token);
        if (s.token == tokens::kEos) {
            break;
        }
    }
    traj.truncated = traj.response.back() != tokens::kEos;
    return traj;
}

Trajectory generate_trajectory(const PolicyParams& params, const TaskInstance& task, const GenerationConfig& gen,
                               const RewardConfig& reward, Rng& rng) {
    Trajectory traj = sample_response(params, task.prompt, gen, rng);
    traj.reward = verify(task, traj.response);
    traj.shaped_reward = shaped_reward(task, traj.response, reward);
    return traj;
}

Group rollout_group(const PolicyParams& old_params, const TaskInstance& task, int group_size,
                    const GenerationConfig& gen, const RewardConfig& reward, Rng& rng) {
    if (group_size < 2) {
        throw InputError("rollout_group: group size must be >= 2");
    }
    Group g;
    g.task = task;
    g.trajectories.reserve(group_size);
    for (int i = 0; i < group_size; ++i) {
        g.trajectories.push_back(generate_trajectory(old_params, task, gen, reward, rng));
    }
    const auto shaped = g.shaped_rewards();
    g.shaped_stats = group_stats(shaped);
    return g;
}

bool has_signal(const Group& group) {
    return group.raw_reward_std() > 0.0 && group_stats(group.shaped_rewards()).std > 0.0;
}

std::size_t TrainBatch::trajectory_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) {
        n += g.trajectories.size();
    }
    return n;
}

TrainBatch dynamic_sample(const GroupSource& source, std::size_t prompt_batch_size, std::size_t resample_cap) {
    TrainBatch batch;
    batch.groups.reserve(prompt_batch_size);
    while (batch.groups.size() < prompt_batch_size) {
        if (batch.sampled_groups >= resample_cap) {
            throw TrainingStallError("dynamic sampling drew " + std::to_string(batch.sampled_groups) +
                                     " groups (resample_cap = " + std::to_string(resample_cap) + ") but kept only " +
                                     std::to_string(batch.groups.size()) + " of " +
                                     std::to_string(prompt_batch_size));
        }
        Group g = source();
        ++batch.sampled_groups;
        if (!has_signal(g)) {
            continue;
        }
        g.advantages = group_advantage(g.shaped_rewards());
        batch.groups.push_back(std::move(g));
    }
    return batch;
}

RolloutStream::RolloutStream(const PolicyParams& old_params, Options options)
    : params_(old_params), opt_(std::move(options)) {
    opt_.wave_size = std::max<std::size_t>(opt_.wave_size, 1);
    opt_.threads = std::max(opt_.threads, 1);
}

void RolloutStream::refill() {
    const std::size_t base = generated_;
    std::vector<Group> wave(opt_.wave_size);
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            Rng rng(derive_seed(opt_.seed, opt_.step, base + i));
            const TaskInstance task = sample_task(opt_.family, opt_.difficulty, rng);
            wave[i] = rollout_group(params_, task, opt_.group_size, opt_.gen, opt_.reward, rng);
        }
    };
    const auto workers = static_cast<std::size_t>(std::min<std::size_t>(opt_.threads, wave.size()));
    if (workers <= 1) {
        work(0, wave.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t per = (wave.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t lo = w * per;
            const std::size_t hi = std::min(wave.size(), lo + per);
            if (lo < hi) {
                pool.emplace_back(work, lo, hi);
            }
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    generated_ += wave.size();
    buffer_ = std::move(wave);
    buffer_pos_ = 0;
}

Group RolloutStream::next() {
    if (buffer_pos_ >= buffer_.size()) {
        refill();
    }
    ++next_index_;
    return std::move(buffer_[buffer_pos_++]);
}

}  // namespace fipo
