#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fipo/rng.hpp"

namespace fipo {

inline constexpr int kPadToken = 0;

// Context-window MLP: the last `window` token embeddings are concatenated,
// passed through one tanh hidden layer and projected to vocabulary logits.
struct PolicyShape {
    int vocab_size = 16;
    int d_emb = 8;
    int window = 6;
    int d_hidden = 160;

    std::size_t embedding_size() const { return static_cast<std::size_t>(vocab_size) * d_emb; }
    std::size_t input_size() const { return static_cast<std::size_t>(window) * d_emb; }
    std::size_t param_count() const;
    void validate() const;
    bool operator==(const PolicyShape&) const = default;
};

// Flat parameter vector. Layout: embedding [vocab x d_emb], hidden weights
// [d_hidden x input], hidden bias [d_hidden], output weights [vocab x d_hidden],
// output bias [vocab].
class PolicyParams {
public:
    PolicyParams() = default;
    explicit PolicyParams(const PolicyShape& shape);  // all zeros

    static PolicyParams random(const PolicyShape& shape, Rng& rng, double init_scale);

    const PolicyShape& shape() const { return shape_; }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::size_t size() const { return values_.size(); }

    std::span<const double> embedding() const { return block(0, shape_.embedding_size()); }
    std::span<const double> hidden_weight() const { return block(hidden_weight_offset(), hidden_weight_size()); }
    std::span<const double> hidden_bias() const { return block(hidden_bias_offset(), shape_.d_hidden); }
    std::span<const double> output_weight() const { return block(output_weight_offset(), output_weight_size()); }
    std::span<const double> output_bias() const { return block(output_bias_offset(), shape_.vocab_size); }

    std::size_t hidden_weight_offset() const { return shape_.embedding_size(); }
    std::size_t hidden_bias_offset() const { return hidden_weight_offset() + hidden_weight_size(); }
    std::size_t output_weight_offset() const { return hidden_bias_offset() + shape_.d_hidden; }
    std::size_t output_bias_offset() const { return output_weight_offset() + output_weight_size(); }

    bool all_finite() const;
    bool operator==(const PolicyParams&) const = default;

private:
    std::size_t hidden_weight_size() const { return static_cast<std::size_t>(shape_.d_hidden) * shape_.input_size(); }
    std::size_t output_weight_size() const { return static_cast<std::size_t>(shape_.vocab_size) * shape_.d_hidden; }
    std::span<const double> block(std::size_t offset, std::size_t n) const {
        return std::span<const double>(values_).subspan(offset, n);
    }

    PolicyShape shape_;
    std::vector<double> values_;
};

// Right-aligned window of the last `window` tokens of `history`, left-padded with PAD.
std::vector<int> make_window(const PolicyShape& shape, std::span<const int> history);

// Log-probabilities over the vocabulary for the next token after `history`.
std::vector<double> token_log_probs(const PolicyParams& params, std::span<const int> history);

// Activations recorded during a forward pass, consumed by backward().
class ForwardTape {
public:
    struct Node {
        std::vector<int> window;
        int target = 0;
        std::vector<double> hidden;  // post-activation
        std::vector<double> probs;
    };

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    void push(Node node) { nodes_.push_back(std::move(node)); }

    // Mean Shannon entropy (nats) of the recorded next-token distributions.
    double mean_entropy() const;

private:
    std::vector<Node> nodes_;
};

// Entry t is log pi(response[t] | prompt, response[<t]). When `tape` is given,
// one node per response token is appended to it.
std::vector<double> sequence_log_probs(const PolicyParams& params, std::span<const int> prompt,
                                       std::span<const int> response, ForwardTape* tape = nullptr);

struct SamplingConfig {
    double temperature = 1.0;
    double top_p = 1.0;
};

struct SampledToken {
    int token = 0;
    double log_prob = 0.0;  // under the untempered policy, as used by the loss
};

// PAD is never sampled. The nucleus is the smallest set of most-likely tokens
// whose mass reaches top_p, renormalized.
int sample_from_probs(std::span<const double> probs, double top_p, Rng& rng);
SampledToken sample_token(const PolicyParams& params, std::span<const int> history,
                          const SamplingConfig& cfg, Rng& rng);

// Mean next-token entropy over a batch of windows (each exactly shape.window long).
double entropy(const PolicyParams& params, std::span<const std::vector<int>> windows);

struct GradVector {
    std::vector<double> values;
    double norm = 0.0;

    static GradVector from_values(std::vector<double> values);
    GradVector& operator+=(const GradVector& other);
};

// Exact gradient of sum_n dlogp[n] * log pi(target_n | window_n) over the tape nodes.
// Throws NumericError naming the node when a non-finite value shows up.
GradVector backward(const PolicyParams& params, const ForwardTape& tape, std::span<const double> dlogp);

struct OptimizerConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
    double grad_clip = 1.0;
    int warmup_steps = 10;

    bool operator==(const OptimizerConfig&) const = default;
};

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;

    static OptimizerState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
    bool operator==(const OptimizerState&) const = default;
};

double warmup_lr(const OptimizerConfig& cfg, std::int64_t step);

// Global-norm clip, then bias-corrected Adam with decoupled weight decay.
void optimizer_step(PolicyParams& params, OptimizerState& state, const GradVector& grad,
                    const OptimizerConfig& cfg);

}  // namespace fipo
