#include "fipo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "fipo/errors.hpp"

namespace fipo {
namespace {

struct Activations {
    std::vector<double> hidden;
    std::vector<double> logits;
};

void check_token(const PolicyShape& shape, int token) {
    if (token < 0 || token >= shape.vocab_size) {
        throw InputError("token id " + std::to_string(token) + " outside vocabulary of size " +
                         std::to_string(shape.vocab_size));
    }
}

Activations forward(const PolicyParams& params, std::span<const int> window) {
    const PolicyShape& s = params.shape();
    const auto emb = params.embedding();
    const auto w1 = params.hidden_weight();
    const auto b1 = params.hidden_bias();
    const auto w2 = params.output_weight();
    const auto b2 = params.output_bias();
    const std::size_t in = s.input_size();

    std::vector<double> x(in);
    for (int p = 0; p < s.window; ++p) {
        const int tok = window[p];
        check_token(s, tok);
        std::copy_n(emb.begin() + static_cast<std::ptrdiff_t>(tok) * s.d_emb, s.d_emb,
                    x.begin() + static_cast<std::ptrdiff_t>(p) * s.d_emb);
    }

    Activations act;
    act.hidden.resize(s.d_hidden);
    for (int j = 0; j < s.d_hidden; ++j) {
        const double* row = w1.data() + static_cast<std::size_t>(j) * in;
        double z = b1[j];
        for (std::size_t i = 0; i < in; ++i) {
            z += row[i] * x[i];
        }
        act.hidden[j] = std::tanh(z);
    }
    act.logits.resize(s.vocab_size);
    for (int v = 0; v < s.vocab_size; ++v) {
        const double* row = w2.data() + static_cast<std::size_t>(v) * s.d_hidden;
        double z = b2[v];
        for (int j = 0; j < s.d_hidden; ++j) {
            z += row[j] * act.hidden[j];
        }
        act.logits[v] = z;
    }
    return act;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double z : logits) {
        mx = std::max(mx, z);
    }
    double sum = 0.0;
    for (double z : logits) {
        sum += std::exp(z - mx);
    }
    const double lse = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] - lse;
    }
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    auto lp = log_softmax(logits);
    for (double& v : lp) {
        v = std::exp(v);
    }
    return lp;
}

double distribution_entropy(std::span<const double> probs) {
    double h = 0.0;
    for (double p : probs) {
        if (p > 0.0) {
            h -= p * std::log(p);
        }
    }
    return std::max(h, 0.0);
}

}  // namespace

std::size_t PolicyShape::param_count() const {
    return embedding_size() + static_cast<std::size_t>(d_hidden) * input_size() + d_hidden +
           static_cast<std::size_t>(vocab_size) * d_hidden + vocab_size;
}

void PolicyShape::validate() const {
    if (vocab_size < 2 || d_emb < 1 || window < 1 || d_hidden < 1) {
        throw ConfigError("policy shape requires vocab_size >= 2 and positive d_emb, window, d_hidden");
    }
}

PolicyParams::PolicyParams(const PolicyShape& shape) : shape_(shape) {
    shape_.validate();
    values_.assign(shape_.param_count(), 0.0);
}

PolicyParams PolicyParams::random(const PolicyShape& shape, Rng& rng, double init_scale) {
    PolicyParams p(shape);
    const double in_scale = init_scale / std::sqrt(static_cast<double>(shape.input_size()));
    const double out_scale = init_scale / std::sqrt(static_cast<double>(shape.d_hidden));
    auto v = p.values();
    for (std::size_t i = 0; i < shape.embedding_size(); ++i) {
        v[i] = standard_normal(rng);
    }
    for (std::size_t i = p.hidden_weight_offset(); i < p.hidden_bias_offset(); ++i) {
        v[i] = in_scale * standard_normal(rng);
    }
    for (std::size_t i = p.output_weight_offset(); i < p.output_bias_offset(); ++i) {
        v[i] = out_scale * standard_normal(rng);
    }
    // biases stay zero
    return p;
}

bool PolicyParams::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

std::vector<int> make_window(const PolicyShape& shape, std::span<const int> history) {
    std::vector<int> w(shape.window, kPadToken);
    const std::size_t take = std::min<std::size_t>(history.size(), shape.window);
    std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(), w.end() - static_cast<std::ptrdiff_t>(take));
    return w;
}

std::vector<double> token_log_probs(const PolicyParams& params, std::span<const int> history) {
    const auto window = make_window(params.shape(), history);
    return log_softmax(forward(params, window).logits);
}

double ForwardTape::mean_entropy() const {
    if (nodes_.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (const auto& n : nodes_) {
        total += distribution_entropy(n.probs);
    }
    return total / static_cast<double>(nodes_.size());
}

std::vector<double> sequence_log_probs(const PolicyParams& params, std::span<const int> prompt,
                                       std::span<const int> response, ForwardTape* tape) {
    if (response.empty()) {
        throw InputError("sequence_log_probs: response must be non-empty");
    }
    const PolicyShape& s = params.shape();
    std::vector<int> history(prompt.begin(), prompt.end());
    history.reserve(prompt.size() + response.size());
    std::vector<double> out;
    out.reserve(response.size());
    for (int tok : response) {
        check_token(s, tok);
        auto window = make_window(s, history);
        auto act = forward(params, window);
        auto lp = log_softmax(act.logits);
        out.push_back(lp[tok]);
        if (tape != nullptr) {
            for (double& v : lp) {
                v = std::exp(v);
            }
            tape->push({std::move(window), tok, std::move(act.hidden), std::move(lp)});
        }
        history.push_back(tok);
    }
    return out;
}

int sample_from_probs(std::span<const double> probs, double top_p, Rng& rng) {
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });

    std::size_t keep = 0;
    double mass = 0.0;
    while (keep < order.size() && probs[order[keep]] > 0.0) {
        mass += probs[order[keep]];
        ++keep;
        if (mass >= top_p) {
            break;
        }
    }
    if (keep == 0) {
        throw NumericError("sample_from_probs: distribution has no positive mass");
    }
    const double u = uniform01(rng) * mass;
    double acc = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
        acc += probs[order[i]];
        if (u < acc) {
            return order[i];
        }
    }
    return order[keep - 1];
}

SampledToken sample_token(const PolicyParams& params, std::span<const int> history, const SamplingConfig& cfg,
                          Rng& rng) {
    const auto window = make_window(params.shape(), history);
    const auto act = forward(params, window);
    const auto lp = log_softmax(act.logits);

    std::vector<double> scaled(act.logits.size());
    for (std::size_t v = 0; v < scaled.size(); ++v) {
        scaled[v] = act.logits[v] / cfg.temperature;
    }
    scaled[kPadToken] = -std::numeric_limits<double>::infinity();
    const auto probs = softmax(scaled);
    const int tok = sample_from_probs(probs, cfg.top_p, rng);
    return {tok, lp[tok]};
}

double entropy(const PolicyParams& params, std::span<const std::vector<int>> windows) {
    if (windows.empty()) {
        throw InputError("entropy: batch must be non-empty");
    }
    double total = 0.0;
    for (const auto& w : windows) {
        if (static_cast<int>(w.size()) != params.shape().window) {
            throw InputError("entropy: window length does not match policy shape");
        }
        total += distribution_entropy(softmax(forward(params, w).logits));
    }
    return total / static_cast<double>(windows.size());
}

GradVector GradVector::from_values(std::vector<double> values) {
    GradVector g;
    g.values = std::move(values);
    double sq = 0.0;
    for (double v : g.values) {
        sq += v * v;
    }
    g.norm = std::sqrt(sq);
    return g;
}

GradVector& GradVector::operator+=(const GradVector& other) {
    if (values.empty()) {
        values.assign(other.values.size(), 0.0);
    }
    if (values.size() != other.values.size()) {
        throw InputError("GradVector size mismatch");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] += other.values[i];
    }
    *this = from_values(std::move(values));
    return *this;
}

GradVector backward(const PolicyParams& params, const ForwardTape& tape, std::span<const double> dlogp) {
    if (dlogp.size() != tape.size()) {
        throw InputError("backward: " + std::to_string(dlogp.size()) + " seeds for " + std::to_string(tape.size()) +
                         " tape nodes");
    }
    const PolicyShape& s = params.shape();
    const std::size_t in = s.input_size();
    const auto emb = params.embedding();
    const auto w1 = params.hidden_weight();
    const auto w2 = params.output_weight();

    std::vector<double> g(params.size(), 0.0);
    double* g_emb = g.data();
    double* g_w1 = g.data() + params.hidden_weight_offset();
    double* g_b1 = g.data() + params.hidden_bias_offset();
    double* g_w2 = g.data() + params.output_weight_offset();
    double* g_b2 = g.data() + params.output_bias_offset();

    std::vector<double> dlogits(s.vocab_size);
    std::vector<double> dz(s.d_hidden);
    std::vector<double> x(in);
    std::vector<double> dx(in);

    for (std::size_t n = 0; n < tape.size(); ++n) {
        const double seed = dlogp[n];
        if (!std::isfinite(seed)) {
            std::ostringstream msg;
            msg << "backward: non-finite loss seed at tape node " << n;
            throw NumericError(msg.str());
        }
        if (seed == 0.0) {
            continue;
        }
        const auto& node = tape.nodes()[n];

        // d log softmax(target) / d logits = onehot(target) - probs
        for (int v = 0; v < s.vocab_size; ++v) {
            dlogits[v] = -seed * node.probs[v];
        }
        dlogits[node.target] += seed;

        std::fill(dz.begin(), dz.end(), 0.0);
        for (int v = 0; v < s.vocab_size; ++v) {
            const double d = dlogits[v];
            g_b2[v] += d;
            double* grow = g_w2 + static_cast<std::size_t>(v) * s.d_hidden;
            const double* wrow = w2.data() + static_cast<std::size_t>(v) * s.d_hidden;
            for (int j = 0; j < s.d_hidden; ++j) {
                grow[j] += d * node.hidden[j];
                dz[j] += d * wrow[j];
            }
        }
        for (int j = 0; j < s.d_hidden; ++j) {
            const double h = node.hidden[j];
            dz[j] *= 1.0 - h * h;  // tanh'
        }

        for (int p = 0; p < s.window; ++p) {
            std::copy_n(emb.begin() + static_cast<std::ptrdiff_t>(node.window[p]) * s.d_emb, s.d_emb,
                        x.begin() + static_cast<std::ptrdiff_t>(p) * s.d_emb);
        }
        std::fill(dx.begin(), dx.end(), 0.0);
        for (int j = 0; j < s.d_hidden; ++j) {
            const double d = dz[j];
            if (d == 0.0) {
                continue;
            }
            g_b1[j] += d;
            double* grow = g_w1 + static_cast<std::size_t>(j) * in;
            const double* wrow = w1.data() + static_cast<std::size_t>(j) * in;
            for (std::size_t i = 0; i < in; ++i) {
                grow[i] += d * x[i];
                dx[i] += d * wrow[i];
            }
        }
        for (int p = 0; p < s.window; ++p) {
            double* erow = g_emb + static_cast<std::ptrdiff_t>(node.window[p]) * s.d_emb;
            for (int e = 0; e < s.d_emb; ++e) {
                erow[e] += dx[static_cast<std::size_t>(p) * s.d_emb + e];
            }
        }
    }

    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) {
            std::ostringstream msg;
            msg << "backward: non-finite gradient at parameter index " << i;
            throw NumericError(msg.str());
        }
    }
    return GradVector::from_values(std::move(g));
}

double warmup_lr(const OptimizerConfig& cfg, std::int64_t step) {
    if (cfg.warmup_steps <= 0) {
        return cfg.lr;
    }
    const double frac = static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    return cfg.lr * std::min(1.0, frac);
}

void optimizer_step(PolicyParams& params, OptimizerState& state, const GradVector& grad,
                    const OptimizerConfig& cfg) {
    const std::size_t n = params.size();
    if (grad.values.size() != n || state.m.size() != n || state.v.size() != n) {
        throw InputError("optimizer_step: parameter, gradient and state shapes differ");
    }
    const double scale = (cfg.grad_clip > 0.0 && grad.norm > cfg.grad_clip) ? cfg.grad_clip / grad.norm : 1.0;
    const double lr = warmup_lr(cfg, state.step);
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    auto p = params.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grad.values[i] * scale;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[i]);
    }
}

}  // namespace fipo
