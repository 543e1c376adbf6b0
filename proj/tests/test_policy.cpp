#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fipo/errors.hpp"
#include "fipo/policy.hpp"

using namespace fipo;

namespace {

PolicyShape small_shape() { return {6, 3, 4, 7}; }

PolicyParams random_params(const PolicyShape& shape, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return PolicyParams::random(shape, rng, scale);
}

double logsumexp(const std::vector<double>& v) {
    double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

// Output bias is the last vocab_size entries of the flat vector.
void set_output_bias(PolicyParams& p, const std::vector<double>& bias) {
    auto v = p.values();
    std::copy(bias.begin(), bias.end(), v.begin() + static_cast<std::ptrdiff_t>(p.output_bias_offset()));
}

}  // namespace

TEST_CASE("parameter count is a function of the shape") {
    const PolicyShape s{16, 8, 6, 160};
    CHECK(s.param_count() == 16 * 8 + 160 * 48 + 160 + 16 * 160 + 16);
    CHECK(PolicyParams(s).size() == s.param_count());
    CHECK(s.param_count() == 10544);
    CHECK_THROWS_AS(PolicyParams(PolicyShape{1, 8, 6, 160}), ConfigError);
}

TEST_CASE("zero params give the uniform distribution") {
    const PolicyShape s{16, 8, 6, 160};
    const PolicyParams p(s);
    const std::vector<int> history{3, 4};
    for (double lp : token_log_probs(p, history)) {
        CHECK(lp == doctest::Approx(-std::log(16.0)).epsilon(1e-15));
    }
}

TEST_CASE("two-token softmax with logits (0, ln 3)") {
    PolicyParams p(PolicyShape{2, 2, 2, 3});
    set_output_bias(p, {0.0, std::log(3.0)});
    const auto lp = token_log_probs(p, std::vector<int>{1});
    CHECK(std::abs(lp[0] - std::log(0.25)) < 1e-12);
    CHECK(std::abs(lp[1] - std::log(0.75)) < 1e-12);
}

TEST_CASE("log-probs are normalized for random params and contexts") {
    const PolicyShape s = small_shape();
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        const PolicyParams p = PolicyParams::random(s, rng, 3.0);
        std::vector<int> history(uniform_index(rng, 9));
        for (int& t : history) t = static_cast<int>(uniform_index(rng, s.vocab_size));
        REQUIRE(std::abs(logsumexp(token_log_probs(p, history))) < 1e-9);
    }
}

TEST_CASE("token ids outside the vocabulary are rejected") {
    const PolicyParams p(small_shape());
    CHECK_THROWS_AS(token_log_probs(p, std::vector<int>{6}), InputError);
    CHECK_THROWS_AS(token_log_probs(p, std::vector<int>{-1}), InputError);
}

TEST_CASE("window is right-aligned and left-padded") {
    const PolicyShape s{16, 2, 4, 3};
    CHECK(make_window(s, std::vector<int>{5, 6}) == std::vector<int>{0, 0, 5, 6});
    CHECK(make_window(s, std::vector<int>{1, 2, 3, 4, 5, 6}) == std::vector<int>{3, 4, 5, 6});
}

TEST_CASE("sequence log-probs agree with stepwise token log-probs") {
    const PolicyParams p = random_params(small_shape(), 3);
    const std::vector<int> prompt{1, 2};
    const std::vector<int> response{3, 4, 5, 1};
    const auto seq = sequence_log_probs(p, prompt, response);
    REQUIRE(seq.size() == response.size());
    std::vector<int> history = prompt;
    double product = 1.0;
    for (std::size_t t = 0; t < response.size(); ++t) {
        const double lp = token_log_probs(p, history)[response[t]];
        CHECK(seq[t] == lp);
        product *= std::exp(lp);
        history.push_back(response[t]);
    }
    CHECK(std::accumulate(seq.begin(), seq.end(), 0.0) == doctest::Approx(std::log(product)).epsilon(1e-12));
    CHECK(sequence_log_probs(p, prompt, response) == seq);
}

TEST_CASE("nucleus sampling keeps the smallest prefix reaching top_p") {
    const std::vector<double> probs{0.6, 0.3, 0.1};
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
        REQUIRE(sample_from_probs(probs, 0.5, rng) == 0);
    }
    const std::vector<double> one_hot{0.0, 0.0, 1.0};
    for (int i = 0; i < 200; ++i) {
        REQUIRE(sample_from_probs(one_hot, 1.0, rng) == 2);
    }
}

TEST_CASE("sampled frequencies match softmax probabilities within 4 sigma") {
    const PolicyParams p = random_params(small_shape(), 8, 2.0);
    const std::vector<int> history{2, 3};
    const auto lp = token_log_probs(p, history);
    // PAD is masked, so the reference distribution is renormalized over the other ids.
    std::vector<double> q(lp.size());
    const double keep = 1.0 - std::exp(lp[kPadToken]);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = i == kPadToken ? 0.0 : std::exp(lp[i]) / keep;

    constexpr int kDraws = 100000;
    std::vector<int> counts(q.size(), 0);
    Rng rng(99);
    const SamplingConfig cfg{1.0, 1.0};
    for (int i = 0; i < kDraws; ++i) {
        const SampledToken s = sample_token(p, history, cfg, rng);
        ++counts[s.token];
        REQUIRE(s.log_prob == lp[s.token]);
    }
    CHECK(counts[kPadToken] == 0);
    for (std::size_t i = 1; i < q.size(); ++i) {
        const double freq = static_cast<double>(counts[i]) / kDraws;
        const double sigma = std::sqrt(q[i] * (1.0 - q[i]) / kDraws);
        CHECK(std::abs(freq - q[i]) <= 4.0 * sigma);
    }
}

TEST_CASE("entropy examples and bounds") {
    const PolicyShape s{16, 2, 3, 4};
    std::vector<std::vector<int>> windows{{0, 0, 0}, {1, 2, 3}};
    CHECK(entropy(PolicyParams(s), windows) == doctest::Approx(std::log(16.0)).epsilon(1e-14));

    PolicyParams two(s);
    std::vector<double> bias(16, -1000.0);
    bias[1] = bias[2] = 0.0;
    set_output_bias(two, bias);
    CHECK(std::abs(entropy(two, windows) - std::log(2.0)) < 1e-12);

    PolicyParams det(s);
    bias.assign(16, -1000.0);
    bias[3] = 0.0;
    set_output_bias(det, bias);
    CHECK(std::abs(entropy(det, windows)) < 1e-12);

    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const PolicyParams p = PolicyParams::random(s, rng, 5.0);
        const double h = entropy(p, windows);
        REQUIRE(h >= 0.0);
        REQUIRE(h <= std::log(16.0) + 1e-12);
    }
}

TEST_CASE("backward matches central differences of the summed log-likelihood") {
    const PolicyParams p = random_params(small_shape(), 21);
    const std::vector<int> prompt{1, 2, 3};
    const std::vector<int> response{4, 5, 2, 1};
    ForwardTape tape;
    sequence_log_probs(p, prompt, response, &tape);
    const std::vector<double> ones(response.size(), 1.0);
    const GradVector g = backward(p, tape, ones);

    auto objective = [&](const PolicyParams& q) {
        const auto lp = sequence_log_probs(q, prompt, response);
        return std::accumulate(lp.begin(), lp.end(), 0.0);
    };
    constexpr double h = 1e-5;
    Rng rng(2);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t i = uniform_index(rng, p.size());
        PolicyParams plus = p;
        PolicyParams minus = p;
        plus.values()[i] += h;
        minus.values()[i] -= h;
        const double numeric = (objective(plus) - objective(minus)) / (2 * h);
        worst = std::max(worst, std::abs(g.values[i] - numeric) /
                                    std::max({std::abs(g.values[i]), std::abs(numeric), 1e-6}));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("backward is linear in the seeds and zero for a constant loss") {
    const PolicyParams p = random_params(small_shape(), 22);
    const std::vector<int> prompt{1};
    const std::vector<int> response{2, 3, 4};
    ForwardTape tape;
    sequence_log_probs(p, prompt, response, &tape);
    const std::vector<double> seeds{0.3, -1.1, 0.7};
    std::vector<double> scaled = seeds;
    for (double& s : scaled) s *= 2.5;
    const GradVector a = backward(p, tape, seeds);
    const GradVector b = backward(p, tape, scaled);
    for (std::size_t i = 0; i < p.size(); ++i) {
        REQUIRE(std::abs(b.values[i] - 2.5 * a.values[i]) <= 1e-14 * (1.0 + std::abs(b.values[i])));
    }
    const GradVector zero = backward(p, tape, std::vector<double>(3, 0.0));
    CHECK(zero.norm == 0.0);
}

TEST_CASE("gradient norm is the Euclidean norm") {
    const GradVector g = GradVector::from_values({3.0, 4.0, 12.0});
    CHECK(g.norm == doctest::Approx(13.0).epsilon(1e-12));
}

TEST_CASE("optimizer: zero gradient without decay leaves params unchanged") {
    PolicyParams p = random_params(small_shape(), 1);
    const PolicyParams before = p;
    OptimizerState st = OptimizerState::zeros(p.size());
    OptimizerConfig cfg;
    cfg.weight_decay = 0.0;
    optimizer_step(p, st, GradVector::from_values(std::vector<double>(p.size(), 0.0)), cfg);
    CHECK(p == before);
    CHECK(st.step == 1);
}

TEST_CASE("optimizer: over-threshold gradients are rescaled to the clip norm") {
    const PolicyParams p0 = random_params(small_shape(), 1);
    std::vector<double> raw(p0.size(), 0.0);
    raw[0] = 3.0;
    raw[1] = 4.0;  // norm 5
    std::vector<double> unit = raw;
    for (double& v : unit) v /= 5.0;
    OptimizerConfig cfg;
    cfg.grad_clip = 1.0;

    PolicyParams a = p0;
    PolicyParams b = p0;
    OptimizerState sa = OptimizerState::zeros(p0.size());
    OptimizerState sb = sa;
    optimizer_step(a, sa, GradVector::from_values(raw), cfg);
    optimizer_step(b, sb, GradVector::from_values(unit), cfg);
    CHECK(sa.m[0] == doctest::Approx((1 - cfg.beta1) * 0.6).epsilon(1e-14));
    CHECK(sa.m[1] == doctest::Approx((1 - cfg.beta1) * 0.8).epsilon(1e-14));
    for (std::size_t i = 0; i < p0.size(); ++i) {
        REQUIRE(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-14));
    }
}

TEST_CASE("optimizer is deterministic") {
    const PolicyParams p0 = random_params(small_shape(), 7);
    Rng rng(3);
    std::vector<double> g(p0.size());
    for (double& v : g) v = standard_normal(rng);
    PolicyParams a = p0;
    PolicyParams b = p0;
    OptimizerState sa = OptimizerState::zeros(p0.size());
    OptimizerState sb = sa;
    for (int k = 0; k < 3; ++k) {
        optimizer_step(a, sa, GradVector::from_values(g), {});
        optimizer_step(b, sb, GradVector::from_values(g), {});
    }
    CHECK(a == b);
    CHECK(sa == sb);
}

TEST_CASE("warmup ramps linearly to the base rate") {
    OptimizerConfig cfg;
    cfg.lr = 1e-3;
    cfg.warmup_steps = 10;
    CHECK(warmup_lr(cfg, 0) == doctest::Approx(1e-4));
    CHECK(warmup_lr(cfg, 4) == doctest::Approx(5e-4));
    CHECK(warmup_lr(cfg, 9) == doctest::Approx(1e-3));
    CHECK(warmup_lr(cfg, 500) == doctest::Approx(1e-3));
    cfg.warmup_steps = 0;
    CHECK(warmup_lr(cfg, 0) == doctest::Approx(1e-3));
}

TEST_CASE("non-finite activations raise a numeric error") {
    PolicyParams p = random_params(small_shape(), 9);
    const std::vector<int> prompt{1};
    const std::vector<int> response{2, 3};
    ForwardTape tape;
    sequence_log_probs(p, prompt, response, &tape);
    const std::vector<double> seeds{std::nan(""), 1.0};
    CHECK_THROWS_AS(backward(p, tape, seeds), NumericError);
}
