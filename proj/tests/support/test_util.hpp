#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "rico/loss.hpp"
#include "rico/model.hpp"
#include "rico/objective.hpp"
#include "rico/rng.hpp"
#include "rico/scan.hpp"
#include "rico/state.hpp"

namespace ricotest {

using namespace rico;

inline ModelConfig small_config(Rng& rng) {
    ModelConfig cfg;
    cfg.vocab_size = int32_t(rng.range(5, 24));
    cfg.embed_dim = int32_t(rng.range(3, 10));
    cfg.state_dim = int32_t(rng.range(2, 7));
    cfg.num_layers = int32_t(rng.range(1, 3));
    cfg.rng_seed = int64_t(rng.next_u64() & 0xffffff);
    return cfg;
}

// Fill every tensor (including gate biases) with uniform noise so the gates
// end up spread over (0,1) instead of clustered at the init value.
inline void randomize_params(ModelParams& p, Rng& rng, double scale = 0.6) {
    for (auto s : tensor_spans(p.t))
        for (auto& v : s) v = rng.uniform(-scale, scale);
}

inline ModelParams random_model(Rng& rng) {
    ModelParams p = init_params(small_config(rng));
    randomize_params(p, rng);
    return p;
}

inline TokenSeq random_tokens(Rng& rng, size_t len, int32_t vocab) {
    TokenSeq t(len);
    for (auto& v : t) v = Token(rng.below(uint64_t(vocab)));
    return t;
}

inline StateStack random_state(const ModelConfig& cfg, Rng& rng, double scale = 0.5) {
    StateStack s = zero_state(cfg);
    for (auto& m : s.layers)
        for (auto& v : m.a) v = rng.uniform(-scale, scale);
    return s;
}

// Force the decay gate to a constant: w_a = 0 and c_a at +-saturation.
inline void force_gate(ModelParams& p, double c_a) {
    for (auto& l : p.t.layers) {
        std::fill(l.w_a.begin(), l.w_a.end(), 0.0);
        l.c_a = c_a;
    }
}

inline double max_abs_diff(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    double mx = 0.0;
    for (size_t t = 0; t < a.size(); ++t)
        for (size_t v = 0; v < a[t].size(); ++v) mx = std::max(mx, std::abs(a[t][v] - b[t][v]));
    return mx;
}

inline double rel_err(double got, double want, double floor = 1e-8) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), floor});
}

// Central-difference gradient of the span loss with respect to the init state.
inline StateStack fd_state_gradient(const ModelParams& p, const TokenSeq& tokens,
                                    const StateStack& init, TokenSpan span, double h = 1e-5) {
    StateStack g = zeros_like(init);
    StateStack probe = init;
    for (size_t l = 0; l < init.layers.size(); ++l)
        for (size_t i = 0; i < init.layers[l].size(); ++i) {
            const double keep = probe.layers[l].a[i];
            probe.layers[l].a[i] = keep + h;
            const double up = sequence_loss(p, tokens, &probe, span).total;
            probe.layers[l].a[i] = keep - h;
            const double dn = sequence_loss(p, tokens, &probe, span).total;
            probe.layers[l].a[i] = keep;
            g.layers[l].a[i] = (up - dn) / (2.0 * h);
        }
    return g;
}

// Central-difference gradients for every parameter entry (zero init).
inline ParamTensors fd_param_gradients(const ModelParams& p, const TokenSeq& tokens,
                                       TokenSpan span, double h = 1e-5) {
    ParamTensors g = zero_param_tensors(p.config);
    ModelParams probe = p;
    auto probe_spans = tensor_spans(probe.t);
    auto grad_spans = tensor_spans(g);
    for (size_t s = 0; s < probe_spans.size(); ++s)
        for (size_t i = 0; i < probe_spans[s].size(); ++i) {
            const double keep = probe_spans[s][i];
            probe_spans[s][i] = keep + h;
            const double up = sequence_loss(probe, tokens, nullptr, span).total;
            probe_spans[s][i] = keep - h;
            const double dn = sequence_loss(probe, tokens, nullptr, span).total;
            probe_spans[s][i] = keep;
            grad_spans[s][i] = (up - dn) / (2.0 * h);
        }
    return g;
}

// Convex surrogate hook: L(h) = 1/2 * ||h - target||_F^2 over all layers.
class QuadraticStateObjective final : public StateObjective {
public:
    explicit QuadraticStateObjective(StateStack target) : target_(std::move(target)) {}

    double value(const StateStack& h) const override {
        StateStack d = h;
        state_axpy(-1.0, target_, d);
        return 0.5 * state_sqnorm(d);
    }

    std::pair<double, StateStack> value_and_grad(const StateStack& h) const override {
        StateStack d = h;
        state_axpy(-1.0, target_, d);
        return {0.5 * state_sqnorm(d), d};
    }

private:
    StateStack target_;
};

// Unique scratch directory under the system temp root.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("rico_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace ricotest
