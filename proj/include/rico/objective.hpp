#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "loss.hpp"
#include "model.hpp"
#include "state.hpp"

namespace rico {

// A differentiable loss over an injected state stack.  The optimizer, the
// leave-one-out machinery and the margin checks are written against this
// interface so that the language-model loss can be swapped for an analytic
// surrogate in tests.
class StateObjective {
public:
    virtual ~StateObjective() = default;
    virtual double value(const StateStack& h) const = 0;
    virtual std::pair<double, StateStack> value_and_grad(const StateStack& h) const = 0;
};

// Question-likelihood loss: cross-entropy of a token sequence conditioned on
// the injected state.  `h` may cover only a retained-layer subset; it is
// expanded with zero layers for the scan and the gradient is restricted back.
class QueryLikelihoodObjective final : public StateObjective {
public:
    QueryLikelihoodObjective(const ModelParams& params, TokenSeq tokens, TokenSpan span,
                             std::vector<uint32_t> retained_layers,
                             ModelCallCounter* calls = nullptr)
        : params_(params),
          tokens_(std::move(tokens)),
          span_(span),
          retained_(std::move(retained_layers)),
          calls_(calls) {}

    double value(const StateStack& h) const override {
        const StateStack full = expand(h);
        return sequence_loss(params_, tokens_, &full, span_, calls_).total;
    }

    std::pair<double, StateStack> value_and_grad(const StateStack& h) const override {
        const StateStack full = expand(h);
        auto [rep, grad] = loss_and_state_grad(params_, tokens_, &full, span_, calls_);
        return {rep.total, restrict(grad)};
    }

    const TokenSeq& tokens() const { return tokens_; }
    TokenSpan span() const { return span_; }

private:
    StateStack expand(const StateStack& h) const {
        if (h.layers.size() != retained_.size())
            throw input_error("objective: state has " + std::to_string(h.layers.size()) +
                              " layers, expected " + std::to_string(retained_.size()));
        StateStack full = zero_state(params_.config);
        for (size_t slot = 0; slot < retained_.size(); ++slot)
            full.layers[retained_[slot]] = h.layers[slot];
        return full;
    }

    StateStack restrict(const StateStack& full) const {
        StateStack out;
        out.layers.reserve(retained_.size());
        for (uint32_t l : retained_) out.layers.push_back(full.layers[l]);
        return out;
    }

    const ModelParams& params_;
    TokenSeq tokens_;
    TokenSpan span_;
    std::vector<uint32_t> retained_;
    ModelCallCounter* calls_;
};

} // namespace rico
