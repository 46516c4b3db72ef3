#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "adamw.hpp"
#include "errors.hpp"
#include "objective.hpp"
#include "ranking.hpp"
#include "state.hpp"
#include "state_store.hpp"

namespace rico {

// Relaxed document weights alpha in [0,1]^k with their document ids.
struct MixtureWeights {
    std::vector<std::string> doc_ids;
    std::vector<double> alpha;

    void validate() const {
        if (doc_ids.empty() || doc_ids.size() != alpha.size())
            throw input_error("MixtureWeights: ids/alpha size mismatch or empty");
        std::unordered_set<std::string> seen;
        for (const auto& id : doc_ids)
            if (!seen.insert(id).second)
                throw input_error("MixtureWeights: duplicate doc_id '" + id + "'");
        for (double a : alpha)
            if (!(a >= 0.0 && a <= 1.0))
                throw input_error("MixtureWeights: alpha outside [0,1]");
    }
};

enum class OptimizeObjective { question_loss, oracle_loss };

struct OptimizerConfig {
    size_t steps = 10;
    double learning_rate = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    OptimizeObjective objective = OptimizeObjective::question_loss;
};

// Loss and weight snapshots per optimization step plus the instrumented pass
// counts (a full run costs exactly `steps` forward and `steps` backward).
struct OptimizationTrace {
    std::vector<double> losses;              // loss at the weights each step started from
    std::vector<std::vector<double>> alphas; // weights after each step (post-projection)
    uint64_t forward_passes = 0;
    uint64_t backward_passes = 0;
};

inline MixtureWeights uniform_weights(const std::vector<std::string>& doc_ids) {
    MixtureWeights w;
    w.doc_ids = doc_ids;
    w.alpha.assign(doc_ids.size(), 1.0 / double(doc_ids.size()));
    return w;
}

inline std::vector<std::string> all_doc_ids(const StateIndex& index) {
    std::vector<std::string> ids;
    ids.reserve(index.size());
    for (const auto& r : index.records) ids.push_back(r.doc_id);
    return ids;
}

namespace detail {

inline std::vector<StateStack> gather_states(const StateIndex& index,
                                             const std::vector<std::string>& doc_ids) {
    std::vector<StateStack> states;
    states.reserve(doc_ids.size());
    for (const auto& id : doc_ids) {
        const DocumentStateRecord* rec = index.find(id);
        if (!rec) throw input_error("doc_id '" + id + "' not present in index");
        states.push_back(index.record_state(*rec));
    }
    return states;
}

inline StateStack mix_states(const std::vector<StateStack>& states,
                             const std::vector<double>& alpha) {
    StateStack h = zeros_like(states.front());
    for (size_t i = 0; i < states.size(); ++i)
        if (alpha[i] != 0.0) state_axpy(alpha[i], states[i], h);
    return h;
}

} // namespace detail

// Per-layer weighted sum of document states, h(alpha) = sum_i alpha_i h_i.
inline StateStack mixture_state(const StateIndex& index, const MixtureWeights& w) {
    w.validate();
    const auto states = detail::gather_states(index, w.doc_ids);
    return detail::mix_states(states, w.alpha);
}

// ---- mixture-weight optimization -------------------------------------------

// Projected AdamW on L(alpha) = objective(sum_i alpha_i h_i).  The chain rule
// gives dL/dalpha_i = <h_i, dL/dh>; weights are clamped to [0,1] after every
// step.  steps == 0 returns the init unchanged with an empty trace.
inline std::pair<MixtureWeights, OptimizationTrace>
optimize_weights_core(const StateObjective& objective, const std::vector<StateStack>& states,
                      MixtureWeights init, const OptimizerConfig& cfg) {
    init.validate();
    if (states.size() != init.doc_ids.size())
        throw input_error("optimize_weights_core: states/weights size mismatch");

    OptimizationTrace trace;
    MixtureWeights w = std::move(init);
    AdamW opt({cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay});
    std::vector<double> grad(w.alpha.size());

    for (size_t step = 0; step < cfg.steps; ++step) {
        const StateStack h = detail::mix_states(states, w.alpha);
        auto [loss, g] = objective.value_and_grad(h);
        trace.forward_passes++;
        trace.backward_passes++;
        for (size_t i = 0; i < states.size(); ++i) grad[i] = state_dot(states[i], g);
        opt.step(std::span<double>(w.alpha), std::span<const double>(grad));
        for (double& a : w.alpha) a = std::clamp(a, 0.0, 1.0);
        trace.losses.push_back(loss);
        trace.alphas.push_back(w.alpha);
    }
    return {std::move(w), std::move(trace)};
}

// ---- gradient scoring --------------------------------------------------------

struct UniformInit {};
struct ZeroInit {};
using GradScoreInit = std::variant<UniformInit, ZeroInit, MixtureWeights>;

namespace detail {

inline QueryLikelihoodObjective make_lm_objective(const ModelParams& params,
                                                  const StateIndex& index,
                                                  const TokenSeq& query_tokens,
                                                  const TokenSeq* answer_tokens,
                                                  OptimizeObjective kind,
                                                  ModelCallCounter* calls) {
    if (query_tokens.empty()) throw input_error("query must be nonempty");
    TokenSeq tokens = query_tokens;
    if (kind == OptimizeObjective::oracle_loss) {
        if (!answer_tokens || answer_tokens->empty())
            throw input_error("oracle-loss objective requires answer tokens");
        tokens.insert(tokens.end(), answer_tokens->begin(), answer_tokens->end());
    }
    if (tokens.size() < 2)
        throw input_error("need at least two tokens to score a span");
    const TokenSpan span{1, tokens.size()};
    return QueryLikelihoodObjective(params, std::move(tokens), span, index.retained_layers(),
                                    calls);
}

} // namespace detail

// Score every indexed document by <h_d, -dL/dh> where the gradient is taken at
// the init-mode mixture.  Exactly one forward plus one backward model pass.
inline RankedList grad_score(const ModelParams& params, const StateIndex& index,
                             const TokenSeq& query_tokens, const GradScoreInit& init_mode,
                             ModelCallCounter* calls = nullptr) {
    if (index.size() == 0) throw input_error("grad_score: empty index");
    const auto objective = detail::make_lm_objective(params, index, query_tokens, nullptr,
                                                     OptimizeObjective::question_loss, calls);

    StateStack h;
    if (std::holds_alternative<UniformInit>(init_mode)) {
        h = mixture_state(index, uniform_weights(all_doc_ids(index)));
    } else if (std::holds_alternative<ZeroInit>(init_mode)) {
        const auto retained = index.retained_layers();
        h.layers.assign(retained.size(), Mat(index.state_dim, index.embed_dim));
    } else {
        h = mixture_state(index, std::get<MixtureWeights>(init_mode));
    }

    StateStack g = objective.value_and_grad(h).second;
    state_scale(g, -1.0);
    return topk_inner_product(index, g, index.size());
}

// Full multistep optimization against the model loss.  `init.doc_ids` selects
// the candidate documents; answer tokens are required for the oracle loss.
inline std::pair<MixtureWeights, OptimizationTrace>
optimize_weights(const ModelParams& params, const StateIndex& index, const TokenSeq& query_tokens,
                 const MixtureWeights& init, const OptimizerConfig& cfg,
                 const TokenSeq* answer_tokens = nullptr) {
    init.validate();
    ModelCallCounter calls;
    const auto objective =
        detail::make_lm_objective(params, index, query_tokens, answer_tokens, cfg.objective,
                                  &calls);
    const auto states = detail::gather_states(index, init.doc_ids);
    return optimize_weights_core(objective, states, init, cfg);
}

// ---- warm start & reranking --------------------------------------------------

// Min-max normalize coarse retriever scores into [0.1, 1.0]; documents the
// coarse retriever did not score get 0.1, and a degenerate (constant) score
// range maps everything to the midpoint 0.55.
inline MixtureWeights warm_start(const RankedList& coarse_scores,
                                 const std::vector<std::string>& doc_ids) {
    if (doc_ids.empty()) throw input_error("warm_start: empty doc_ids");
    std::unordered_map<std::string, double> score;
    for (const auto& s : coarse_scores) score.emplace(s.doc_id, s.score);

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& id : doc_ids) {
        auto it = score.find(id);
        if (it == score.end()) continue;
        lo = std::min(lo, it->second);
        hi = std::max(hi, it->second);
    }

    MixtureWeights w;
    w.doc_ids = doc_ids;
    w.alpha.reserve(doc_ids.size());
    for (const auto& id : doc_ids) {
        auto it = score.find(id);
        if (it == score.end()) {
            w.alpha.push_back(0.1);
        } else if (!(hi > lo)) {
            w.alpha.push_back(0.55);
        } else {
            w.alpha.push_back(0.1 + 0.9 * (it->second - lo) / (hi - lo));
        }
    }
    w.validate();
    return w;
}

// Learned weights used directly as the ranking score.
inline RankedList rerank(const MixtureWeights& w) {
    RankedList r;
    r.reserve(w.doc_ids.size());
    for (size_t i = 0; i < w.doc_ids.size(); ++i) r.push_back({w.doc_ids[i], w.alpha[i]});
    sort_ranked(r);
    return r;
}

// ---- leave-one-out and the gradient upper bound ------------------------------

// Order-agnostic leave-one-out loss: loo_i = L(u) - L(u with entry i zeroed)
// at the uniform mixture u = (1/k, ..., 1/k).  Positive means dropping the
// document lowers the loss.
inline std::vector<double> loo_loss_core(const StateObjective& objective,
                                         const std::vector<StateStack>& states) {
    if (states.size() < 2) throw input_error("loo_loss: need at least two documents");
    const size_t k = states.size();
    std::vector<double> alpha(k, 1.0 / double(k));
    const StateStack h_full = detail::mix_states(states, alpha);
    const double base = objective.value(h_full);
    std::vector<double> out(k, 0.0);
    for (size_t i = 0; i < k; ++i) {
        StateStack h = h_full;
        state_axpy(-alpha[i], states[i], h);
        out[i] = base - objective.value(h);
    }
    return out;
}

struct Prop1Row {
    double loo = 0.0;
    double bound = 0.0; // <h_i, dL/dh> at the uniform mixture
    double slack = 0.0; // bound - loo; nonnegative for convex losses with aligned gradients
};

inline std::vector<Prop1Row> prop1_margin_core(const StateObjective& objective,
                                               const std::vector<StateStack>& states) {
    const auto loo = loo_loss_core(objective, states);
    const size_t k = states.size();
    std::vector<double> alpha(k, 1.0 / double(k));
    const StateStack h = detail::mix_states(states, alpha);
    const StateStack g = objective.value_and_grad(h).second;
    std::vector<Prop1Row> rows(k);
    for (size_t i = 0; i < k; ++i) {
        rows[i].loo = loo[i];
        rows[i].bound = state_dot(states[i], g);
        rows[i].slack = rows[i].bound - rows[i].loo;
    }
    return rows;
}

inline std::vector<double> loo_loss(const ModelParams& params, const StateIndex& index,
                                    const TokenSeq& query_tokens,
                                    const std::vector<std::string>& docs,
                                    ModelCallCounter* calls = nullptr) {
    const auto objective = detail::make_lm_objective(params, index, query_tokens, nullptr,
                                                     OptimizeObjective::question_loss, calls);
    return loo_loss_core(objective, detail::gather_states(index, docs));
}

inline std::vector<Prop1Row> prop1_margin(const ModelParams& params, const StateIndex& index,
                                          const TokenSeq& query_tokens,
                                          const std::vector<std::string>& docs,
                                          ModelCallCounter* calls = nullptr) {
    const auto objective = detail::make_lm_objective(params, index, query_tokens, nullptr,
                                                     OptimizeObjective::question_loss, calls);
    return prop1_margin_core(objective, detail::gather_states(index, docs));
}

} // namespace rico
