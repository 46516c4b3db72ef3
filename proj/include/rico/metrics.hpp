#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "ranking.hpp"
#include "state.hpp"

namespace rico {

// query_id -> (doc_id -> integer relevance grade >= 0)
using RelevanceJudgments = std::map<std::string, std::unordered_map<std::string, int>>;

struct QueryMetrics {
    std::string query_id;
    double precision = 0.0;
    double recall = 0.0;
    double ndcg = 0.0;
    double map = 0.0;
};

struct MetricReport {
    size_t k = 0;
    std::vector<QueryMetrics> per_query;
    size_t skipped_no_relevant = 0; // queries without a positive grade
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    double mean_ndcg = 0.0;
    double mean_map = 0.0;
};

namespace detail {

inline int grade_of(const std::unordered_map<std::string, int>& judg, const std::string& doc_id) {
    auto it = judg.find(doc_id);
    return it == judg.end() ? 0 : it->second;
}

inline size_t total_relevant(const std::unordered_map<std::string, int>& judg) {
    size_t r = 0;
    for (const auto& [_, g] : judg) r += g > 0 ? 1 : 0;
    return r;
}

} // namespace detail

// Binary relevance (grade > 0): precision = hits/k, recall = hits/R.
inline std::pair<double, double>
precision_recall_at_k(const RankedList& ranked, const std::unordered_map<std::string, int>& judg,
                      size_t k) {
    if (k < 1) throw input_error("precision_recall_at_k: k must be >= 1");
    const size_t R = detail::total_relevant(judg);
    if (R == 0) throw input_error("precision_recall_at_k: query has no relevant documents");
    size_t hits = 0;
    const size_t depth = std::min(k, ranked.size());
    for (size_t i = 0; i < depth; ++i)
        if (detail::grade_of(judg, ranked[i].doc_id) > 0) ++hits;
    return {double(hits) / double(k), double(hits) / double(R)};
}

// DCG = sum_{i<=k} 2^{rel_i} / log2(i+1) -- note the gain is 2^rel, not
// 2^rel - 1, so an irrelevant document still contributes 1/log2(i+1).  The
// ideal DCG ranks all judged grades descending, padded with zero grades to the
// evaluated depth, which keeps the ratio in [0,1].
inline double ndcg_at_k(const RankedList& ranked, const std::unordered_map<std::string, int>& judg,
                        size_t k) {
    if (k < 1) throw input_error("ndcg_at_k: k must be >= 1");
    if (detail::total_relevant(judg) == 0)
        throw input_error("ndcg_at_k: query has no relevant documents");
    const size_t depth = std::min(k, ranked.size());
    if (depth == 0) return 0.0;

    double dcg = 0.0;
    for (size_t i = 0; i < depth; ++i) {
        const int rel = detail::grade_of(judg, ranked[i].doc_id);
        dcg += std::exp2(double(rel)) / std::log2(double(i + 2));
    }

    std::vector<int> grades;
    grades.reserve(judg.size());
    for (const auto& [_, g] : judg) grades.push_back(g);
    std::sort(grades.begin(), grades.end(), std::greater<int>());
    grades.resize(depth, 0); // pad (or truncate) to the evaluated depth

    double idcg = 0.0;
    for (size_t i = 0; i < depth; ++i)
        idcg += std::exp2(double(grades[i])) / std::log2(double(i + 2));
    return idcg > 0.0 ? dcg / idcg : 0.0;
}

// MAP = (sum of Precision@r over relevant ranks r <= k) / R, with R the total
// number of relevant documents for the query.
inline double map_at_k(const RankedList& ranked, const std::unordered_map<std::string, int>& judg,
                       size_t k) {
    if (k < 1) throw input_error("map_at_k: k must be >= 1");
    const size_t R = detail::total_relevant(judg);
    if (R == 0) throw input_error("map_at_k: query has no relevant documents");
    const size_t depth = std::min(k, ranked.size());
    double sum = 0.0;
    size_t hits = 0;
    for (size_t i = 0; i < depth; ++i) {
        if (detail::grade_of(judg, ranked[i].doc_id) > 0) {
            ++hits;
            sum += double(hits) / double(i + 1);
        }
    }
    return sum / double(R);
}

// Aggregate all four metrics over a set of per-query rankings; queries without
// any positive grade are excluded from the means and counted.
inline MetricReport
evaluate_rankings(const std::map<std::string, RankedList>& rankings,
                  const RelevanceJudgments& judgments, size_t k) {
    MetricReport report;
    report.k = k;
    for (const auto& [query_id, ranked] : rankings) {
        auto it = judgments.find(query_id);
        if (it == judgments.end() || detail::total_relevant(it->second) == 0) {
            report.skipped_no_relevant++;
            continue;
        }
        QueryMetrics qm;
        qm.query_id = query_id;
        const auto [p, r] = precision_recall_at_k(ranked, it->second, k);
        qm.precision = p;
        qm.recall = r;
        qm.ndcg = ndcg_at_k(ranked, it->second, k);
        qm.map = map_at_k(ranked, it->second, k);
        report.per_query.push_back(qm);
    }
    if (!report.per_query.empty()) {
        for (const auto& qm : report.per_query) {
            report.mean_precision += qm.precision;
            report.mean_recall += qm.recall;
            report.mean_ndcg += qm.ndcg;
            report.mean_map += qm.map;
        }
        const double n = double(report.per_query.size());
        report.mean_precision /= n;
        report.mean_recall /= n;
        report.mean_ndcg /= n;
        report.mean_map /= n;
    }
    return report;
}

// ---- generation-side signal ---------------------------------------------------

// Conditioning for answer-loss measurements: either an injected full-model
// state stack or document token sequences concatenated before the query.
using AnswerCondition = std::variant<StateStack, std::vector<TokenSeq>>;

// Assembles the scored sequence from document prefixes and the query; the
// default simply concatenates (docs..., query).
using PromptBuilder =
    std::function<TokenSeq(const std::vector<TokenSeq>& docs, const TokenSeq& query)>;

inline TokenSeq concat_prompt(const std::vector<TokenSeq>& docs, const TokenSeq& query) {
    TokenSeq out;
    for (const auto& d : docs) out.insert(out.end(), d.begin(), d.end());
    out.insert(out.end(), query.begin(), query.end());
    return out;
}

// CE(answer | condition, query) - CE(answer | query).  Negative values mean
// the conditioning helped.  A zero state (or no documents) gives exactly 0.
inline double answer_loss_delta(const ModelParams& params, const PromptBuilder& builder,
                                const TokenSeq& query, const TokenSeq& answer,
                                const AnswerCondition& condition,
                                ModelCallCounter* calls = nullptr) {
    if (answer.empty()) throw input_error("answer_loss_delta: empty answer");
    if (query.empty()) throw input_error("answer_loss_delta: empty query");

    const TokenSeq bare = builder({}, query);
    TokenSeq bare_seq = bare;
    bare_seq.insert(bare_seq.end(), answer.begin(), answer.end());
    const TokenSpan bare_span{bare.size(), bare_seq.size()};
    const double base = sequence_loss(params, bare_seq, nullptr, bare_span, calls).total;

    double conditioned = 0.0;
    if (std::holds_alternative<StateStack>(condition)) {
        const StateStack& h = std::get<StateStack>(condition);
        conditioned = sequence_loss(params, bare_seq, &h, bare_span, calls).total;
    } else {
        const auto& docs = std::get<std::vector<TokenSeq>>(condition);
        const TokenSeq prompt = builder(docs, query);
        TokenSeq seq = prompt;
        seq.insert(seq.end(), answer.begin(), answer.end());
        const TokenSpan span{prompt.size(), seq.size()};
        conditioned = sequence_loss(params, seq, nullptr, span, calls).total;
    }
    return conditioned - base;
}

} // namespace rico
