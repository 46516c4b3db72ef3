#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "corpus.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "jsonl.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "ranking.hpp"
#include "rng.hpp"
#include "state_store.hpp"

namespace rico {

enum class RerankMethod {
    bm25,
    cosine,
    per_doc_loss,
    grad_uniform,
    grad_zero,
    multistep,
    warmstart_multistep,
};

inline RerankMethod parse_method(const std::string& name) {
    if (name == "bm25") return RerankMethod::bm25;
    if (name == "cosine") return RerankMethod::cosine;
    if (name == "per-doc-loss") return RerankMethod::per_doc_loss;
    if (name == "grad-uniform") return RerankMethod::grad_uniform;
    if (name == "grad-zero") return RerankMethod::grad_zero;
    if (name == "multistep") return RerankMethod::multistep;
    if (name == "warmstart-multistep") return RerankMethod::warmstart_multistep;
    throw input_error("unknown method '" + name + "'");
}

inline const char* method_name(RerankMethod m) {
    switch (m) {
        case RerankMethod::bm25: return "bm25";
        case RerankMethod::cosine: return "cosine";
        case RerankMethod::per_doc_loss: return "per-doc-loss";
        case RerankMethod::grad_uniform: return "grad-uniform";
        case RerankMethod::grad_zero: return "grad-zero";
        case RerankMethod::multistep: return "multistep";
        case RerankMethod::warmstart_multistep: return "warmstart-multistep";
    }
    return "?";
}

enum class CandidateScope {
    judged,    // the query's judged documents (supporting + sampled distractors)
    all_facts, // every fact document in the store
};

struct ExperimentConfig {
    RerankMethod method = RerankMethod::multistep;
    size_t k = 10; // metric depth
    OptimizerConfig opt;
    CandidateScope scope = CandidateScope::judged;
    std::vector<std::string> families = {"main"};
    bool include_held_out = true;
    uint64_t seed = 1;
};

struct QueryRunResult {
    std::string query_id;
    RankedList ranking;
    uint64_t forward_passes = 0;
    uint64_t backward_passes = 0;
};

struct RerankResult {
    std::vector<QueryRunResult> per_query;
    MetricReport metrics;
    uint64_t total_forward = 0;
    uint64_t total_backward = 0;
};

namespace detail {

inline StateIndex sub_index(const StateIndex& index, const std::vector<std::string>& doc_ids) {
    std::set<std::string> wanted(doc_ids.begin(), doc_ids.end());
    StateIndex out;
    out.full_layers = index.full_layers;
    out.state_dim = index.state_dim;
    out.embed_dim = index.embed_dim;
    out.layer_mask = index.layer_mask;
    out.fingerprint = index.fingerprint;
    for (const auto& r : index.records)
        if (wanted.count(r.doc_id)) out.records.push_back(r);
    if (out.records.size() != wanted.size())
        throw input_error("sub_index: some candidate documents are missing from the index");
    return out;
}

inline RankedList filter_ranking(const RankedList& ranking,
                                 const std::vector<std::string>& doc_ids) {
    std::set<std::string> wanted(doc_ids.begin(), doc_ids.end());
    RankedList out;
    for (const auto& s : ranking)
        if (wanted.count(s.doc_id)) out.push_back(s);
    return out;
}

// Query state restricted to the index's retained layers.
inline StateStack query_state_for(const ModelParams& params, const StateIndex& index,
                                  const TokenSeq& query_tokens) {
    const StateStack full = forward_scan(params, query_tokens).final_state;
    StateStack out;
    for (uint32_t l : index.retained_layers()) out.layers.push_back(full.layers[l]);
    return out;
}

} // namespace detail

// Candidate documents for one query under a scope.
inline std::vector<std::string> candidate_doc_ids(const Corpus& corpus, const CorpusQuery& query,
                                                  CandidateScope scope) {
    std::vector<std::string> ids;
    if (scope == CandidateScope::all_facts) {
        for (const auto& d : corpus.docs)
            if (d.family == "fact") ids.push_back(d.doc_id);
    } else {
        auto it = corpus.judgments.find(query.query_id);
        if (it == corpus.judgments.end())
            throw input_error("no judgments for query " + query.query_id);
        for (const auto& [doc_id, _] : it->second) ids.push_back(doc_id);
        std::sort(ids.begin(), ids.end());
    }
    return ids;
}

// Runs the configured method over every selected query and evaluates the
// rankings.  The instrumented model-call counts are recorded per query.
inline RerankResult run_rerank_experiment(const ModelParams& params, const StateIndex& index,
                                          const Corpus& corpus, const ExperimentConfig& cfg) {
    if (corpus.judgments.empty()) throw input_error("rerank experiment requires judgments");

    std::optional<Bm25Index> bm25;
    const bool needs_bm25 = cfg.method == RerankMethod::bm25 ||
                            cfg.method == RerankMethod::warmstart_multistep;
    if (needs_bm25) {
        std::vector<std::pair<std::string, std::string>> id_text;
        for (const auto& d : corpus.docs)
            if (d.family == "fact") id_text.emplace_back(d.doc_id, d.text);
        bm25 = bm25_build(id_text);
    }

    RerankResult result;
    std::map<std::string, RankedList> rankings;
    for (const auto& query : corpus.queries) {
        if (std::find(cfg.families.begin(), cfg.families.end(), query.family) ==
            cfg.families.end())
            continue;
        if (!cfg.include_held_out && query.held_out) continue;

        const auto candidates = candidate_doc_ids(corpus, query, cfg.scope);
        const StateIndex sub = detail::sub_index(index, candidates);
        const TokenSeq q_tokens = corpus.vocab.tokenize(query.question);
        const TokenSeq a_tokens = corpus.vocab.tokenize(query.answer);

        QueryRunResult run;
        run.query_id = query.query_id;
        ModelCallCounter calls;

        switch (cfg.method) {
            case RerankMethod::bm25:
                run.ranking = detail::filter_ranking(
                    bm25_score(*bm25, query.question, corpus.docs.size()), candidates);
                break;
            case RerankMethod::cosine: {
                const StateStack qs = detail::query_state_for(params, sub, q_tokens);
                calls.forward++; // the query scan
                run.ranking = cosine_state_score(sub, qs, sub.size());
                break;
            }
            case RerankMethod::per_doc_loss:
                run.ranking = per_doc_loss_score(params, sub, q_tokens, sub.size(), &calls);
                break;
            case RerankMethod::grad_uniform:
                run.ranking = grad_score(params, sub, q_tokens, UniformInit{}, &calls);
                break;
            case RerankMethod::grad_zero:
                run.ranking = grad_score(params, sub, q_tokens, ZeroInit{}, &calls);
                break;
            case RerankMethod::multistep: {
                auto [w, trace] =
                    optimize_weights(params, sub, q_tokens, uniform_weights(candidates), cfg.opt,
                                     &a_tokens);
                run.ranking = rerank(w);
                calls.forward += trace.forward_passes;
                calls.backward += trace.backward_passes;
                break;
            }
            case RerankMethod::warmstart_multistep: {
                const RankedList coarse = detail::filter_ranking(
                    bm25_score(*bm25, query.question, corpus.docs.size()), candidates);
                auto [w, trace] = optimize_weights(params, sub, q_tokens,
                                                   warm_start(coarse, candidates), cfg.opt,
                                                   &a_tokens);
                run.ranking = rerank(w);
                calls.forward += trace.forward_passes;
                calls.backward += trace.backward_passes;
                break;
            }
        }

        run.forward_passes = calls.forward;
        run.backward_passes = calls.backward;
        result.total_forward += calls.forward;
        result.total_backward += calls.backward;
        rankings[run.query_id] = run.ranking;
        result.per_query.push_back(std::move(run));
    }

    result.metrics = evaluate_rankings(rankings, corpus.judgments, cfg.k);
    return result;
}

// Seeded random permutation of a candidate set, as a ranking.
inline RankedList random_permutation_ranking(const std::vector<std::string>& doc_ids, Rng& rng) {
    std::vector<std::string> ids = doc_ids;
    rng.shuffle(ids);
    RankedList out;
    out.reserve(ids.size());
    for (size_t i = 0; i < ids.size(); ++i)
        out.push_back({ids[i], double(ids.size() - i)});
    return out;
}

// ---- loss landscape -------------------------------------------------------------

struct LandscapeCell {
    double alpha_a = 0.0;
    double alpha_b = 0.0;
    double question_loss = 0.0;
    double answer_loss = 0.0;
};

struct LandscapeResult {
    std::vector<LandscapeCell> grid; // row-major over (alpha_a, alpha_b)
    size_t resolution = 0;
    MixtureWeights optimized;
    OptimizationTrace trace;
    uint64_t grid_forward_passes = 0;
};

// Question and answer loss over an (alpha_a, alpha_b) grid on [0,1]^2 for a
// two-document mixture, one forward pass per cell, plus the optimizer
// trajectory from `start` (uniform 0.5/0.5 when empty).
inline LandscapeResult run_landscape(const ModelParams& params, const StateIndex& index,
                                     const Corpus& corpus, const std::string& query_id,
                                     const std::string& doc_a, const std::string& doc_b,
                                     size_t resolution, const OptimizerConfig& opt,
                                     std::optional<MixtureWeights> start = std::nullopt) {
    if (resolution < 2) throw input_error("run_landscape: resolution must be >= 2");
    const CorpusQuery* query = nullptr;
    for (const auto& q : corpus.queries)
        if (q.query_id == query_id) query = &q;
    if (!query) throw input_error("unknown query_id '" + query_id + "'");

    const TokenSeq q_tokens = corpus.vocab.tokenize(query->question);
    const TokenSeq a_tokens = corpus.vocab.tokenize(query->answer);
    TokenSeq seq = q_tokens;
    seq.insert(seq.end(), a_tokens.begin(), a_tokens.end());
    const TokenSpan span{1, seq.size()};
    const size_t question_tokens = q_tokens.size() - 1; // positions 1..Tq-1

    const StateIndex sub = detail::sub_index(index, {doc_a, doc_b});
    const StateStack ha = sub.record_state(*sub.find(doc_a));
    const StateStack hb = sub.record_state(*sub.find(doc_b));
    const auto retained = sub.retained_layers();

    LandscapeResult result;
    result.resolution = resolution;
    result.grid.reserve(resolution * resolution);
    ModelCallCounter calls;
    for (size_t ia = 0; ia < resolution; ++ia) {
        const double alpha_a = double(ia) / double(resolution - 1);
        for (size_t ib = 0; ib < resolution; ++ib) {
            const double alpha_b = double(ib) / double(resolution - 1);
            StateStack h = zeros_like(ha);
            state_axpy(alpha_a, ha, h);
            state_axpy(alpha_b, hb, h);
            StateStack full = zero_state(params.config);
            for (size_t slot = 0; slot < retained.size(); ++slot)
                full.layers[retained[slot]] = h.layers[slot];
            const auto rep = sequence_loss(params, seq, &full, span, &calls);
            LandscapeCell cell;
            cell.alpha_a = alpha_a;
            cell.alpha_b = alpha_b;
            for (size_t i = 0; i < rep.per_token.size(); ++i)
                (i < question_tokens ? cell.question_loss : cell.answer_loss) += rep.per_token[i];
            result.grid.push_back(cell);
        }
    }
    result.grid_forward_passes = calls.forward;

    MixtureWeights init;
    if (start) {
        init = *start;
    } else {
        init.doc_ids = {doc_a, doc_b};
        init.alpha = {0.5, 0.5};
    }
    auto [w, trace] = optimize_weights(params, sub, q_tokens, init, opt, &a_tokens);
    result.optimized = std::move(w);
    result.trace = std::move(trace);
    return result;
}

// ---- document ordering -----------------------------------------------------------

struct OrderingRow {
    std::string query_id;
    double delta_most_relevant_last = 0.0;
    double delta_most_relevant_first = 0.0;
};

struct OrderingResult {
    std::vector<OrderingRow> rows;
    double mean_last = 0.0;
    double mean_first = 0.0;
};

// For every query with at least two positively graded documents, compare the
// answer-loss delta when concatenated docs are ordered most-relevant-last
// versus most-relevant-first (ties keep ascending doc_id order).
inline OrderingResult run_ordering_experiment(const ModelParams& params, const Corpus& corpus) {
    OrderingResult result;
    for (const auto& query : corpus.queries) {
        auto jt = corpus.judgments.find(query.query_id);
        if (jt == corpus.judgments.end()) continue;
        std::vector<std::pair<std::string, int>> graded;
        for (const auto& [doc_id, grade] : jt->second)
            if (grade > 0) graded.emplace_back(doc_id, grade);
        if (graded.size() < 2) continue;
        std::sort(graded.begin(), graded.end()); // canonical tie order: doc_id ascending

        std::vector<std::pair<std::string, int>> asc = graded; // least relevant first
        std::stable_sort(asc.begin(), asc.end(),
                         [](const auto& a, const auto& b) { return a.second < b.second; });
        std::vector<std::pair<std::string, int>> desc = graded;
        std::stable_sort(desc.begin(), desc.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });

        auto tokens_of = [&](const std::vector<std::pair<std::string, int>>& order) {
            std::vector<TokenSeq> docs;
            for (const auto& [doc_id, _] : order) docs.push_back(corpus.doc_tokens(doc_id));
            return docs;
        };
        const TokenSeq q_tokens = corpus.vocab.tokenize(query.question);
        const TokenSeq a_tokens = corpus.vocab.tokenize(query.answer);

        OrderingRow row;
        row.query_id = query.query_id;
        row.delta_most_relevant_last = answer_loss_delta(
            params, concat_prompt, q_tokens, a_tokens, AnswerCondition(tokens_of(asc)));
        row.delta_most_relevant_first = answer_loss_delta(
            params, concat_prompt, q_tokens, a_tokens, AnswerCondition(tokens_of(desc)));
        result.rows.push_back(std::move(row));
    }
    if (!result.rows.empty()) {
        for (const auto& r : result.rows) {
            result.mean_last += r.delta_most_relevant_last;
            result.mean_first += r.delta_most_relevant_first;
        }
        result.mean_last /= double(result.rows.size());
        result.mean_first /= double(result.rows.size());
    }
    return result;
}

// ---- result emission ---------------------------------------------------------------

inline void write_rankings_jsonl(const std::filesystem::path& path, const RerankResult& result) {
    std::vector<Json> rows;
    for (const auto& run : result.per_query) {
        Json ranking = Json::array();
        for (const auto& s : run.ranking) ranking.push_back(Json::array({s.doc_id, s.score}));
        rows.push_back(Json{{"query_id", run.query_id},
                            {"ranking", ranking},
                            {"forward_passes", run.forward_passes},
                            {"backward_passes", run.backward_passes}});
    }
    write_jsonl(path, rows);
}

inline void write_metrics_csv(const std::filesystem::path& path, const MetricReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw format_error(format_issue::malformed, "cannot open for writing: " + path.string());
    out << "query_id,metric,k,value\n";
    char buf[64];
    auto emit = [&](const std::string& qid, const char* metric, double value) {
        std::snprintf(buf, sizeof buf, "%.17g", value);
        out << qid << ',' << metric << ',' << report.k << ',' << buf << '\n';
    };
    for (const auto& qm : report.per_query) {
        emit(qm.query_id, "precision", qm.precision);
        emit(qm.query_id, "recall", qm.recall);
        emit(qm.query_id, "ndcg", qm.ndcg);
        emit(qm.query_id, "map", qm.map);
    }
    emit("MEAN", "precision", report.mean_precision);
    emit("MEAN", "recall", report.mean_recall);
    emit("MEAN", "ndcg", report.mean_ndcg);
    emit("MEAN", "map", report.mean_map);
}

inline void write_calls_csv(const std::filesystem::path& path, const RerankResult& result) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw format_error(format_issue::malformed, "cannot open for writing: " + path.string());
    out << "query_id,forward_passes,backward_passes\n";
    for (const auto& run : result.per_query)
        out << run.query_id << ',' << run.forward_passes << ',' << run.backward_passes << '\n';
    out << "TOTAL," << result.total_forward << ',' << result.total_backward << '\n';
}

inline void write_trace_jsonl(const std::filesystem::path& path, const OptimizationTrace& trace) {
    std::vector<Json> rows;
    for (size_t step = 0; step < trace.losses.size(); ++step)
        rows.push_back(Json{{"step", step + 1},
                            {"loss", trace.losses[step]},
                            {"alpha", trace.alphas[step]},
                            {"forward_passes", step + 1},
                            {"backward_passes", step + 1}});
    write_jsonl(path, rows);
}

inline void write_landscape_csv(const std::filesystem::path& path,
                                const LandscapeResult& result) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw format_error(format_issue::malformed, "cannot open for writing: " + path.string());
    out << "alpha_a,alpha_b,question_loss,answer_loss\n";
    char buf[160];
    for (const auto& cell : result.grid) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g", cell.alpha_a, cell.alpha_b,
                      cell.question_loss, cell.answer_loss);
        out << buf << '\n';
    }
}

inline void write_ordering_csv(const std::filesystem::path& path, const OrderingResult& result) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw format_error(format_issue::malformed, "cannot open for writing: " + path.string());
    out << "query_id,delta_most_relevant_last,delta_most_relevant_first\n";
    char buf[96];
    for (const auto& row : result.rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g", row.delta_most_relevant_last,
                      row.delta_most_relevant_first);
        out << row.query_id << ',' << buf << '\n';
    }
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", result.mean_last, result.mean_first);
    out << "MEAN," << buf << '\n';
}

} // namespace rico
