#pragma once

#include <cctype>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "ranking.hpp"
#include "state.hpp"
#include "state_store.hpp"

namespace rico {

// Lowercase alphanumeric word tokenizer; no stemming, no stopwords.
inline std::vector<std::string> text_terms(const std::string& text) {
    std::vector<std::string> terms;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(char(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            terms.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) terms.push_back(std::move(cur));
    return terms;
}

struct Bm25Index {
    struct DocStats {
        std::string doc_id;
        std::unordered_map<std::string, uint32_t> term_counts;
        uint32_t length = 0;
    };
    std::unordered_map<std::string, uint32_t> doc_freq;
    std::vector<DocStats> docs;
    double avg_doc_len = 0.0;
    double k1 = 1.2;
    double b = 0.75;
};

inline Bm25Index bm25_build(const std::vector<std::pair<std::string, std::string>>& id_text,
                            double k1 = 1.2, double b = 0.75) {
    if (id_text.empty()) throw input_error("bm25_build: empty corpus");
    Bm25Index index;
    index.k1 = k1;
    index.b = b;
    uint64_t total_len = 0;
    for (const auto& [id, text] : id_text) {
        Bm25Index::DocStats stats;
        stats.doc_id = id;
        for (const auto& term : text_terms(text)) {
            stats.term_counts[term]++;
            stats.length++;
        }
        total_len += stats.length;
        for (const auto& [term, count] : stats.term_counts) index.doc_freq[term]++;
        index.docs.push_back(std::move(stats));
    }
    index.avg_doc_len = double(total_len) / double(index.docs.size());
    return index;
}

// Okapi BM25 with idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
inline RankedList bm25_score(const Bm25Index& index, const std::string& query_text, size_t k) {
    if (k < 1) throw input_error("bm25_score: k must be >= 1");
    const auto q_terms = text_terms(query_text);
    const double N = double(index.docs.size());
    RankedList scores;
    scores.reserve(index.docs.size());
    for (const auto& doc : index.docs) {
        double score = 0.0;
        for (const auto& term : q_terms) {
            auto it = doc.term_counts.find(term);
            if (it == doc.term_counts.end()) continue;
            auto df_it = index.doc_freq.find(term);
            const double df = df_it == index.doc_freq.end() ? 0.0 : double(df_it->second);
            const double idf = std::log(1.0 + (N - df + 0.5) / (df + 0.5));
            const double tf = double(it->second);
            const double norm =
                tf + index.k1 * (1.0 - index.b + index.b * double(doc.length) / index.avg_doc_len);
            score += idf * tf * (index.k1 + 1.0) / norm;
        }
        scores.push_back({doc.doc_id, score});
    }
    return make_ranked(std::move(scores), k);
}

// Cosine similarity between flattened document and query states (retained
// layers concatenated).  A zero-norm side scores 0.
inline RankedList cosine_state_score(const StateIndex& index, const StateStack& query_state,
                                     size_t k) {
    if (k < 1 || k > index.size())
        throw input_error("cosine_state_score: k must be in [1, index size]");
    const auto retained = index.retained_layers();
    if (query_state.layers.size() != retained.size())
        throw input_error("cosine_state_score: layer mask mismatch");

    const double q_norm = std::sqrt(state_sqnorm(query_state));
    RankedList scores;
    scores.reserve(index.size());
    for (const auto& rec : index.records) {
        double dot_acc = 0.0, d_sq = 0.0;
        for (size_t slot = 0; slot < rec.states.size(); ++slot) {
            const auto& buf = rec.states[slot];
            const double* qd = query_state.layers[slot].data();
            for (size_t i = 0; i < buf.size(); ++i) {
                const double v = double(buf[i]);
                dot_acc += v * qd[i];
                d_sq += v * v;
            }
        }
        const double d_norm = std::sqrt(d_sq);
        const double denom = q_norm * d_norm;
        scores.push_back({rec.doc_id, denom > 0.0 ? dot_acc / denom : 0.0});
    }
    return make_ranked(std::move(scores), k);
}

// Cross-encoder style paragon: score(d) = -question loss conditioned on h_d.
// One forward pass per document (N model calls, the cost RICO's 2T contrasts
// with).
inline RankedList per_doc_loss_score(const ModelParams& params, const StateIndex& index,
                                     const TokenSeq& query_tokens, size_t k,
                                     ModelCallCounter* calls = nullptr) {
    if (k < 1 || k > index.size())
        throw input_error("per_doc_loss_score: k must be in [1, index size]");
    if (query_tokens.size() < 2)
        throw input_error("per_doc_loss_score: need at least two query tokens");
    const auto retained = index.retained_layers();
    const TokenSpan span{1, query_tokens.size()};

    RankedList scores;
    scores.reserve(index.size());
    for (const auto& rec : index.records) {
        StateStack full = zero_state(params.config);
        const StateStack h = index.record_state(rec);
        for (size_t slot = 0; slot < retained.size(); ++slot)
            full.layers[retained[slot]] = h.layers[slot];
        const double loss = sequence_loss(params, query_tokens, &full, span, calls).total;
        scores.push_back({rec.doc_id, -loss});
    }
    return make_ranked(std::move(scores), k);
}

} // namespace rico
