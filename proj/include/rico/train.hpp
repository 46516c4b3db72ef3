#pragma once

#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "adamw.hpp"
#include "corpus.hpp"
#include "errors.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace rico {

// One training sequence plus the span of positions whose prediction is scored.
struct TrainItem {
    TokenSeq tokens;
    TokenSpan span;
};

// Builds the next-token training mix for a corpus:
//   - fact completion: every document, scoring its final (value) token;
//   - question answering: doc ++ question ++ answer, scored from the question
//     marker on, skipping facts whose query is held out;
//   - two-document question answering: seeded random document pairs followed
//     by a question about one of them, so that multi-document conditioning is
//     a trained pattern.
// Unscored positions (a document's opening tokens) carry the corpus's
// irreducible entropy; scored spans are all predictable from their prefix, so
// the reported nats/token measures learning, not dice rolls.
inline std::vector<TrainItem> build_train_items(const Corpus& corpus, uint64_t seed,
                                                int two_doc_items) {
    std::set<std::string> held_out_docs;
    for (const auto& q : corpus.queries)
        if (q.held_out)
            for (const auto& id : q.supporting_doc_ids) held_out_docs.insert(id);

    struct FactDoc {
        TokenSeq tokens;
        std::string question; // "q <entity> <attribute> a"
        std::string answer;
        bool held_out = false;
    };
    std::vector<FactDoc> fact_docs;

    std::vector<TrainItem> items;
    for (const auto& d : corpus.docs) {
        if (d.family != "fact") continue;
        FactDoc fd;
        fd.tokens = corpus.vocab.tokenize(d.text);
        if (fd.tokens.size() < 2) continue;
        items.push_back({fd.tokens, {fd.tokens.size() - 1, fd.tokens.size()}});

        // synthetic fact shape "d <entity> <attribute> <value>"
        std::istringstream ss(d.text);
        std::vector<std::string> words;
        std::string w;
        while (ss >> w) words.push_back(w);
        if (words.size() == 4 && words[0] == corpus_words::doc_mark) {
            fd.question = std::string(corpus_words::query_mark) + " " + words[1] + " " + words[2] +
                          " " + corpus_words::answer_mark;
            fd.answer = words[3];
            fd.held_out = held_out_docs.count(d.doc_id) > 0;
            fact_docs.push_back(std::move(fd));
        }
    }

    if (fact_docs.empty()) {
        // foreign corpus: fall back to QA items built from the queries themselves
        for (const auto& q : corpus.queries) {
            if (q.held_out || q.supporting_doc_ids.empty()) continue;
            TokenSeq seq = corpus.doc_tokens(q.supporting_doc_ids.front());
            const size_t prefix = seq.size();
            const TokenSeq question = corpus.vocab.tokenize(q.question);
            const TokenSeq answer = corpus.vocab.tokenize(q.answer);
            seq.insert(seq.end(), question.begin(), question.end());
            seq.insert(seq.end(), answer.begin(), answer.end());
            if (seq.size() > prefix && prefix >= 1) items.push_back({seq, {prefix, seq.size()}});
        }
        return items;
    }

    for (const auto& fd : fact_docs) {
        if (fd.held_out) continue;
        TokenSeq seq = fd.tokens;
        const size_t prefix = seq.size();
        const TokenSeq question = corpus.vocab.tokenize(fd.question);
        const TokenSeq answer = corpus.vocab.tokenize(fd.answer);
        seq.insert(seq.end(), question.begin(), question.end());
        seq.insert(seq.end(), answer.begin(), answer.end());
        items.push_back({seq, {prefix, seq.size()}});
    }

    Rng rng(mix_seed(seed, 0x2D));
    const size_t n = fact_docs.size();
    for (int i = 0; i < two_doc_items && n >= 2; ++i) {
        size_t a, b;
        do {
            a = size_t(rng.below(n));
            b = size_t(rng.below(n));
        } while (a == b);
        size_t asked = rng.below(2) ? a : b;
        if (fact_docs[asked].held_out) asked = asked == a ? b : a;
        if (fact_docs[asked].held_out) continue;

        TokenSeq seq = fact_docs[a].tokens;
        seq.insert(seq.end(), fact_docs[b].tokens.begin(), fact_docs[b].tokens.end());
        const size_t prefix = seq.size();
        const TokenSeq question = corpus.vocab.tokenize(fact_docs[asked].question);
        const TokenSeq answer = corpus.vocab.tokenize(fact_docs[asked].answer);
        seq.insert(seq.end(), question.begin(), question.end());
        seq.insert(seq.end(), answer.begin(), answer.end());
        items.push_back({seq, {prefix, seq.size()}});
    }
    return items;
}

// Mean nats per scored token over a fixed item set (no updates).
inline double eval_items_loss(const ModelParams& params, const std::vector<TrainItem>& items) {
    double loss_sum = 0.0;
    size_t token_sum = 0;
    for (const auto& item : items) {
        const auto rep = sequence_loss(params, item.tokens, nullptr, item.span);
        loss_sum += rep.total;
        token_sum += rep.token_count;
    }
    return loss_sum / double(token_sum);
}

struct TrainConfig {
    int embed_dim = 32;
    int state_dim = 16;
    int num_layers = 4;
    int64_t init_seed = 1;
    int epochs = 60;
    double learning_rate = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    int two_doc_items = 200;
    uint64_t shuffle_seed = 1;
};

struct TrainReport {
    std::vector<double> epoch_loss; // mean nats per scored token
    double final_loss = 0.0;
    size_t items = 0;
};

// Per-sequence AdamW on the span cross-entropy; deterministic for a fixed
// (config, corpus, seed).  Aborts with a diagnostic if the loss diverges.
inline std::pair<ModelParams, TrainReport> train_lm(const TrainConfig& cfg,
                                                    const Corpus& corpus) {
    ModelConfig mc;
    mc.vocab_size = corpus.vocab.size();
    mc.embed_dim = cfg.embed_dim;
    mc.state_dim = cfg.state_dim;
    mc.num_layers = cfg.num_layers;
    mc.rng_seed = cfg.init_seed;
    ModelParams params = init_params(mc);

    auto items = build_train_items(corpus, cfg.shuffle_seed, cfg.two_doc_items);
    if (items.empty()) throw input_error("train_lm: corpus produced no training items");

    AdamW opt({cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay});
    TrainReport report;
    report.items = items.size();

    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.shuffle_seed, 0xE0 + uint64_t(epoch)));
        rng.shuffle(order);
        double loss_sum = 0.0;
        size_t token_sum = 0;
        for (size_t idx : order) {
            const TrainItem& item = items[idx];
            auto [rep, grads] = loss_and_param_grads(params, item.tokens, item.span);
            if (!std::isfinite(rep.total))
                throw numeric_error("train_lm diverged at epoch " + std::to_string(epoch) +
                                    ", item " + std::to_string(idx));
            loss_sum += rep.total;
            token_sum += rep.token_count;
            const double scale = 1.0 / double(rep.token_count);
            auto gspans = tensor_spans(grads);
            for (auto s : gspans)
                for (auto& g : s) g *= scale;
            auto pspans = tensor_spans(params.t);
            std::vector<std::span<const double>> gview;
            gview.reserve(gspans.size());
            for (auto s : gspans) gview.emplace_back(s.data(), s.size());
            opt.step(pspans, gview);
        }
        report.epoch_loss.push_back(loss_sum / double(token_sum));
    }
    report.final_loss = report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back();
    return {std::move(params), std::move(report)};
}

} // namespace rico
