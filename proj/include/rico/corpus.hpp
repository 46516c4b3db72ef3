#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "jsonl.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace rico {

// Whitespace-token vocabulary: the text <-> token-id mapping lives here, the
// model itself only ever sees integer ids.
class Vocabulary {
public:
    Vocabulary() = default;

    int32_t add(const std::string& word) {
        auto it = ids_.find(word);
        if (it != ids_.end()) return it->second;
        const int32_t id = int32_t(words_.size());
        words_.push_back(word);
        ids_.emplace(word, id);
        return id;
    }

    int32_t id(const std::string& word) const {
        auto it = ids_.find(word);
        if (it == ids_.end()) throw input_error("word not in vocabulary: '" + word + "'");
        return it->second;
    }

    bool contains(const std::string& word) const { return ids_.count(word) > 0; }
    const std::string& word(int32_t id) const { return words_.at(size_t(id)); }
    int32_t size() const { return int32_t(words_.size()); }

    TokenSeq tokenize(const std::string& text) const {
        TokenSeq out;
        std::istringstream ss(text);
        std::string w;
        while (ss >> w) out.push_back(id(w));
        return out;
    }

    std::string detokenize(const TokenSeq& tokens) const {
        std::string out;
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (i) out.push_back(' ');
            out += word(tokens[i]);
        }
        return out;
    }

    Json to_json() const { return Json{{"words", words_}}; }

    static Vocabulary from_json(const Json& j) {
        Vocabulary v;
        for (const auto& w : j.at("words")) v.add(w.get<std::string>());
        return v;
    }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int32_t> ids_;
};

struct CorpusSpec {
    int num_entities = 40;
    int num_attributes = 5;
    int num_values = 150;
    int num_facts = 200; // (entity, attribute) pairs in lexicographic order
    int num_queries = 100;
    int distractors_per_query = 9;
    double held_out_fraction = 0.2;
    int num_two_doc_queries = 120;
    int num_redundancy_scenarios = 60;
    int num_failure_probes = 20;
    int num_landscape_pairs = 20;
    uint64_t seed = 1;

    void validate() const {
        if (num_entities < 1 || num_attributes < 1 || num_values < 1 || num_facts < 1 ||
            num_queries < 1)
            throw input_error("CorpusSpec: counts must be >= 1");
        if (num_facts > num_entities * num_attributes)
            throw input_error("CorpusSpec: num_facts exceeds entity x attribute grid");
        if (held_out_fraction < 0.0 || held_out_fraction >= 1.0)
            throw input_error("CorpusSpec: held_out_fraction must be in [0,1)");
    }

    Json to_json() const {
        return Json{{"num_entities", num_entities},
                    {"num_attributes", num_attributes},
                    {"num_values", num_values},
                    {"num_facts", num_facts},
                    {"num_queries", num_queries},
                    {"distractors_per_query", distractors_per_query},
                    {"held_out_fraction", held_out_fraction},
                    {"num_two_doc_queries", num_two_doc_queries},
                    {"num_redundancy_scenarios", num_redundancy_scenarios},
                    {"num_failure_probes", num_failure_probes},
                    {"num_landscape_pairs", num_landscape_pairs},
                    {"seed", seed}};
    }

    static CorpusSpec from_json(const Json& j) {
        CorpusSpec s;
        s.num_entities = j.value("num_entities", s.num_entities);
        s.num_attributes = j.value("num_attributes", s.num_attributes);
        s.num_values = j.value("num_values", s.num_values);
        s.num_facts = j.value("num_facts", s.num_facts);
        s.num_queries = j.value("num_queries", s.num_queries);
        s.distractors_per_query = j.value("distractors_per_query", s.distractors_per_query);
        s.held_out_fraction = j.value("held_out_fraction", s.held_out_fraction);
        s.num_two_doc_queries = j.value("num_two_doc_queries", s.num_two_doc_queries);
        s.num_redundancy_scenarios =
            j.value("num_redundancy_scenarios", s.num_redundancy_scenarios);
        s.num_failure_probes = j.value("num_failure_probes", s.num_failure_probes);
        s.num_landscape_pairs = j.value("num_landscape_pairs", s.num_landscape_pairs);
        s.seed = j.value("seed", s.seed);
        return s;
    }
};

struct CorpusDoc {
    std::string doc_id;
    std::string text;
    std::string family; // "fact" or "probe"
};

struct CorpusQuery {
    std::string query_id;
    std::string question;
    std::string answer;
    std::vector<std::string> supporting_doc_ids;
    std::string family = "main"; // main | twodoc | redundancy | probe | landscape
    bool held_out = false;
    // scenario extras
    std::string novel_doc_id;
    std::string redundant_doc_id;
    std::vector<std::string> pair_doc_ids;
};

struct Fact {
    int entity = 0;
    int attribute = 0;
    int value = 0;
};

struct Corpus {
    CorpusSpec spec;
    Vocabulary vocab;
    std::vector<Fact> facts;
    std::vector<CorpusDoc> docs; // fact docs first (aligned with `facts`), then probe docs
    std::vector<CorpusQuery> queries;
    RelevanceJudgments judgments;

    const CorpusDoc* find_doc(const std::string& id) const {
        for (const auto& d : docs)
            if (d.doc_id == id) return &d;
        return nullptr;
    }

    TokenSeq doc_tokens(const std::string& id) const {
        const CorpusDoc* d = find_doc(id);
        if (!d) throw input_error("unknown doc_id '" + id + "'");
        return vocab.tokenize(d->text);
    }
};

namespace corpus_words {

inline std::string entity(int i) { return "e" + std::to_string(i); }
inline std::string attribute(int i) { return "r" + std::to_string(i); }
inline std::string value(int i) { return "v" + std::to_string(i); }
inline constexpr const char* doc_mark = "d";
inline constexpr const char* query_mark = "q";
inline constexpr const char* answer_mark = "a";
inline constexpr const char* spare_mark = "x";

} // namespace corpus_words

namespace detail {

inline std::string pad_id(const char* prefix, int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%s%04d", prefix, i);
    return buf;
}

inline std::string fact_doc_text(const Fact& f) {
    using namespace corpus_words;
    return std::string(doc_mark) + " " + entity(f.entity) + " " + attribute(f.attribute) + " " +
           value(f.value);
}

inline std::string question_text(const Fact& f) {
    using namespace corpus_words;
    return std::string(query_mark) + " " + entity(f.entity) + " " + attribute(f.attribute) + " " +
           answer_mark;
}

// Documents sharing the entity or the attribute of `fact` but never both.
inline std::vector<int> hard_distractor_pool(const std::vector<Fact>& facts, int fact_idx) {
    std::vector<int> pool;
    const Fact& f = facts[size_t(fact_idx)];
    for (int i = 0; i < int(facts.size()); ++i) {
        if (i == fact_idx) continue;
        const bool same_e = facts[size_t(i)].entity == f.entity;
        const bool same_r = facts[size_t(i)].attribute == f.attribute;
        if (same_e != same_r) pool.push_back(i); // shared entity xor shared attribute
    }
    return pool;
}

inline void audit_corpus(const Corpus& c);

} // namespace detail

// Deterministic synthetic corpus: entity/attribute/value fact documents,
// single-fact questions, and three scripted scenario families (two-doc graded
// queries, redundancy pairs whose query restates one document, repeated-
// question failure probes) plus designated two-document landscape pairs.
inline Corpus gen_corpus(const CorpusSpec& spec) {
    spec.validate();
    using namespace corpus_words;
    Corpus c;
    c.spec = spec;

    c.vocab.add(doc_mark);
    c.vocab.add(query_mark);
    c.vocab.add(answer_mark);
    c.vocab.add(spare_mark);
    for (int i = 0; i < spec.num_entities; ++i) c.vocab.add(entity(i));
    for (int i = 0; i < spec.num_attributes; ++i) c.vocab.add(attribute(i));
    for (int i = 0; i < spec.num_values; ++i) c.vocab.add(value(i));

    Rng rng(mix_seed(spec.seed, 0xC0));

    // facts fill the (entity, attribute) grid in lexicographic order
    c.facts.reserve(size_t(spec.num_facts));
    for (int i = 0; i < spec.num_facts; ++i) {
        Fact f;
        f.entity = i / spec.num_attributes;
        f.attribute = i % spec.num_attributes;
        f.value = int(rng.below(uint64_t(spec.num_values)));
        c.facts.push_back(f);
    }
    for (int i = 0; i < spec.num_facts; ++i)
        c.docs.push_back(
            {detail::pad_id("d", i), detail::fact_doc_text(c.facts[size_t(i)]), "fact"});

    auto doc_id_of = [&](int fact_idx) { return detail::pad_id("d", fact_idx); };

    // ---- main single-fact queries
    std::vector<int> fact_order(c.facts.size());
    for (size_t i = 0; i < fact_order.size(); ++i) fact_order[i] = int(i);
    rng.shuffle(fact_order);
    const int n_main = std::min(spec.num_queries, spec.num_facts);
    const int n_held = int(std::floor(spec.held_out_fraction * double(n_main)));
    for (int qi = 0; qi < n_main; ++qi) {
        const int fi = fact_order[size_t(qi)];
        const Fact& f = c.facts[size_t(fi)];
        CorpusQuery q;
        q.query_id = detail::pad_id("q", qi);
        q.question = detail::question_text(f);
        q.answer = value(f.value);
        q.supporting_doc_ids = {doc_id_of(fi)};
        q.family = "main";
        q.held_out = qi < n_held;
        c.judgments[q.query_id][doc_id_of(fi)] = 1;

        auto pool = detail::hard_distractor_pool(c.facts, fi);
        rng.shuffle(pool);
        const int n_distract = std::min<int>(spec.distractors_per_query, int(pool.size()));
        for (int di = 0; di < n_distract; ++di)
            c.judgments[q.query_id][doc_id_of(pool[size_t(di)])] = 0;
        c.queries.push_back(std::move(q));
    }

    // ---- two-doc graded queries (asked doc grade 2, same-entity companion grade 1)
    for (int ti = 0; ti < spec.num_two_doc_queries; ++ti) {
        const int asked = int(rng.below(c.facts.size()));
        std::vector<int> same_entity;
        for (int i = 0; i < int(c.facts.size()); ++i)
            if (i != asked && c.facts[size_t(i)].entity == c.facts[size_t(asked)].entity)
                same_entity.push_back(i);
        int companion;
        if (!same_entity.empty()) {
            companion = same_entity[rng.below(same_entity.size())];
        } else {
            do {
                companion = int(rng.below(c.facts.size()));
            } while (companion == asked);
        }
        const Fact& f = c.facts[size_t(asked)];
        CorpusQuery q;
        q.query_id = detail::pad_id("t", ti);
        q.question = detail::question_text(f);
        q.answer = value(f.value);
        q.supporting_doc_ids = {doc_id_of(asked), doc_id_of(companion)};
        q.family = "twodoc";
        c.judgments[q.query_id][doc_id_of(asked)] = 2;
        c.judgments[q.query_id][doc_id_of(companion)] = 1;
        c.queries.push_back(std::move(q));
    }

    // ---- redundancy scenarios: the query restates one fact inline, then asks
    //      about another attribute of the same entity
    for (int si = 0; si < spec.num_redundancy_scenarios; ++si) {
        int restated, asked;
        do {
            restated = int(rng.below(c.facts.size()));
            asked = int(rng.below(c.facts.size()));
        } while (restated == asked ||
                 c.facts[size_t(restated)].entity != c.facts[size_t(asked)].entity);
        const Fact& fr = c.facts[size_t(restated)];
        const Fact& fa = c.facts[size_t(asked)];
        CorpusQuery q;
        q.query_id = detail::pad_id("s", si);
        q.question = detail::fact_doc_text(fr) + " " + detail::question_text(fa);
        q.answer = value(fa.value);
        q.supporting_doc_ids = {doc_id_of(asked)};
        q.family = "redundancy";
        q.novel_doc_id = doc_id_of(asked);
        q.redundant_doc_id = doc_id_of(restated);
        c.judgments[q.query_id][q.novel_doc_id] = 1;
        c.judgments[q.query_id][q.redundant_doc_id] = 0;
        c.queries.push_back(std::move(q));
    }

    // ---- repeated-question failure probes: one candidate document is the
    //      question itself
    for (int pi = 0; pi < spec.num_failure_probes; ++pi) {
        const int fi = int(rng.below(c.facts.size()));
        const Fact& f = c.facts[size_t(fi)];
        CorpusQuery q;
        q.query_id = detail::pad_id("p", pi);
        q.question = detail::question_text(f);
        q.answer = value(f.value);
        q.supporting_doc_ids = {doc_id_of(fi)};
        q.family = "probe";
        const std::string probe_doc_id = detail::pad_id("pr", pi);
        c.docs.push_back({probe_doc_id, q.question, "probe"});
        c.judgments[q.query_id][doc_id_of(fi)] = 1;
        c.judgments[q.query_id][probe_doc_id] = 0;
        q.pair_doc_ids = {doc_id_of(fi), probe_doc_id};
        c.queries.push_back(std::move(q));
    }

    // ---- landscape pairs: a main-style query with a designated
    //      (supporting, hard distractor) pair
    for (int li = 0; li < spec.num_landscape_pairs; ++li) {
        const int fi = int(rng.below(c.facts.size()));
        const Fact& f = c.facts[size_t(fi)];
        auto pool = detail::hard_distractor_pool(c.facts, fi);
        if (pool.empty()) continue;
        const int other = pool[rng.below(pool.size())];
        CorpusQuery q;
        q.query_id = detail::pad_id("l", li);
        q.question = detail::question_text(f);
        q.answer = value(f.value);
        q.supporting_doc_ids = {doc_id_of(fi)};
        q.family = "landscape";
        q.pair_doc_ids = {doc_id_of(fi), doc_id_of(other)};
        c.judgments[q.query_id][doc_id_of(fi)] = 1;
        c.judgments[q.query_id][doc_id_of(other)] = 0;
        c.queries.push_back(std::move(q));
    }

    detail::audit_corpus(c);
    return c;
}

namespace detail {

// Generator self-audit: every scenario family must actually have its defining
// property.  Violations are generator bugs, so they throw.
inline void audit_corpus(const Corpus& c) {
    auto contains_word = [](const std::string& text, const std::string& word) {
        std::istringstream ss(text);
        std::string w;
        while (ss >> w)
            if (w == word) return true;
        return false;
    };

    std::map<std::string, const CorpusDoc*> by_id;
    for (const auto& d : c.docs) {
        if (d.doc_id.empty() || by_id.count(d.doc_id))
            throw input_error("corpus audit: bad or duplicate doc_id");
        by_id[d.doc_id] = &d;
    }

    for (const auto& q : c.queries) {
        if (q.supporting_doc_ids.empty())
            throw input_error("corpus audit: query without supporting doc");
        // the supporting document carries the answer token
        const CorpusDoc* support = by_id.at(q.supporting_doc_ids.front());
        if (!contains_word(support->text, q.answer))
            throw input_error("corpus audit: supporting doc misses answer for " + q.query_id);
        // at least one positive judgment
        auto jt = c.judgments.find(q.query_id);
        bool positive = false;
        if (jt != c.judgments.end())
            for (const auto& [_, g] : jt->second) positive |= g > 0;
        if (!positive) throw input_error("corpus audit: no positive grade for " + q.query_id);

        if (q.family == "main") {
            // distractors share the entity xor the attribute of the query fact
            const auto support_terms = c.vocab.tokenize(support->text);
            for (const auto& [doc_id, grade] : jt->second) {
                if (grade != 0) continue;
                const CorpusDoc* d = by_id.at(doc_id);
                const auto terms = c.vocab.tokenize(d->text);
                const bool same_e = terms[1] == support_terms[1];
                const bool same_r = terms[2] == support_terms[2];
                if (same_e == same_r)
                    throw input_error("corpus audit: bad distractor " + doc_id + " for " +
                                      q.query_id);
            }
        }
        if (q.family == "redundancy") {
            // the redundant doc's text is restated verbatim inside the question
            const CorpusDoc* r = by_id.at(q.redundant_doc_id);
            if (q.question.find(r->text) == std::string::npos)
                throw input_error("corpus audit: redundancy scenario " + q.query_id +
                                  " does not restate its doc");
        }
        if (q.family == "probe") {
            const CorpusDoc* probe = by_id.at(q.pair_doc_ids.back());
            if (probe->text != q.question)
                throw input_error("corpus audit: probe doc differs from question in " +
                                  q.query_id);
        }
    }
}

} // namespace detail

// ---- corpus directory layout ---------------------------------------------------
//   docs.jsonl       {doc_id, text, family}
//   queries.jsonl    {query_id, question, answer, supporting_doc_ids, family, ...}
//   judgments.jsonl  {query_id, doc_id, grade}
//   vocab.json       {words: [...]}
//   corpus.json      generation spec echo

inline void save_corpus(const Corpus& c, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<Json> docs;
    for (const auto& d : c.docs)
        docs.push_back(Json{{"doc_id", d.doc_id}, {"text", d.text}, {"family", d.family}});
    write_jsonl(dir / "docs.jsonl", docs);

    std::vector<Json> queries;
    for (const auto& q : c.queries) {
        Json j{{"query_id", q.query_id},
               {"question", q.question},
               {"answer", q.answer},
               {"supporting_doc_ids", q.supporting_doc_ids},
               {"family", q.family},
               {"held_out", q.held_out}};
        if (!q.novel_doc_id.empty()) j["novel_doc_id"] = q.novel_doc_id;
        if (!q.redundant_doc_id.empty()) j["redundant_doc_id"] = q.redundant_doc_id;
        if (!q.pair_doc_ids.empty()) j["pair_doc_ids"] = q.pair_doc_ids;
        queries.push_back(std::move(j));
    }
    write_jsonl(dir / "queries.jsonl", queries);

    std::vector<Json> judg;
    for (const auto& [query_id, perdoc] : c.judgments) {
        std::vector<std::pair<std::string, int>> sorted(perdoc.begin(), perdoc.end());
        std::sort(sorted.begin(), sorted.end());
        for (const auto& [doc_id, grade] : sorted)
            judg.push_back(Json{{"query_id", query_id}, {"doc_id", doc_id}, {"grade", grade}});
    }
    write_jsonl(dir / "judgments.jsonl", judg);

    std::ofstream vocab(dir / "vocab.json", std::ios::trunc);
    vocab << c.vocab.to_json().dump(2) << '\n';
    std::ofstream meta(dir / "corpus.json", std::ios::trunc);
    meta << c.spec.to_json().dump(2) << '\n';
}

// Reads any corpus following the directory layout above; `facts` is rebuilt
// only for docs in the synthetic "d e r v" shape and may stay empty for
// foreign corpora.
inline Corpus load_corpus(const std::filesystem::path& dir) {
    Corpus c;
    {
        std::ifstream meta(dir / "corpus.json");
        if (meta) {
            Json j;
            meta >> j;
            c.spec = CorpusSpec::from_json(j);
        }
    }
    {
        std::ifstream vocab(dir / "vocab.json");
        if (!vocab)
            throw format_error(format_issue::malformed,
                               "missing vocab.json in " + dir.string());
        Json j;
        vocab >> j;
        c.vocab = Vocabulary::from_json(j);
    }
    for (const auto& j : read_jsonl(dir / "docs.jsonl")) {
        CorpusDoc d;
        d.doc_id = j.at("doc_id").get<std::string>();
        d.text = j.at("text").get<std::string>();
        d.family = j.value("family", std::string("fact"));
        c.docs.push_back(std::move(d));
    }
    for (const auto& j : read_jsonl(dir / "queries.jsonl")) {
        CorpusQuery q;
        q.query_id = j.at("query_id").get<std::string>();
        q.question = j.at("question").get<std::string>();
        q.answer = j.at("answer").get<std::string>();
        q.supporting_doc_ids = j.at("supporting_doc_ids").get<std::vector<std::string>>();
        q.family = j.value("family", std::string("main"));
        q.held_out = j.value("held_out", false);
        q.novel_doc_id = j.value("novel_doc_id", std::string());
        q.redundant_doc_id = j.value("redundant_doc_id", std::string());
        if (j.contains("pair_doc_ids"))
            q.pair_doc_ids = j.at("pair_doc_ids").get<std::vector<std::string>>();
        c.queries.push_back(std::move(q));
    }
    for (const auto& j : read_jsonl(dir / "judgments.jsonl"))
        c.judgments[j.at("query_id").get<std::string>()][j.at("doc_id").get<std::string>()] =
            j.at("grade").get<int>();
    return c;
}

} // namespace rico
