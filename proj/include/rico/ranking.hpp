#pragma once

#include <algorithm>
#include <string>
#include <vector>

namespace rico {

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
};

// Ordered (doc_id, score) pairs: score descending, doc_id ascending on ties.
using RankedList = std::vector<ScoredDoc>;

inline void sort_ranked(RankedList& r) {
    std::sort(r.begin(), r.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
}

inline RankedList make_ranked(RankedList scores, size_t k = size_t(-1)) {
    sort_ranked(scores);
    if (scores.size() > k) scores.resize(k);
    return scores;
}

// |top-k(a) ∩ top-k(b)| / k
inline double overlap_at_k(const RankedList& a, const RankedList& b, size_t k) {
    const size_t ka = std::min(k, a.size());
    const size_t kb = std::min(k, b.size());
    size_t hits = 0;
    for (size_t i = 0; i < ka; ++i)
        for (size_t j = 0; j < kb; ++j)
            if (a[i].doc_id == b[j].doc_id) {
                ++hits;
                break;
            }
    return k == 0 ? 0.0 : double(hits) / double(k);
}

} // namespace rico
