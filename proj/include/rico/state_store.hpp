#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "binio.hpp"
#include "errors.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "ranking.hpp"
#include "scan.hpp"
#include "state.hpp"

namespace rico {

struct DocumentRecord {
    std::string doc_id;
    TokenSeq token_ids;
    std::string source_text; // optional
};

// A document's precomputed states.  `states` holds only the retained layers
// (ascending layer order); values are f32-quantized so that index files round
// trip bit-exactly.
struct DocumentStateRecord {
    std::string doc_id;
    uint32_t token_count = 0;
    std::vector<std::vector<float>> states; // one n*m row-major buffer per retained layer
};

// The retrieval index: per-document states sharing one model fingerprint and
// one retained-layer mask.  Immutable once built; scans are pure dot products.
struct StateIndex {
    uint32_t full_layers = 0; // L of the producing model
    uint32_t state_dim = 0;   // n
    uint32_t embed_dim = 0;   // m
    std::vector<uint8_t> layer_mask; // ceil(L/8) bytes, LSB-first
    std::array<uint8_t, 32> fingerprint{};
    std::vector<DocumentStateRecord> records;

    size_t size() const { return records.size(); }

    bool layer_retained(uint32_t l) const {
        return (layer_mask[l / 8] >> (l % 8)) & 1u;
    }

    std::vector<uint32_t> retained_layers() const {
        std::vector<uint32_t> out;
        for (uint32_t l = 0; l < full_layers; ++l)
            if (layer_retained(l)) out.push_back(l);
        return out;
    }

    const DocumentStateRecord* find(const std::string& doc_id) const {
        for (const auto& r : records)
            if (r.doc_id == doc_id) return &r;
        return nullptr;
    }

    // Promote a record's f32 states to a double StateStack (retained layers only).
    StateStack record_state(const DocumentStateRecord& r) const {
        StateStack s;
        s.layers.reserve(r.states.size());
        for (const auto& buf : r.states) {
            Mat m(state_dim, embed_dim);
            for (size_t i = 0; i < buf.size(); ++i) m.a[i] = double(buf[i]);
            s.layers.push_back(std::move(m));
        }
        return s;
    }
};

namespace detail {

inline std::vector<uint8_t> full_mask(uint32_t layers) {
    std::vector<uint8_t> mask((layers + 7) / 8, 0);
    for (uint32_t l = 0; l < layers; ++l) mask[l / 8] |= uint8_t(1u << (l % 8));
    return mask;
}

} // namespace detail

// One forward pass per document; order preserved.  States are stored at f32
// precision (the file format's payload width).
inline StateIndex precompute_states(const ModelParams& p, const std::vector<DocumentRecord>& docs,
                                    ModelCallCounter* calls = nullptr) {
    if (docs.empty()) throw input_error("precompute_states: empty document list");
    std::unordered_set<std::string> seen;
    for (const auto& d : docs) {
        if (d.doc_id.empty()) throw input_error("precompute_states: empty doc_id");
        if (!seen.insert(d.doc_id).second)
            throw input_error("precompute_states: duplicate doc_id '" + d.doc_id + "'");
        if (d.token_ids.empty())
            throw input_error("precompute_states: document '" + d.doc_id + "' has no tokens");
    }

    StateIndex index;
    index.full_layers = uint32_t(p.config.num_layers);
    index.state_dim = uint32_t(p.config.state_dim);
    index.embed_dim = uint32_t(p.config.embed_dim);
    index.layer_mask = detail::full_mask(index.full_layers);
    index.fingerprint = p.fingerprint();
    index.records.reserve(docs.size());

    for (const auto& d : docs) {
        if (calls) calls->forward++;
        const StateStack final = forward_scan(p, d.token_ids).final_state;
        DocumentStateRecord rec;
        rec.doc_id = d.doc_id;
        rec.token_count = uint32_t(d.token_ids.size());
        rec.states.reserve(final.layers.size());
        for (const auto& m : final.layers) {
            std::vector<float> buf(m.size());
            for (size_t i = 0; i < m.size(); ++i) buf[i] = float(m.a[i]);
            rec.states.push_back(std::move(buf));
        }
        index.records.push_back(std::move(rec));
    }
    return index;
}

// Restrict every record to the given layer subset.  `keep` names layers of the
// full model and must be a subset of the currently retained set.
inline StateIndex layer_subsample(const StateIndex& index, const std::set<uint32_t>& keep) {
    if (keep.empty()) throw input_error("layer_subsample: empty keep set");
    for (uint32_t l : keep) {
        if (l >= index.full_layers)
            throw input_error("layer_subsample: layer " + std::to_string(l) + " out of range");
        if (!index.layer_retained(l))
            throw input_error("layer_subsample: layer " + std::to_string(l) +
                              " not present in index");
    }
    const auto current = index.retained_layers();
    StateIndex out;
    out.full_layers = index.full_layers;
    out.state_dim = index.state_dim;
    out.embed_dim = index.embed_dim;
    out.fingerprint = index.fingerprint;
    out.layer_mask.assign((index.full_layers + 7) / 8, 0);
    for (uint32_t l : keep) out.layer_mask[l / 8] |= uint8_t(1u << (l % 8));

    out.records.reserve(index.records.size());
    for (const auto& r : index.records) {
        DocumentStateRecord rec;
        rec.doc_id = r.doc_id;
        rec.token_count = r.token_count;
        for (size_t slot = 0; slot < current.size(); ++slot)
            if (keep.count(current[slot])) rec.states.push_back(r.states[slot]);
        out.records.push_back(std::move(rec));
    }
    return out;
}

// Contiguous block of `count` layers centered at L/2 (the default subsampling
// rule; ceil(L/6) echoes keeping 4 of 24 layers).
inline std::set<uint32_t> middle_layers(uint32_t total, uint32_t count) {
    if (count == 0 || count > total) throw input_error("middle_layers: bad count");
    const uint32_t start = (total - count) / 2;
    std::set<uint32_t> keep;
    for (uint32_t l = start; l < start + count; ++l) keep.insert(l);
    return keep;
}

// Frobenius inner product against `direction`, summed over retained layers,
// accumulated in f64.  Zero model passes.  Ties break by ascending doc_id.
inline RankedList topk_inner_product(const StateIndex& index, const StateStack& direction,
                                     size_t k) {
    if (k < 1 || k > index.size())
        throw input_error("topk_inner_product: k must be in [1, index size]");
    const auto retained = index.retained_layers();
    if (direction.layers.size() != retained.size())
        throw input_error("topk_inner_product: direction has " +
                          std::to_string(direction.layers.size()) + " layers, index retains " +
                          std::to_string(retained.size()));
    for (const auto& m : direction.layers)
        if (m.rows != index.state_dim || m.cols != index.embed_dim)
            throw input_error("topk_inner_product: direction layer shape mismatch");

    RankedList scores;
    scores.reserve(index.size());
    for (const auto& r : index.records) {
        double acc = 0.0;
        for (size_t slot = 0; slot < r.states.size(); ++slot) {
            const auto& buf = r.states[slot];
            const double* d = direction.layers[slot].data();
            for (size_t i = 0; i < buf.size(); ++i) acc += double(buf[i]) * d[i];
        }
        scores.push_back({r.doc_id, acc});
    }
    return make_ranked(std::move(scores), k);
}

namespace detail {

inline constexpr char kIndexMagic[4] = {'R', 'I', 'C', 'O'};
inline constexpr uint16_t kIndexVersion = 1;

} // namespace detail

inline void save_index(const StateIndex& index, const std::filesystem::path& path) {
    ByteWriter w;
    w.raw(detail::kIndexMagic, 4);
    w.u16(detail::kIndexVersion);
    w.raw(index.fingerprint.data(), 32);
    w.u32(index.full_layers);
    w.raw(index.layer_mask.data(), index.layer_mask.size());
    w.u32(index.state_dim);
    w.u32(index.embed_dim);
    w.u32(uint32_t(index.records.size()));
    for (const auto& r : index.records) {
        w.u16(uint16_t(r.doc_id.size()));
        w.str(r.doc_id);
        w.u32(r.token_count);
        for (const auto& buf : r.states)
            for (float v : buf) w.f32(v);
    }
    write_file(path, w.bytes);
}

// Load an index; if `expect` is given, its fingerprint must match the file's.
inline StateIndex load_index(const std::filesystem::path& path,
                             const ModelParams* expect = nullptr) {
    const auto bytes = read_file(path);
    ByteReader r(bytes.data(), bytes.size(), "index " + path.string());
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, detail::kIndexMagic, 4) != 0)
        throw format_error(format_issue::bad_magic, "not an index file: " + path.string());
    const uint16_t version = r.u16();
    if (version != detail::kIndexVersion)
        throw format_error(format_issue::bad_version,
                           "unsupported index version " + std::to_string(version));

    StateIndex index;
    r.raw(index.fingerprint.data(), 32);
    index.full_layers = r.u32();
    if (index.full_layers == 0 || index.full_layers > (1u << 20))
        throw format_error(format_issue::malformed, "bad layer count in " + path.string());
    index.layer_mask.resize((index.full_layers + 7) / 8);
    r.raw(index.layer_mask.data(), index.layer_mask.size());
    index.state_dim = r.u32();
    index.embed_dim = r.u32();
    if (index.state_dim == 0 || index.embed_dim == 0)
        throw format_error(format_issue::malformed, "bad state shape in " + path.string());
    const uint32_t count = r.u32();
    const size_t retained = index.retained_layers().size();
    if (retained == 0)
        throw format_error(format_issue::malformed, "empty layer mask in " + path.string());

    std::unordered_set<std::string> seen;
    index.records.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        DocumentStateRecord rec;
        const uint16_t idlen = r.u16();
        rec.doc_id = r.str(idlen);
        if (rec.doc_id.empty() || !seen.insert(rec.doc_id).second)
            throw format_error(format_issue::malformed,
                               "bad or duplicate doc_id in " + path.string());
        rec.token_count = r.u32();
        rec.states.assign(retained,
                          std::vector<float>(size_t(index.state_dim) * index.embed_dim));
        for (auto& buf : rec.states)
            for (auto& v : buf) v = r.f32();
        index.records.push_back(std::move(rec));
    }
    if (r.pos != bytes.size())
        throw format_error(format_issue::malformed, "trailing bytes in " + path.string());

    if (expect && expect->fingerprint() != index.fingerprint)
        throw format_error(format_issue::fingerprint_mismatch,
                           "index was built from a different model: " + path.string());
    return index;
}

} // namespace rico
