#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "binio.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "rng.hpp"
#include "sha256.hpp"

namespace rico {

using Token = int32_t;
using TokenSeq = std::vector<Token>;

enum class Precision : uint8_t {
    f64_compute = 0,
    f32_compute = 1,
};

struct ModelConfig {
    int32_t vocab_size = 0;
    int32_t embed_dim = 0; // m: residual stream / head output width
    int32_t state_dim = 0; // n: per-layer key/query width
    int32_t num_layers = 0;
    int64_t rng_seed = 0;
    Precision precision = Precision::f64_compute;

    void validate() const {
        if (vocab_size < 2) throw input_error("ModelConfig: vocab_size must be >= 2");
        if (embed_dim < 1 || state_dim < 1 || num_layers < 1)
            throw input_error("ModelConfig: embed_dim, state_dim, num_layers must be >= 1");
    }

    bool operator==(const ModelConfig&) const = default;
};

// One gated-outer-product layer: the state update is
//   S_t = a_t * S_{t-1} + k_t x_t^T,   y_t = S_t^T q_t,
// with a_t = sigmoid(w_a . x_t + c_a), k_t = W_k x_t, q_t = W_q x_t, and the
// head output folded back into the residual stream through W_o.
struct LayerParams {
    Vec w_a;    // m
    double c_a = 0.0;
    Mat w_k;    // n x m
    Mat w_q;    // n x m
    Mat w_o;    // m x m
};

struct ParamTensors {
    Mat embed; // vocab x m
    std::vector<LayerParams> layers;
    Mat w_out; // vocab x m

    bool operator==(const ParamTensors& o) const {
        if (!(embed == o.embed) || !(w_out == o.w_out) || layers.size() != o.layers.size())
            return false;
        for (size_t l = 0; l < layers.size(); ++l) {
            const auto& a = layers[l];
            const auto& b = o.layers[l];
            if (a.w_a != b.w_a || a.c_a != b.c_a || !(a.w_k == b.w_k) || !(a.w_q == b.w_q) ||
                !(a.w_o == b.w_o))
                return false;
        }
        return true;
    }
};

struct ModelParams {
    ModelConfig config;
    ParamTensors t;

    // SHA-256 over the canonical serialization (config header + f32 tensor
    // bytes); identical to the digest trailing a saved checkpoint.
    std::array<uint8_t, 32> fingerprint() const;
};

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'R', 'S', 'S', 'M'};
inline constexpr uint16_t kCheckpointVersion = 1;

inline void write_f32_tensor(ByteWriter& w, const double* data, size_t n) {
    for (size_t i = 0; i < n; ++i) w.f32(float(data[i]));
}

inline void read_f32_tensor(ByteReader& r, double* data, size_t n) {
    for (size_t i = 0; i < n; ++i) data[i] = double(r.f32());
}

// Serialized checkpoint body (everything before the trailing digest).
inline std::vector<uint8_t> checkpoint_body(const ModelParams& p) {
    ByteWriter w;
    w.raw(kCheckpointMagic, 4);
    w.u16(kCheckpointVersion);
    w.u32(uint32_t(p.config.vocab_size));
    w.u32(uint32_t(p.config.embed_dim));
    w.u32(uint32_t(p.config.state_dim));
    w.u32(uint32_t(p.config.num_layers));
    w.i64(p.config.rng_seed);
    w.u8(uint8_t(p.config.precision));
    write_f32_tensor(w, p.t.embed.data(), p.t.embed.size());
    for (const auto& l : p.t.layers) {
        write_f32_tensor(w, l.w_a.data(), l.w_a.size());
        w.f32(float(l.c_a));
        write_f32_tensor(w, l.w_k.data(), l.w_k.size());
        write_f32_tensor(w, l.w_q.data(), l.w_q.size());
        write_f32_tensor(w, l.w_o.data(), l.w_o.size());
    }
    write_f32_tensor(w, p.t.w_out.data(), p.t.w_out.size());
    return std::move(w.bytes);
}

} // namespace detail

inline std::array<uint8_t, 32> ModelParams::fingerprint() const {
    const auto body = detail::checkpoint_body(*this);
    return Sha256::digest(body.data(), body.size());
}

// Flat views over every parameter tensor in declaration order (embedding,
// per-layer w_a, c_a, W_k, W_q, W_o, then the unembedding).  Gradient
// containers produced by zero_param_tensors enumerate identically.
inline std::vector<std::span<double>> tensor_spans(ParamTensors& t) {
    std::vector<std::span<double>> spans;
    spans.emplace_back(t.embed.a);
    for (auto& l : t.layers) {
        spans.emplace_back(l.w_a);
        spans.emplace_back(&l.c_a, 1);
        spans.emplace_back(l.w_k.a);
        spans.emplace_back(l.w_q.a);
        spans.emplace_back(l.w_o.a);
    }
    spans.emplace_back(t.w_out.a);
    return spans;
}

inline std::vector<std::span<const double>> tensor_spans(const ParamTensors& t) {
    std::vector<std::span<const double>> spans;
    auto& mt = const_cast<ParamTensors&>(t);
    for (auto s : tensor_spans(mt)) spans.emplace_back(s.data(), s.size());
    return spans;
}

inline ParamTensors zero_param_tensors(const ModelConfig& cfg) {
    ParamTensors t;
    const size_t v = size_t(cfg.vocab_size), m = size_t(cfg.embed_dim), n = size_t(cfg.state_dim);
    t.embed = Mat(v, m);
    t.layers.resize(size_t(cfg.num_layers));
    for (auto& l : t.layers) {
        l.w_a.assign(m, 0.0);
        l.c_a = 0.0;
        l.w_k = Mat(n, m);
        l.w_q = Mat(n, m);
        l.w_o = Mat(m, m);
    }
    t.w_out = Mat(v, m);
    return t;
}

// Seeded init: uniform(-1/sqrt(m), 1/sqrt(m)) for every projection and the
// embedding, c_a = +2 so the decay gate starts near 0.88 (stable memory).
inline ModelParams init_params(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    p.t = zero_param_tensors(cfg);
    Rng rng(mix_seed(uint64_t(cfg.rng_seed), 0x1717));
    const double s = 1.0 / std::sqrt(double(cfg.embed_dim));
    auto fill = [&](double* data, size_t n) {
        for (size_t i = 0; i < n; ++i) data[i] = rng.uniform(-s, s);
    };
    fill(p.t.embed.data(), p.t.embed.size());
    for (auto& l : p.t.layers) {
        fill(l.w_a.data(), l.w_a.size());
        l.c_a = 2.0;
        fill(l.w_k.data(), l.w_k.size());
        fill(l.w_q.data(), l.w_q.size());
        fill(l.w_o.data(), l.w_o.size());
    }
    fill(p.t.w_out.data(), p.t.w_out.size());
    return p;
}

// Checkpoint file = body + SHA-256 of the body.  Tensors are stored as f32
// little-endian, so save(load(file)) is byte-identical; loading promotes the
// stored values to double exactly.
inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
    auto body = detail::checkpoint_body(p);
    const auto digest = Sha256::digest(body.data(), body.size());
    body.insert(body.end(), digest.begin(), digest.end());
    write_file(path, body);
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    ByteReader r(bytes.data(), bytes.size(), "checkpoint " + path.string());
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw format_error(format_issue::bad_magic, "not a checkpoint file: " + path.string());
    const uint16_t version = r.u16();
    if (version != detail::kCheckpointVersion)
        throw format_error(format_issue::bad_version,
                           "unsupported checkpoint version " + std::to_string(version));
    ModelConfig cfg;
    cfg.vocab_size = int32_t(r.u32());
    cfg.embed_dim = int32_t(r.u32());
    cfg.state_dim = int32_t(r.u32());
    cfg.num_layers = int32_t(r.u32());
    cfg.rng_seed = r.i64();
    const uint8_t prec = r.u8();
    if (prec > 1)
        throw format_error(format_issue::malformed, "bad precision tag in " + path.string());
    cfg.precision = Precision(prec);
    cfg.validate();

    ModelParams p;
    p.config = cfg;
    p.t = zero_param_tensors(cfg);
    detail::read_f32_tensor(r, p.t.embed.data(), p.t.embed.size());
    for (auto& l : p.t.layers) {
        detail::read_f32_tensor(r, l.w_a.data(), l.w_a.size());
        l.c_a = double(r.f32());
        detail::read_f32_tensor(r, l.w_k.data(), l.w_k.size());
        detail::read_f32_tensor(r, l.w_q.data(), l.w_q.size());
        detail::read_f32_tensor(r, l.w_o.data(), l.w_o.size());
    }
    detail::read_f32_tensor(r, p.t.w_out.data(), p.t.w_out.size());

    std::array<uint8_t, 32> stored{};
    r.raw(stored.data(), 32);
    if (r.pos != bytes.size())
        throw format_error(format_issue::malformed, "trailing bytes in " + path.string());
    const auto expect = Sha256::digest(bytes.data(), bytes.size() - 32);
    if (stored != expect)
        throw format_error(format_issue::fingerprint_mismatch,
                           "checkpoint digest mismatch in " + path.string());
    return p;
}

} // namespace rico
