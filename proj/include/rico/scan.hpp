#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "state.hpp"

namespace rico {

inline constexpr size_t kQuadraticFormMaxLen = 64; // unrolled/masked forms are O(T^2)

template <class Real>
inline Real stable_sigmoid(Real z) {
    if (z >= Real(0)) return Real(1) / (Real(1) + std::exp(-z));
    const Real e = std::exp(z);
    return e / (Real(1) + e);
}

struct ScanResult {
    std::vector<Vec> logits; // T rows of vocab_size
    StateStack final_state;
};

namespace detail {

inline void check_tokens(const ModelConfig& cfg, std::span<const Token> tokens) {
    for (size_t t = 0; t < tokens.size(); ++t)
        if (tokens[t] < 0 || tokens[t] >= cfg.vocab_size)
            throw input_error("token id " + std::to_string(tokens[t]) + " at position " +
                              std::to_string(t) + " out of range [0," +
                              std::to_string(cfg.vocab_size) + ")");
}

inline void check_init_shape(const ModelConfig& cfg, const StateStack& init) {
    if (init.layers.size() != size_t(cfg.num_layers))
        throw input_error("init state has " + std::to_string(init.layers.size()) +
                          " layers, model has " + std::to_string(cfg.num_layers));
    for (const auto& m : init.layers)
        if (m.rows != size_t(cfg.state_dim) || m.cols != size_t(cfg.embed_dim))
            throw input_error("init state layer shape mismatch");
}

// Everything the backward pass needs, stored per layer for the whole sequence.
template <class Real>
struct ScanCache {
    size_t T = 0, L = 0, n = 0, m = 0, vocab = 0;
    std::vector<std::vector<Real>> stream; // L+1 buffers of T*m (stream[0] = embeddings)
    std::vector<std::vector<Real>> gate;   // L buffers of T
    std::vector<std::vector<Real>> key;    // L buffers of T*n
    std::vector<std::vector<Real>> query;  // L buffers of T*n
    std::vector<std::vector<Real>> state;  // L buffers of (T+1)*n*m; state[l][0] = init
    std::vector<Real> logits;              // T*vocab
};

// The recurrent scan.  `init` may be null (zero state).  Raises numeric_error
// naming layer and position if a non-finite value appears.
template <class Real>
void scan_forward(const ModelParams& p, std::span<const Token> tokens, const StateStack* init,
                  ScanCache<Real>& c) {
    const auto& cfg = p.config;
    check_tokens(cfg, tokens);
    if (init) check_init_shape(cfg, *init);

    const size_t T = tokens.size();
    const size_t L = size_t(cfg.num_layers);
    const size_t n = size_t(cfg.state_dim);
    const size_t m = size_t(cfg.embed_dim);
    const size_t vocab = size_t(cfg.vocab_size);
    c.T = T;
    c.L = L;
    c.n = n;
    c.m = m;
    c.vocab = vocab;

    c.stream.assign(L + 1, std::vector<Real>(T * m, Real(0)));
    c.gate.assign(L, std::vector<Real>(T, Real(0)));
    c.key.assign(L, std::vector<Real>(T * n, Real(0)));
    c.query.assign(L, std::vector<Real>(T * n, Real(0)));
    c.state.assign(L, std::vector<Real>((T + 1) * n * m, Real(0)));
    c.logits.assign(T * vocab, Real(0));

    for (size_t t = 0; t < T; ++t) {
        const double* row = p.t.embed.data() + size_t(tokens[t]) * m;
        Real* x = c.stream[0].data() + t * m;
        for (size_t j = 0; j < m; ++j) x[j] = Real(row[j]);
    }

    for (size_t l = 0; l < L; ++l) {
        const auto& lp = p.t.layers[l];
        Real* S = c.state[l].data(); // (T+1) slots of n*m
        if (init) {
            const Mat& s0 = init->layers[l];
            for (size_t i = 0; i < n * m; ++i) S[i] = Real(s0.a[i]);
        }
        for (size_t t = 0; t < T; ++t) {
            const Real* x = c.stream[l].data() + t * m;
            Real* xo = c.stream[l + 1].data() + t * m;
            Real* k = c.key[l].data() + t * n;
            Real* q = c.query[l].data() + t * n;
            const Real* Sprev = S + t * n * m;
            Real* Scur = S + (t + 1) * n * m;

            Real z = Real(lp.c_a);
            for (size_t j = 0; j < m; ++j) z += Real(lp.w_a[j]) * x[j];
            const Real a = stable_sigmoid(z);
            c.gate[l][t] = a;

            for (size_t i = 0; i < n; ++i) {
                const double* wk = lp.w_k.data() + i * m;
                const double* wq = lp.w_q.data() + i * m;
                Real ak = Real(0), aq = Real(0);
                for (size_t j = 0; j < m; ++j) {
                    ak += Real(wk[j]) * x[j];
                    aq += Real(wq[j]) * x[j];
                }
                k[i] = ak;
                q[i] = aq;
            }

            // S_t = a * S_{t-1} + k x^T ; y = S_t^T q ; stream out = x + W_o y
            Real check = Real(0);
            for (size_t i = 0; i < n; ++i) {
                const Real* sp = Sprev + i * m;
                Real* sc = Scur + i * m;
                const Real ki = k[i];
                for (size_t j = 0; j < m; ++j) sc[j] = a * sp[j] + ki * x[j];
            }
            std::vector<Real> y(m, Real(0));
            for (size_t i = 0; i < n; ++i) {
                const Real* sc = Scur + i * m;
                const Real qi = q[i];
                for (size_t j = 0; j < m; ++j) y[j] += sc[j] * qi;
            }
            for (size_t j = 0; j < m; ++j) {
                const double* wo = lp.w_o.data() + j * m;
                Real acc = x[j];
                for (size_t jj = 0; jj < m; ++jj) acc += Real(wo[jj]) * y[jj];
                xo[j] = acc;
                check += acc;
            }
            if (!std::isfinite(double(check)))
                throw numeric_error("non-finite value in layer " + std::to_string(l) +
                                    " at position " + std::to_string(t));
        }
    }

    for (size_t t = 0; t < T; ++t) {
        const Real* x = c.stream[L].data() + t * m;
        Real* lg = c.logits.data() + t * vocab;
        for (size_t v = 0; v < vocab; ++v) {
            const double* wrow = p.t.w_out.data() + v * m;
            Real acc = Real(0);
            for (size_t j = 0; j < m; ++j) acc += Real(wrow[j]) * x[j];
            lg[v] = acc;
        }
    }
}

template <class Real>
ScanResult collect_result(const ScanCache<Real>& c) {
    ScanResult r;
    r.logits.assign(c.T, Vec(c.vocab, 0.0));
    for (size_t t = 0; t < c.T; ++t)
        for (size_t v = 0; v < c.vocab; ++v) r.logits[t][v] = double(c.logits[t * c.vocab + v]);
    r.final_state.layers.assign(c.L, Mat(c.n, c.m));
    for (size_t l = 0; l < c.L; ++l) {
        const Real* S = c.state[l].data() + c.T * c.n * c.m;
        for (size_t i = 0; i < c.n * c.m; ++i) r.final_state.layers[l].a[i] = double(S[i]);
    }
    return r;
}

} // namespace detail

// Recurrent forward pass.  init == nullptr means zero initial state.
inline ScanResult forward_scan(const ModelParams& p, std::span<const Token> tokens,
                               const StateStack* init = nullptr) {
    if (p.config.precision == Precision::f32_compute) {
        detail::ScanCache<float> c;
        detail::scan_forward(p, tokens, init, c);
        return detail::collect_result(c);
    }
    detail::ScanCache<double> c;
    detail::scan_forward(p, tokens, init, c);
    return detail::collect_result(c);
}

// Explicit controllability-matrix unroll: y_t = sum_{s<=t} a_{t:s+1} (q_t.k_s) x_s
// computed layer by layer as a double sum.  Mathematically identical to the
// scan; kept as an independent O(T^2) oracle.  Zero initial state.
template <class Real = double>
std::vector<Vec> unrolled_output(const ModelParams& p, std::span<const Token> tokens) {
    const auto& cfg = p.config;
    detail::check_tokens(cfg, tokens);
    const size_t T = tokens.size();
    if (T > kQuadraticFormMaxLen)
        throw input_error("unrolled_output: sequence length " + std::to_string(T) +
                          " exceeds limit " + std::to_string(kQuadraticFormMaxLen));
    const size_t L = size_t(cfg.num_layers), n = size_t(cfg.state_dim),
                 m = size_t(cfg.embed_dim), vocab = size_t(cfg.vocab_size);

    std::vector<Real> stream(T * m);
    for (size_t t = 0; t < T; ++t) {
        const double* row = p.t.embed.data() + size_t(tokens[t]) * m;
        for (size_t j = 0; j < m; ++j) stream[t * m + j] = Real(row[j]);
    }

    std::vector<Real> gate(T), key(T * n), query(T * n), next(T * m);
    for (size_t l = 0; l < L; ++l) {
        const auto& lp = p.t.layers[l];
        for (size_t t = 0; t < T; ++t) {
            const Real* x = stream.data() + t * m;
            Real z = Real(lp.c_a);
            for (size_t j = 0; j < m; ++j) z += Real(lp.w_a[j]) * x[j];
            gate[t] = stable_sigmoid(z);
            for (size_t i = 0; i < n; ++i) {
                const double* wk = lp.w_k.data() + i * m;
                const double* wq = lp.w_q.data() + i * m;
                Real ak = Real(0), aq = Real(0);
                for (size_t j = 0; j < m; ++j) {
                    ak += Real(wk[j]) * x[j];
                    aq += Real(wq[j]) * x[j];
                }
                key[t * n + i] = ak;
                query[t * n + i] = aq;
            }
        }
        for (size_t t = 0; t < T; ++t) {
            std::vector<Real> y(m, Real(0));
            Real decay = Real(1); // a_{t:s+1}, running product while s descends
            for (size_t s = t + 1; s-- > 0;) {
                Real qk = Real(0);
                for (size_t i = 0; i < n; ++i) qk += query[t * n + i] * key[s * n + i];
                const Real w = decay * qk;
                const Real* xs = stream.data() + s * m;
                for (size_t j = 0; j < m; ++j) y[j] += w * xs[j];
                decay *= gate[s];
            }
            const Real* x = stream.data() + t * m;
            Real* xo = next.data() + t * m;
            for (size_t j = 0; j < m; ++j) {
                const double* wo = lp.w_o.data() + j * m;
                Real acc = x[j];
                for (size_t jj = 0; jj < m; ++jj) acc += Real(wo[jj]) * y[jj];
                xo[j] = acc;
            }
        }
        stream.swap(next);
    }

    std::vector<Vec> logits(T, Vec(vocab, 0.0));
    for (size_t t = 0; t < T; ++t)
        for (size_t v = 0; v < vocab; ++v) {
            const double* wrow = p.t.w_out.data() + v * m;
            Real acc = Real(0);
            for (size_t j = 0; j < m; ++j) acc += Real(wrow[j]) * stream[t * m + j];
            logits[t][v] = double(acc);
        }
    return logits;
}

// Masked linear-attention (state space dual) form of the same layer:
//   Y = (L_mask o (Q K^T)) X,  L_mask[t][s] = prod_{r=s+1..t} a_r for s <= t.
struct SsdLayerForm {
    Mat mask;   // T x T decay mask (lower triangular, unit diagonal)
    Mat scores; // T x T query-key inner products
};

struct SsdResult {
    std::vector<SsdLayerForm> layer_forms;
    std::vector<Vec> logits;
};

inline SsdResult ssd_form(const ModelParams& p, std::span<const Token> tokens) {
    const auto& cfg = p.config;
    detail::check_tokens(cfg, tokens);
    const size_t T = tokens.size();
    if (T > kQuadraticFormMaxLen)
        throw input_error("ssd_form: sequence length " + std::to_string(T) + " exceeds limit " +
                          std::to_string(kQuadraticFormMaxLen));
    const size_t L = size_t(cfg.num_layers), n = size_t(cfg.state_dim),
                 m = size_t(cfg.embed_dim), vocab = size_t(cfg.vocab_size);

    SsdResult out;
    out.layer_forms.reserve(L);

    std::vector<double> stream(T * m), next(T * m);
    for (size_t t = 0; t < T; ++t) {
        const double* row = p.t.embed.data() + size_t(tokens[t]) * m;
        for (size_t j = 0; j < m; ++j) stream[t * m + j] = row[j];
    }

    std::vector<double> gate(T), key(T * n), query(T * n);
    for (size_t l = 0; l < L; ++l) {
        const auto& lp = p.t.layers[l];
        for (size_t t = 0; t < T; ++t) {
            const double* x = stream.data() + t * m;
            double z = lp.c_a;
            for (size_t j = 0; j < m; ++j) z += lp.w_a[j] * x[j];
            gate[t] = stable_sigmoid(z);
            for (size_t i = 0; i < n; ++i) {
                key[t * n + i] = dot(lp.w_k.data() + i * m, x, m);
                query[t * n + i] = dot(lp.w_q.data() + i * m, x, m);
            }
        }
        SsdLayerForm form;
        form.mask = Mat(T, T);
        form.scores = Mat(T, T);
        for (size_t t = 0; t < T; ++t) {
            double decay = 1.0;
            for (size_t s = t + 1; s-- > 0;) {
                form.mask(t, s) = decay;
                form.scores(t, s) = dot(query.data() + t * n, key.data() + s * n, n);
                decay *= gate[s];
            }
            // above the diagonal stays zero: strict causality
        }
        for (size_t t = 0; t < T; ++t) {
            std::vector<double> y(m, 0.0);
            for (size_t s = 0; s <= t; ++s) {
                const double w = form.mask(t, s) * form.scores(t, s);
                const double* xs = stream.data() + s * m;
                for (size_t j = 0; j < m; ++j) y[j] += w * xs[j];
            }
            const double* x = stream.data() + t * m;
            double* xo = next.data() + t * m;
            for (size_t j = 0; j < m; ++j) {
                const double* wo = lp.w_o.data() + j * m;
                double acc = x[j];
                for (size_t jj = 0; jj < m; ++jj) acc += wo[jj] * y[jj];
                xo[j] = acc;
            }
        }
        out.layer_forms.push_back(std::move(form));
        stream.swap(next);
    }

    out.logits.assign(T, Vec(vocab, 0.0));
    for (size_t t = 0; t < T; ++t)
        for (size_t v = 0; v < vocab; ++v)
            out.logits[t][v] = dot(p.t.w_out.data() + v * m, stream.data() + t * m, m);
    return out;
}

inline std::vector<Vec> ssd_attention_form(const ModelParams& p, std::span<const Token> tokens) {
    return ssd_form(p, tokens).logits;
}

// Per-layer split decomposition of query outputs: Y_q = H_q vec(S_ctx) + M_q vec(X_q).
// H_q and M_q are materialized explicitly (block row i of H_q applies the decay
// prefix times q_i to the context state; block (i,j) of M_q is a scalar multiple
// of the identity).  States are vectorized row-major, streams position-major.
struct LayerDecomposition {
    Mat h_q;                // (Tq*m) x (n*m)
    Mat m_q;                // (Tq*m) x (Tq*m), block lower triangular
    std::vector<Vec> y_q;   // reconstructed head outputs for this layer, Tq rows of m
};

struct DecompositionResult {
    std::vector<LayerDecomposition> layers;
    std::vector<Vec> logits; // logits over query positions
};

inline DecompositionResult decomposed_output(const ModelParams& p,
                                             std::span<const Token> context_tokens,
                                             std::span<const Token> query_tokens) {
    const auto& cfg = p.config;
    if (query_tokens.empty()) throw input_error("decomposed_output: query must be nonempty");
    detail::check_tokens(cfg, query_tokens);

    StateStack ctx_state = zero_state(cfg);
    if (!context_tokens.empty()) ctx_state = forward_scan(p, context_tokens).final_state;

    const size_t Tq = query_tokens.size();
    const size_t L = size_t(cfg.num_layers), n = size_t(cfg.state_dim),
                 m = size_t(cfg.embed_dim), vocab = size_t(cfg.vocab_size);

    DecompositionResult out;
    out.layers.reserve(L);

    std::vector<double> stream(Tq * m), next(Tq * m);
    for (size_t t = 0; t < Tq; ++t) {
        const double* row = p.t.embed.data() + size_t(query_tokens[t]) * m;
        for (size_t j = 0; j < m; ++j) stream[t * m + j] = row[j];
    }

    std::vector<double> gate(Tq), key(Tq * n), query(Tq * n);
    for (size_t l = 0; l < L; ++l) {
        const auto& lp = p.t.layers[l];
        for (size_t t = 0; t < Tq; ++t) {
            const double* x = stream.data() + t * m;
            double z = lp.c_a;
            for (size_t j = 0; j < m; ++j) z += lp.w_a[j] * x[j];
            gate[t] = stable_sigmoid(z);
            for (size_t i = 0; i < n; ++i) {
                key[t * n + i] = dot(lp.w_k.data() + i * m, x, m);
                query[t * n + i] = dot(lp.w_q.data() + i * m, x, m);
            }
        }

        LayerDecomposition dec;
        dec.h_q = Mat(Tq * m, n * m);
        dec.m_q = Mat(Tq * m, Tq * m);
        double prefix = 1.0; // product of gates a_1..a_i (context-to-position decay)
        for (size_t i = 0; i < Tq; ++i) {
            prefix *= gate[i];
            // H block: y_i[j] += prefix * sum_r q_i[r] * S[r][j]
            for (size_t j = 0; j < m; ++j)
                for (size_t r = 0; r < n; ++r)
                    dec.h_q(i * m + j, r * m + j) = prefix * query[i * n + r];
            // M blocks: scalar a_{i:j+1} (q_i . k_j) on the diagonal of each m x m block
            double decay = 1.0;
            for (size_t jj = i + 1; jj-- > 0;) {
                const double qk = dot(query.data() + i * n, key.data() + jj * n, n);
                const double w = decay * qk;
                for (size_t j = 0; j < m; ++j) dec.m_q(i * m + j, jj * m + j) = w;
                decay *= gate[jj];
            }
        }

        // Y_q = H_q vec(S_ctx) + M_q vec(X_q), then fold through the residual stream.
        const Mat& S = ctx_state.layers[l];
        std::vector<double> y(Tq * m, 0.0);
        for (size_t row = 0; row < Tq * m; ++row) {
            double acc = dot(dec.h_q.data() + row * (n * m), S.data(), n * m);
            acc += dot(dec.m_q.data() + row * (Tq * m), stream.data(), Tq * m);
            y[row] = acc;
        }
        dec.y_q.assign(Tq, Vec(m, 0.0));
        for (size_t t = 0; t < Tq; ++t)
            for (size_t j = 0; j < m; ++j) dec.y_q[t][j] = y[t * m + j];
        for (size_t t = 0; t < Tq; ++t) {
            const double* x = stream.data() + t * m;
            double* xo = next.data() + t * m;
            for (size_t j = 0; j < m; ++j) {
                const double* wo = lp.w_o.data() + j * m;
                double acc = x[j];
                for (size_t jj = 0; jj < m; ++jj) acc += wo[jj] * y[t * m + jj];
                xo[j] = acc;
            }
        }
        out.layers.push_back(std::move(dec));
        stream.swap(next);
    }

    out.logits.assign(Tq, Vec(vocab, 0.0));
    for (size_t t = 0; t < Tq; ++t)
        for (size_t v = 0; v < vocab; ++v)
            out.logits[t][v] = dot(p.t.w_out.data() + v * m, stream.data() + t * m, m);
    return out;
}

} // namespace rico
