#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "scan.hpp"
#include "state.hpp"

namespace rico {

// Instrumented pass counters; one "forward" is one scan over a sequence, one
// "backward" is one reverse sweep.  Query-time call budgets are asserted on
// these.
struct ModelCallCounter {
    uint64_t forward = 0;
    uint64_t backward = 0;
};

// Half-open range of token positions whose prediction is scored.
struct TokenSpan {
    size_t begin = 0;
    size_t end = 0;
    size_t size() const { return end - begin; }
};

struct LossReport {
    double total = 0.0;
    std::vector<double> per_token;
    size_t token_count = 0;
};

namespace detail {

inline void check_span(std::span<const Token> tokens, TokenSpan span) {
    if (span.begin >= span.end) throw input_error("scored span is empty");
    if (span.begin < 1)
        throw input_error("scored span must start at position >= 1 (token 0 has no predecessor)");
    if (span.end > tokens.size()) throw input_error("scored span exceeds sequence length");
}

// Cross-entropy of tokens[t] under logits row t-1, summed over the span.
template <class Real>
LossReport eval_cross_entropy(const ScanCache<Real>& c, std::span<const Token> tokens,
                              TokenSpan span) {
    LossReport rep;
    rep.per_token.reserve(span.size());
    for (size_t t = span.begin; t < span.end; ++t) {
        const Real* row = c.logits.data() + (t - 1) * c.vocab;
        double mx = double(row[0]);
        for (size_t v = 1; v < c.vocab; ++v) mx = std::max(mx, double(row[v]));
        double sum = 0.0;
        for (size_t v = 0; v < c.vocab; ++v) sum += std::exp(double(row[v]) - mx);
        const double lse = mx + std::log(sum);
        const double loss = lse - double(row[size_t(tokens[t])]);
        rep.per_token.push_back(loss);
        rep.total += loss;
    }
    rep.token_count = rep.per_token.size();
    return rep;
}

// Reverse sweep through the cached forward pass.  Fills exact gradients of the
// summed span cross-entropy with respect to the initial state (sgrad) and/or
// every parameter tensor (pgrad); either output may be null.
inline void scan_backward(const ModelParams& p, const ScanCache<double>& c,
                          std::span<const Token> tokens, TokenSpan span, ParamTensors* pgrad,
                          StateStack* sgrad) {
    const size_t T = c.T, L = c.L, n = c.n, m = c.m, vocab = c.vocab;

    // d(loss)/d(logits): softmax minus one-hot at each scored position.
    std::vector<double> dlogits(T * vocab, 0.0);
    for (size_t t = span.begin; t < span.end; ++t) {
        const double* row = c.logits.data() + (t - 1) * vocab;
        double* drow = dlogits.data() + (t - 1) * vocab;
        double mx = row[0];
        for (size_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
        double sum = 0.0;
        for (size_t v = 0; v < vocab; ++v) sum += std::exp(row[v] - mx);
        for (size_t v = 0; v < vocab; ++v) drow[v] += std::exp(row[v] - mx) / sum;
        drow[size_t(tokens[t])] -= 1.0;
    }

    // Through the unembedding into the final stream.  Rows outside the scored
    // span are zero and skipped entrywise.
    std::vector<double> dstream(T * m, 0.0);
    for (size_t t = 0; t < T; ++t) {
        const double* drow = dlogits.data() + t * vocab;
        double* dx = dstream.data() + t * m;
        for (size_t v = 0; v < vocab; ++v) {
            const double dv = drow[v];
            if (dv == 0.0) continue;
            const double* wrow = p.t.w_out.data() + v * m;
            for (size_t j = 0; j < m; ++j) dx[j] += dv * wrow[j];
            if (pgrad) {
                double* grow = pgrad->w_out.data() + v * m;
                const double* x = c.stream[L].data() + t * m;
                for (size_t j = 0; j < m; ++j) grow[j] += dv * x[j];
            }
        }
    }

    std::vector<double> dprev(T * m);
    std::vector<double> u(m), y(m), dk(n), dq(n);
    Mat G(n, m);

    for (size_t l = L; l-- > 0;) {
        const auto& lp = p.t.layers[l];
        LayerParams* lg = pgrad ? &pgrad->layers[l] : nullptr;
        std::fill(dprev.begin(), dprev.end(), 0.0);
        std::fill(G.a.begin(), G.a.end(), 0.0);

        for (size_t t = T; t-- > 0;) {
            const double* dout = dstream.data() + t * m;
            const double* x = c.stream[l].data() + t * m;
            const double* k = c.key[l].data() + t * n;
            const double* q = c.query[l].data() + t * n;
            const double* Scur = c.state[l].data() + (t + 1) * n * m;
            const double* Sprev = c.state[l].data() + t * n * m;
            const double a = c.gate[l][t];
            double* dx = dprev.data() + t * m;

            // u = W_o^T dout; y recomputed for the W_o gradient
            matvec_t(lp.w_o, dout, u.data());
            if (lg) {
                for (size_t j = 0; j < m; ++j) y[j] = 0.0;
                for (size_t i = 0; i < n; ++i) {
                    const double* sc = Scur + i * m;
                    const double qi = q[i];
                    for (size_t j = 0; j < m; ++j) y[j] += sc[j] * qi;
                }
                for (size_t j = 0; j < m; ++j) {
                    double* grow = lg->w_o.data() + j * m;
                    const double dj = dout[j];
                    for (size_t jj = 0; jj < m; ++jj) grow[jj] += dj * y[jj];
                }
            }

            // residual path
            for (size_t j = 0; j < m; ++j) dx[j] += dout[j];

            // dq = S_t u ; dx += W_q^T dq ; dW_q += dq x^T
            for (size_t i = 0; i < n; ++i) dq[i] = dot(Scur + i * m, u.data(), m);
            for (size_t i = 0; i < n; ++i) {
                const double* wq = lp.w_q.data() + i * m;
                const double di = dq[i];
                for (size_t j = 0; j < m; ++j) dx[j] += di * wq[j];
            }
            if (lg) add_outer(lg->w_q, dq.data(), x);

            // state gradient: G_t = q_t u^T + a_{t+1} G_{t+1}; the a_{t+1}
            // scaling happened at the end of the previous (t+1) iteration.
            add_outer(G, q, u.data());

            // decay gate: da = <G, S_{t-1}>
            const double da = dot(G.data(), Sprev, n * m);
            const double dz = da * a * (1.0 - a);
            if (lg) {
                for (size_t j = 0; j < m; ++j) lg->w_a[j] += dz * x[j];
                lg->c_a += dz;
            }
            for (size_t j = 0; j < m; ++j) dx[j] += dz * lp.w_a[j];

            // injection k x^T: dk = G x, dx += G^T k
            for (size_t i = 0; i < n; ++i) dk[i] = dot(G.data() + i * m, x, m);
            for (size_t i = 0; i < n; ++i) {
                const double* wk = lp.w_k.data() + i * m;
                const double di = dk[i];
                for (size_t j = 0; j < m; ++j) dx[j] += di * wk[j];
            }
            if (lg) add_outer(lg->w_k, dk.data(), x);
            for (size_t i = 0; i < n; ++i) {
                const double ki = k[i];
                const double* gi = G.data() + i * m;
                for (size_t j = 0; j < m; ++j) dx[j] += gi[j] * ki;
            }

            // pass the recurrence gradient to S_{t-1}
            for (auto& g : G.a) g *= a;
        }

        if (sgrad)
            for (size_t i = 0; i < n * m; ++i) sgrad->layers[l].a[i] = G.a[i];
        dstream.swap(dprev);
    }

    if (pgrad)
        for (size_t t = 0; t < T; ++t) {
            double* grow = pgrad->embed.data() + size_t(tokens[t]) * m;
            const double* dx = dstream.data() + t * m;
            for (size_t j = 0; j < m; ++j) grow[j] += dx[j];
        }
}

} // namespace detail

// Summed next-token cross-entropy over the span, conditioned on `init`
// (null = zero state).  One forward pass.
inline LossReport sequence_loss(const ModelParams& p, std::span<const Token> tokens,
                                const StateStack* init, TokenSpan span,
                                ModelCallCounter* calls = nullptr) {
    detail::check_span(tokens, span);
    if (calls) calls->forward++;
    if (p.config.precision == Precision::f32_compute) {
        detail::ScanCache<float> c;
        detail::scan_forward(p, tokens, init, c);
        return detail::eval_cross_entropy(c, tokens, span);
    }
    detail::ScanCache<double> c;
    detail::scan_forward(p, tokens, init, c);
    return detail::eval_cross_entropy(c, tokens, span);
}

// Loss plus its exact gradient with respect to the injected initial state.
// Exactly one forward and one backward pass; gradients always run in f64.
inline std::pair<LossReport, StateStack> loss_and_state_grad(const ModelParams& p,
                                                             std::span<const Token> tokens,
                                                             const StateStack* init, TokenSpan span,
                                                             ModelCallCounter* calls = nullptr) {
    detail::check_span(tokens, span);
    if (calls) {
        calls->forward++;
        calls->backward++;
    }
    detail::ScanCache<double> c;
    detail::scan_forward(p, tokens, init, c);
    LossReport rep = detail::eval_cross_entropy(c, tokens, span);
    StateStack g = zero_state(p.config);
    detail::scan_backward(p, c, tokens, span, nullptr, &g);
    return {std::move(rep), std::move(g)};
}

inline StateStack state_gradient(const ModelParams& p, std::span<const Token> tokens,
                                 const StateStack* init, TokenSpan span,
                                 ModelCallCounter* calls = nullptr) {
    return loss_and_state_grad(p, tokens, init, span, calls).second;
}

// Exact gradients for every parameter tensor (zero initial state).
inline ParamTensors param_gradients(const ModelParams& p, std::span<const Token> tokens,
                                    TokenSpan span, ModelCallCounter* calls = nullptr) {
    detail::check_span(tokens, span);
    if (calls) {
        calls->forward++;
        calls->backward++;
    }
    detail::ScanCache<double> c;
    detail::scan_forward(p, tokens, nullptr, c);
    ParamTensors g = zero_param_tensors(p.config);
    detail::scan_backward(p, c, tokens, span, &g, nullptr);
    return g;
}

// Loss + parameter gradients from a single forward/backward pair (training).
inline std::pair<LossReport, ParamTensors> loss_and_param_grads(const ModelParams& p,
                                                                std::span<const Token> tokens,
                                                                TokenSpan span,
                                                                ModelCallCounter* calls = nullptr) {
    detail::check_span(tokens, span);
    if (calls) {
        calls->forward++;
        calls->backward++;
    }
    detail::ScanCache<double> c;
    detail::scan_forward(p, tokens, nullptr, c);
    LossReport rep = detail::eval_cross_entropy(c, tokens, span);
    ParamTensors g = zero_param_tensors(p.config);
    detail::scan_backward(p, c, tokens, span, &g, nullptr);
    return {std::move(rep), std::move(g)};
}

} // namespace rico
