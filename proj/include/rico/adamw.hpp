#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "errors.hpp"

namespace rico {

struct AdamWConfig {
    double learning_rate = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam over parameter groups (spans into caller-owned
// storage).  Group shapes are fixed at the first step.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    size_t step_count() const { return t_; }

    void step(std::span<double> params, std::span<const double> grads) {
        std::vector<std::span<double>> p{params};
        std::vector<std::span<const double>> g{grads};
        step(p, g);
    }

    void step(std::span<std::span<double>> params, std::span<std::span<const double>> grads) {
        if (params.size() != grads.size()) throw input_error("AdamW: group count mismatch");
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].size(), 0.0);
                v_[i].assign(params[i].size(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (size_t gi = 0; gi < params.size(); ++gi) {
            auto p = params[gi];
            auto g = grads[gi];
            if (p.size() != g.size() || p.size() != m_[gi].size())
                throw input_error("AdamW: group size mismatch");
            double* m = m_[gi].data();
            double* v = v_[gi].data();
            for (size_t i = 0; i < p.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= cfg_.learning_rate *
                        (mhat / (std::sqrt(vhat) + cfg_.epsilon) + cfg_.weight_decay * p[i]);
            }
        }
    }

private:
    AdamWConfig cfg_;
    size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace rico
