#pragma once

#include <cstddef>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "model.hpp"

namespace rico {

// Per-layer hidden-state matrices (each n x m).  StateStacks are what gets
// injected, mixed with document weights, and differentiated against; addition
// and scaling act elementwise per layer.
struct StateStack {
    std::vector<Mat> layers;

    size_t num_layers() const { return layers.size(); }

    bool same_shape(const StateStack& o) const {
        if (layers.size() != o.layers.size()) return false;
        for (size_t l = 0; l < layers.size(); ++l)
            if (layers[l].rows != o.layers[l].rows || layers[l].cols != o.layers[l].cols)
                return false;
        return true;
    }

    bool operator==(const StateStack& o) const {
        if (layers.size() != o.layers.size()) return false;
        for (size_t l = 0; l < layers.size(); ++l)
            if (!(layers[l] == o.layers[l])) return false;
        return true;
    }
};

inline StateStack zero_state(const ModelConfig& cfg) {
    StateStack s;
    s.layers.assign(size_t(cfg.num_layers),
                    Mat(size_t(cfg.state_dim), size_t(cfg.embed_dim)));
    return s;
}

inline StateStack zeros_like(const StateStack& x) {
    StateStack s;
    s.layers.reserve(x.layers.size());
    for (const auto& m : x.layers) s.layers.emplace_back(m.rows, m.cols);
    return s;
}

inline void state_axpy(double alpha, const StateStack& x, StateStack& y) {
    if (!y.same_shape(x)) throw input_error("state_axpy: shape mismatch");
    for (size_t l = 0; l < x.layers.size(); ++l) axpy(alpha, x.layers[l], y.layers[l]);
}

inline void state_scale(StateStack& x, double alpha) {
    for (auto& m : x.layers)
        for (auto& v : m.a) v *= alpha;
}

// Frobenius inner product summed over layers.
inline double state_dot(const StateStack& x, const StateStack& y) {
    if (!x.same_shape(y)) throw input_error("state_dot: shape mismatch");
    double acc = 0.0;
    for (size_t l = 0; l < x.layers.size(); ++l) acc += frob_dot(x.layers[l], y.layers[l]);
    return acc;
}

inline double state_sqnorm(const StateStack& x) { return state_dot(x, x); }

inline bool state_finite(const StateStack& x) {
    for (const auto& m : x.layers)
        if (!all_finite(m)) return false;
    return true;
}

} // namespace rico
