#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace rico {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles.  Everything in this project is small
// (state matrices are n x m with n,m <= a few dozen), so a flat vector with
// index arithmetic is all that is needed.
struct Mat {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(size_t r, size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(size_t i, size_t j) { return a[i * cols + j]; }
    double operator()(size_t i, size_t j) const { return a[i * cols + j]; }

    size_t size() const { return a.size(); }
    double* data() { return a.data(); }
    const double* data() const { return a.data(); }

    bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && a == o.a; }
};

// y = A x
inline void matvec(const Mat& m, const double* x, double* y) {
    for (size_t i = 0; i < m.rows; ++i) {
        double acc = 0.0;
        const double* row = m.data() + i * m.cols;
        for (size_t j = 0; j < m.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

// y = A^T x
inline void matvec_t(const Mat& m, const double* x, double* y) {
    for (size_t j = 0; j < m.cols; ++j) y[j] = 0.0;
    for (size_t i = 0; i < m.rows; ++i) {
        const double* row = m.data() + i * m.cols;
        const double xi = x[i];
        for (size_t j = 0; j < m.cols; ++j) y[j] += row[j] * xi;
    }
}

// A += u v^T
inline void add_outer(Mat& m, const double* u, const double* v) {
    for (size_t i = 0; i < m.rows; ++i) {
        double* row = m.data() + i * m.cols;
        const double ui = u[i];
        for (size_t j = 0; j < m.cols; ++j) row[j] += ui * v[j];
    }
}

inline double dot(const double* x, const double* y, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

inline double frob_dot(const Mat& x, const Mat& y) { return dot(x.data(), y.data(), x.size()); }

inline void axpy(double alpha, const Mat& x, Mat& y) {
    for (size_t i = 0; i < x.size(); ++i) y.a[i] += alpha * x.a[i];
}

inline bool all_finite(const Mat& m) {
    for (double v : m.a)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace rico
