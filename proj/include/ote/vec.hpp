#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ote/errors.hpp"

namespace ote {

// Dense kernels at the sub-embedding scale. Matrices are square, row-major.
// Only the shapes the model needs; no broadcasting.

template <class Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
    if (a.size() != b.size()) throw NumericError("dot: dimension mismatch");
    Real s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <class Real>
Real l2_norm(std::span<const Real> a) {
    Real s = 0;
    for (Real x : a) s += x * x;
    return std::sqrt(s);
}

// y = M x with M row-major n x n.
template <class Real>
void matvec(const Real* m, const Real* x, Real* y, int n) {
    for (int i = 0; i < n; ++i) {
        Real s = 0;
        const Real* row = m + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) s += row[j] * x[j];
        y[i] = s;
    }
}

// y = M^T x.
template <class Real>
void matvec_t(const Real* m, const Real* x, Real* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = 0;
    for (int j = 0; j < n; ++j) {
        const Real* row = m + static_cast<std::size_t>(j) * n;
        const Real xj = x[j];
        for (int i = 0; i < n; ++i) y[i] += row[i] * xj;
    }
}

// Checked span front-end for the raw kernel.
template <class Real>
void matvec(std::span<const Real> m, std::span<const Real> x, std::span<Real> y) {
    const std::size_t n = x.size();
    if (y.size() != n || m.size() != n * n)
        throw NumericError("matvec: dimension mismatch");
    matvec(m.data(), x.data(), y.data(), static_cast<int>(n));
}

// C = A B, all row-major n x n.
template <class Real>
void matmul(const Real* a, const Real* b, Real* c, int n) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            Real s = 0;
            for (int k = 0; k < n; ++k)
                s += a[static_cast<std::size_t>(i) * n + k] * b[static_cast<std::size_t>(k) * n + j];
            c[static_cast<std::size_t>(i) * n + j] = s;
        }
}

template <class Real>
void axpy(Real a, std::span<const Real> x, std::span<Real> y) {
    if (x.size() != y.size()) throw NumericError("axpy: dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

template <class Real>
bool all_finite(std::span<const Real> a) {
    for (Real x : a)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

template <class Real>
Real max_abs(std::span<const Real> a) {
    Real m = 0;
    for (Real x : a) m = std::max(m, std::abs(x));
    return m;
}

// Convenience square-matrix value type used by tests and pattern checks.
template <class Real>
struct Mat {
    int n = 0;
    std::vector<Real> a;

    Mat() = default;
    explicit Mat(int dim) : n(dim), a(static_cast<std::size_t>(dim) * dim, Real(0)) {}

    Real& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
    const Real& operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }
    Real* data() { return a.data(); }
    const Real* data() const { return a.data(); }

    static Mat identity(int dim) {
        Mat m(dim);
        for (int i = 0; i < dim; ++i) m(i, i) = Real(1);
        return m;
    }
};

// max |A A^T - I|, the orthogonality residual. Accumulates in double.
template <class Real>
double orthogonality_residual(const Real* q, int n) {
    double worst = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int k = 0; k < n; ++k)
                s += static_cast<double>(q[static_cast<std::size_t>(i) * n + k]) *
                     static_cast<double>(q[static_cast<std::size_t>(j) * n + k]);
            if (i == j) s -= 1.0;
            worst = std::max(worst, std::abs(s));
        }
    return worst;
}

} // namespace ote
