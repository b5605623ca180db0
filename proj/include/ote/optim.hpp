#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ote/errors.hpp"

namespace ote {

// Dense Adam moments over a flat parameter vector (or a concatenation of
// sections updated through subspans).
template <class Real>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t t = 0;
    std::vector<Real> m;
    std::vector<Real> v;

    void resize(std::size_t n) {
        m.assign(n, Real(0));
        v.assign(n, Real(0));
        t = 0;
    }
};

// One bias-corrected update at step t over aligned spans.
template <class Real>
void adam_update(std::span<Real> params, std::span<const Real> grads, std::span<Real> m,
                 std::span<Real> v, std::uint64_t t, double lr, double beta1, double beta2,
                 double epsilon) {
    if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size())
        throw InvariantError("adam_update: shape mismatch");
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
        const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
        m[i] = static_cast<Real>(mi);
        v[i] = static_cast<Real>(vi);
        params[i] -= static_cast<Real>(lr * (mi / c1) / (std::sqrt(vi / c2) + epsilon));
    }
}

template <class Real>
void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState<Real>& state,
               double lr) {
    ++state.t;
    adam_update(params, grads, std::span<Real>(state.m), std::span<Real>(state.v), state.t, lr,
                state.beta1, state.beta2, state.epsilon);
}

} // namespace ote
