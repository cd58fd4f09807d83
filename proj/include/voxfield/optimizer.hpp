// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "voxfield/common.hpp"

#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace voxfield {

template <std::floating_point T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::uint64_t step = 0;
    double lr = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(std::size_t size, double learning_rate, double b1 = 0.9, double b2 = 0.99, double epsilon = 1e-8)
        : m(size, T(0)), v(size, T(0)), lr(learning_rate), beta1(b1), beta2(b2), eps(epsilon) {}

    /// Zeroes both moments and the step counter, keeping hyperparameters.
    void reset(std::size_t size) {
        m.assign(size, T(0));
        v.assign(size, T(0));
        step = 0;
    }
};

namespace detail {
template <std::floating_point T>
void check_adam_shapes(std::span<const T> params, std::span<const T> grads, const AdamState<T>& state) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw std::invalid_argument("adam: params, grads and moment buffers must have equal size");
    }
}
}  // namespace detail

/// Fused Adam step that leaves entries with a zero gradient untouched: parameter, first and
/// second moment are all frozen. The step counter is global and advances once per call; bias
/// correction for updated entries uses it. `lr_mult` scales the learning rate for this call.
template <std::floating_point T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr_mult = 1.0) {
    detail::check_adam_shapes<T>(params, grads, state);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(double(grads[i]))) {
            throw std::domain_error("adam: non-finite gradient at index " + std::to_string(i));
        }
    }
    state.step += 1;
    const double t = double(state.step);
    const double b1 = state.beta1, b2 = state.beta2;
    const double bias1 = 1.0 - std::pow(b1, t);
    const double bias2 = 1.0 - std::pow(b2, t);
    const double lr = state.lr * lr_mult;
    const double eps = state.eps;
    T* p = params.data();
    const T* g = grads.data();
    T* m = state.m.data();
    T* v = state.v.data();
    const auto n = std::int64_t(params.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const double gi = double(g[i]);
        if (gi == 0.0) continue;
        const double mi = b1 * double(m[i]) + (1.0 - b1) * gi;
        const double vi = b2 * double(v[i]) + (1.0 - b2) * gi * gi;
        m[i] = T(mi);
        v[i] = T(vi);
        p[i] = T(double(p[i]) - lr * (mi / bias1) / (std::sqrt(vi / bias2) + eps));
    }
}

/// Textbook Adam over every entry, one scalar at a time. Test oracle for adam_step.
template <std::floating_point T>
void adam_reference_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state,
                         double lr_mult = 1.0) {
    detail::check_adam_shapes<T>(params, grads, state);
    state.step += 1;
    const double t = double(state.step);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = double(grads[i]);
        const double m = state.beta1 * double(state.m[i]) + (1.0 - state.beta1) * g;
        const double v = state.beta2 * double(state.v[i]) + (1.0 - state.beta2) * g * g;
        state.m[i] = T(m);
        state.v[i] = T(v);
        const double m_hat = m / (1.0 - std::pow(state.beta1, t));
        const double v_hat = v / (1.0 - std::pow(state.beta2, t));
        params[i] = T(double(params[i]) - state.lr * lr_mult * m_hat / (std::sqrt(v_hat) + state.eps));
    }
}

}  // namespace voxfield
