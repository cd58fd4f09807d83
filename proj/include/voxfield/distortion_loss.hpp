// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Distortion loss over ragged ray batches.
//
// For one ray with N samples, normalized interval boundaries s_0 < ... < s_N, midpoints
// m_i = (s_i + s_{i+1}) / 2, lengths len_i = s_{i+1} - s_i and weights w_i:
//
//   L = sum_i sum_j w_i w_j |m_i - m_j|  +  1/3 sum_i w_i^2 len_i
//
// The pairwise term collapses to 2 sum_i w_i (m_i P^w_{i-1} - P^{wm}_{i-1}) with exclusive
// prefix sums P^w, P^{wm} of w and w*m, so forward and backward both run in O(N).

#include "voxfield/common.hpp"

#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace voxfield {

/// Ragged per-ray samples. Ray r owns samples [ray_offsets[r], ray_offsets[r+1]) and the
/// N_r + 1 boundaries s[ray_offsets[r] + r .. ray_offsets[r+1] + r].
struct RaySampleBatch {
    std::vector<std::size_t> ray_offsets{0};
    std::vector<double> s;
    std::vector<double> m;
    std::vector<double> len;
    std::vector<double> w;

    std::size_t num_rays() const { return ray_offsets.empty() ? 0 : ray_offsets.size() - 1; }
    std::size_t num_samples() const { return w.size(); }

    std::span<const double> ray_m(std::size_t r) const { return slice(m, r); }
    std::span<const double> ray_len(std::size_t r) const { return slice(len, r); }
    std::span<const double> ray_w(std::size_t r) const { return slice(w, r); }

    /// Appends a ray given its N+1 boundaries and N weights; derives m and len.
    void add_ray(std::span<const double> boundaries, std::span<const double> weights) {
        if (boundaries.size() != weights.size() + 1) {
            throw std::invalid_argument("RaySampleBatch: a ray with N weights needs N+1 boundaries");
        }
        s.insert(s.end(), boundaries.begin(), boundaries.end());
        for (std::size_t i = 0; i < weights.size(); ++i) {
            m.push_back(0.5 * (boundaries[i] + boundaries[i + 1]));
            len.push_back(boundaries[i + 1] - boundaries[i]);
            w.push_back(weights[i]);
        }
        ray_offsets.push_back(w.size());
    }

private:
    std::span<const double> slice(const std::vector<double>& v, std::size_t r) const {
        return std::span<const double>(v).subspan(ray_offsets[r], ray_offsets[r + 1] - ray_offsets[r]);
    }
};

namespace detail {

inline void validate_layout(const RaySampleBatch& batch) {
    if (batch.ray_offsets.empty() || batch.ray_offsets.front() != 0 ||
        batch.ray_offsets.back() != batch.w.size() || batch.m.size() != batch.w.size() ||
        batch.len.size() != batch.w.size()) {
        throw std::invalid_argument("RaySampleBatch: offsets and per-sample arrays disagree");
    }
    for (std::size_t r = 0; r < batch.num_rays(); ++r) {
        if (batch.ray_offsets[r + 1] < batch.ray_offsets[r]) {
            throw std::invalid_argument("RaySampleBatch: ray offsets must be monotone");
        }
    }
}

// Empty string when the ray is well formed.
inline std::string ray_problem(std::span<const double> m, std::span<const double> len, std::size_t r) {
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!(len[i] >= 0.0)) return "distortion loss: negative interval length on ray " + std::to_string(r);
        if (i > 0 && !(m[i] > m[i - 1])) {
            return "distortion loss: midpoints not strictly increasing on ray " + std::to_string(r);
        }
    }
    return {};
}

// Rethrows the first flagged ray's problem after a parallel pass.
inline void throw_first_bad(const RaySampleBatch& batch, const std::vector<std::uint8_t>& bad) {
    for (std::size_t r = 0; r < bad.size(); ++r) {
        if (bad[r]) throw std::invalid_argument(ray_problem(batch.ray_m(r), batch.ray_len(r), r));
    }
}

}  // namespace detail

/// Throws if the batch breaks its invariants (offsets, increasing midpoints, non-negative lengths).
inline void validate(const RaySampleBatch& batch) {
    detail::validate_layout(batch);
    for (std::size_t r = 0; r < batch.num_rays(); ++r) {
        const std::string problem = detail::ray_problem(batch.ray_m(r), batch.ray_len(r), r);
        if (!problem.empty()) throw std::invalid_argument(problem);
    }
}

/// Loss of a single ray, accumulated in double precision. If `well_formed` is given it is
/// cleared when a length is negative or midpoints do not increase; the check rides along the
/// same pass over the samples.
template <typename W>
double distloss_ray_forward(std::span<const double> m, std::span<const double> len, std::span<const W> w,
                            bool* well_formed = nullptr) {
    double prefix_w = 0.0;
    double prefix_wm = 0.0;
    double pair_term = 0.0;
    double self_term = 0.0;
    double prev_m = -std::numeric_limits<double>::infinity();
    bool ok = true;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double wi = double(w[i]);
        const double mi = m[i];
        const double li = len[i];
        ok &= (li >= 0.0) & (mi > prev_m);
        prev_m = mi;
        pair_term += wi * (mi * prefix_w - prefix_wm);
        self_term += wi * wi * li;
        prefix_w += wi;
        prefix_wm += wi * mi;
    }
    if (well_formed) *well_formed = ok;
    return 2.0 * pair_term + self_term / 3.0;
}

/// Adds scale * dL/dw_k into grad[k] for one ray.
template <typename W, typename G>
void distloss_ray_backward(std::span<const double> m, std::span<const double> len, std::span<const W> w,
                           std::span<G> grad, double scale = 1.0) {
    const std::size_t n = w.size();
    double suffix_w = 0.0;
    double suffix_wm = 0.0;
    for (std::size_t k = n; k-- > 0;) {
        grad[k] += G(scale * 2.0 * (suffix_wm - m[k] * suffix_w));
        suffix_w += double(w[k]);
        suffix_wm += double(w[k]) * m[k];
    }
    double prefix_w = 0.0;
    double prefix_wm = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double wk = double(w[k]);
        grad[k] += G(scale * (2.0 * (m[k] * prefix_w - prefix_wm) + (2.0 / 3.0) * wk * len[k]));
        prefix_w += wk;
        prefix_wm += wk * m[k];
    }
}

/// Sum of per-ray losses, O(total samples).
inline double distloss_forward(const RaySampleBatch& batch) {
    detail::validate_layout(batch);
    const auto rays = std::int64_t(batch.num_rays());
    std::vector<double> per_ray(std::size_t(rays), 0.0);
    std::vector<std::uint8_t> bad(std::size_t(rays), 0);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t r = 0; r < rays; ++r) {
        const auto i = std::size_t(r);
        bool ok = true;
        per_ray[i] = distloss_ray_forward(batch.ray_m(i), batch.ray_len(i), batch.ray_w(i), &ok);
        bad[i] = !ok;
    }
    detail::throw_first_bad(batch, bad);
    double total = 0.0;
    for (double v : per_ray) total += v;
    return total;
}

/// dL/dw for every sample, O(total samples). Sample positions are treated as constants.
inline std::vector<double> distloss_backward(const RaySampleBatch& batch) {
    validate(batch);
    std::vector<double> grad(batch.num_samples(), 0.0);
    const auto rays = std::int64_t(batch.num_rays());
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t r = 0; r < rays; ++r) {
        const auto i = std::size_t(r);
        auto g = std::span<double>(grad).subspan(batch.ray_offsets[i], batch.ray_offsets[i + 1] - batch.ray_offsets[i]);
        distloss_ray_backward(batch.ray_m(i), batch.ray_len(i), batch.ray_w(i), g);
    }
    return grad;
}

inline constexpr std::size_t kDistlossOracleMaxSamples = 100000;

/// Literal O(N^2) double sum per ray. Refuses batches above `max_samples` total samples.
inline double distloss_oracle(const RaySampleBatch& batch, std::size_t max_samples = kDistlossOracleMaxSamples) {
    validate(batch);
    if (batch.num_samples() > max_samples) {
        throw std::invalid_argument("distloss_oracle: batch exceeds the quadratic-cost sample guard");
    }
    double total = 0.0;
    for (std::size_t r = 0; r < batch.num_rays(); ++r) {
        const auto m = batch.ray_m(r);
        const auto len = batch.ray_len(r);
        const auto w = batch.ray_w(r);
        double pairs = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i)
            for (std::size_t j = 0; j < w.size(); ++j) pairs += w[i] * w[j] * std::abs(m[i] - m[j]);
        double self = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) self += w[i] * w[i] * len[i];
        total += pairs + self / 3.0;
    }
    return total;
}

}  // namespace voxfield
