// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "voxfield/common.hpp"

#include <algorithm>
#include <array>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

namespace voxfield {

/// Dense grid of `channels` values per node over an axis-aligned box.
///
/// Node (x, y, z) sits at normalized coordinate (x/(Nx-1), y/(Ny-1), z/(Nz-1)) of the
/// box. Storage is x-major: value (x, y, z, c) lives at ((x*Ny + y)*Nz + z)*C + c.
template <std::floating_point T>
class VoxelGrid {
public:
    using value_type = T;

    VoxelGrid() = default;

    VoxelGrid(Resolution resolution, int channels, const Aabb& aabb, T init_value = T(0))
        : res_(resolution), channels_(channels), aabb_(aabb) {
        if (res_.x < 2 || res_.y < 2 || res_.z < 2) {
            throw std::invalid_argument("grid resolution must be at least 2 along every axis");
        }
        if (channels_ < 1) throw std::invalid_argument("grid needs at least one channel");
        if (!aabb_.valid()) throw std::invalid_argument("grid aabb is degenerate or non-finite");
        if (!std::isfinite(double(init_value))) throw std::invalid_argument("grid init value is not finite");
        data_.assign(std::size_t(res_.count()) * std::size_t(channels_), init_value);
    }

    const Resolution& resolution() const { return res_; }
    int channels() const { return channels_; }
    const Aabb& aabb() const { return aabb_; }
    std::int64_t node_count() const { return res_.count(); }
    std::size_t size() const { return data_.size(); }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    std::int64_t node_index(int x, int y, int z) const {
        return (std::int64_t(x) * res_.y + y) * res_.z + z;
    }
    T& at(int x, int y, int z, int c = 0) { return data_[std::size_t(node_index(x, y, z) * channels_ + c)]; }
    T at(int x, int y, int z, int c = 0) const {
        return data_[std::size_t(node_index(x, y, z) * channels_ + c)];
    }

    Vec3d node_normalized(int x, int y, int z) const {
        return {double(x) / (res_.x - 1), double(y) / (res_.y - 1), double(z) / (res_.z - 1)};
    }
    Vec3d node_world(int x, int y, int z) const {
        return aabb_.min + node_normalized(x, y, z).cwiseProduct(aabb_.extent());
    }
    Vec3d world_to_normalized(const Vec3d& p) const {
        return (p - aabb_.min).cwiseQuotient(aabb_.extent());
    }

    /// World-space node spacing along each axis.
    Vec3d spacing() const {
        return aabb_.extent().cwiseQuotient(Vec3d(res_.x - 1, res_.y - 1, res_.z - 1));
    }
    /// Mean node spacing; the unit "voxel" used for step sizes.
    double voxel_size() const { return spacing().mean(); }

private:
    Resolution res_;
    int channels_ = 1;
    Aabb aabb_;
    std::vector<T> data_;
};

/// Accumulator for dL/d(grid value), shaped like its grid.
template <std::floating_point T>
class GradBuffer {
public:
    GradBuffer() = default;
    explicit GradBuffer(const VoxelGrid<T>& grid)
        : res_(grid.resolution()), channels_(grid.channels()), data_(grid.size(), T(0)) {}

    void zero() { std::fill(data_.begin(), data_.end(), T(0)); }
    bool matches(const VoxelGrid<T>& grid) const {
        return res_ == grid.resolution() && channels_ == grid.channels();
    }

    const Resolution& resolution() const { return res_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

private:
    Resolution res_;
    int channels_ = 1;
    std::vector<T> data_;
};

/// The 8 nodes surrounding a normalized point and their trilinear weights.
/// Corner k has offsets (k>>2 & 1, k>>1 & 1, k & 1) from the lower node.
struct TrilinearStencil {
    std::array<std::int64_t, 8> node{};
    std::array<double, 8> weight{};
};

namespace detail {
inline double clamp_unit(double v) { return v > 0.0 ? (v < 1.0 ? v : 1.0) : 0.0; }
}  // namespace detail

inline TrilinearStencil make_stencil(const Resolution& res, const Vec3d& u) {
    int lo[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
        const int n = res[a];
        const double g = detail::clamp_unit(u[a]) * (n - 1);
        const int i = std::min(int(g), n - 2);
        lo[a] = i;
        frac[a] = g - i;
    }
    const std::int64_t sx = std::int64_t(res.y) * res.z;
    const std::int64_t sy = res.z;
    const std::int64_t base = lo[0] * sx + lo[1] * sy + lo[2];
    TrilinearStencil st;
    for (int k = 0; k < 8; ++k) {
        const int dx = (k >> 2) & 1, dy = (k >> 1) & 1, dz = k & 1;
        st.node[k] = base + dx * sx + dy * sy + dz;
        st.weight[k] = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                       (dz ? frac[2] : 1.0 - frac[2]);
    }
    return st;
}

/// out[c] = sum_k weight_k * values[node_k*C + c]
template <std::floating_point T>
inline void gather(std::span<const T> values, int channels, const TrilinearStencil& st, double* out) {
    for (int c = 0; c < channels; ++c) out[c] = 0.0;
    for (int k = 0; k < 8; ++k) {
        const T* v = values.data() + st.node[k] * channels;
        const double w = st.weight[k];
        for (int c = 0; c < channels; ++c) out[c] += w * double(v[c]);
    }
}

template <std::floating_point T>
inline void scatter(std::span<T> grad, int channels, const TrilinearStencil& st, const double* upstream) {
    for (int k = 0; k < 8; ++k) {
        T* g = grad.data() + st.node[k] * channels;
        const double w = st.weight[k];
        for (int c = 0; c < channels; ++c) g[c] += T(w * upstream[c]);
    }
}

/// Interpolates the grid at normalized points; points outside [0,1]^3 clamp to the boundary.
/// Returns M x C values, row per point.
template <std::floating_point T>
std::vector<T> trilinear_sample(const VoxelGrid<T>& grid, std::span<const Vec3d> points) {
    const int C = grid.channels();
    std::vector<T> out(points.size() * std::size_t(C));
    const auto n = std::int64_t(points.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        double buf[64];
        std::vector<double> heap;
        double* acc = buf;
        if (C > 64) {
            heap.resize(std::size_t(C));
            acc = heap.data();
        }
        gather(grid.values(), C, make_stencil(grid.resolution(), points[std::size_t(i)]), acc);
        for (int c = 0; c < C; ++c) out[std::size_t(i) * C + c] = T(acc[c]);
    }
    return out;
}

/// Adjoint of trilinear_sample: adds upstream (M x C) into the 8 corner slots of each point.
/// Runs serially in point order so the result does not depend on thread count.
template <std::floating_point T>
void trilinear_scatter_grad(GradBuffer<T>& grid_grad, std::span<const Vec3d> points,
                            std::span<const T> upstream) {
    const int C = grid_grad.channels();
    if (upstream.size() != points.size() * std::size_t(C)) {
        throw std::invalid_argument("trilinear_scatter_grad: upstream must hold points x channels values");
    }
    std::vector<double> up(static_cast<std::size_t>(C));
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (int c = 0; c < C; ++c) up[std::size_t(c)] = double(upstream[i * C + c]);
        scatter(grid_grad.values(), C, make_stencil(grid_grad.resolution(), points[i]), up.data());
    }
}

/// Resamples the grid at a finer node lattice over the same box.
template <std::floating_point T>
VoxelGrid<T> upscale(const VoxelGrid<T>& grid, Resolution new_resolution) {
    const Resolution& old = grid.resolution();
    if (new_resolution.x < old.x || new_resolution.y < old.y || new_resolution.z < old.z) {
        throw std::invalid_argument("upscale: new resolution must not be smaller than the current one");
    }
    VoxelGrid<T> out(new_resolution, grid.channels(), grid.aabb());
    const int C = grid.channels();
    std::vector<double> acc(static_cast<std::size_t>(C));
    for (int x = 0; x < new_resolution.x; ++x)
        for (int y = 0; y < new_resolution.y; ++y)
            for (int z = 0; z < new_resolution.z; ++z) {
                const auto st = make_stencil(old, out.node_normalized(x, y, z));
                gather(grid.values(), C, st, acc.data());
                for (int c = 0; c < C; ++c) out.at(x, y, z, c) = T(acc[std::size_t(c)]);
            }
    return out;
}

inline double huber(double d, double delta) {
    const double a = std::abs(d);
    return a <= delta ? 0.5 * d * d : delta * (a - 0.5 * delta);
}

inline double huber_derivative(double d, double delta) { return std::clamp(d, -delta, delta); }

/// Marks nodes with any nonzero gradient channel.
template <std::floating_point T>
std::vector<std::uint8_t> active_nodes(const GradBuffer<T>& grad) {
    const int C = grad.channels();
    const auto g = grad.values();
    std::vector<std::uint8_t> active(g.size() / std::size_t(C), 0);
    for (std::size_t i = 0; i < active.size(); ++i) {
        for (int c = 0; c < C; ++c) {
            if (g[i * C + c] != T(0)) {
                active[i] = 1;
                break;
            }
        }
    }
    return active;
}

/// Adds weight * d(TV)/d(value) into grid_grad, where
///   TV = (1/P) * sum over contributing axis-neighbor pairs (i,j) and channels of huber(v_i - v_j)
/// and P is the number of contributing pairs. In dense mode every pair contributes; otherwise
/// only pairs with at least one endpoint flagged in `active_set` (one flag per node; an empty
/// span means no node is active). No loss value is produced.
///
/// Returns P, the number of pairs evaluated.
template <std::floating_point T>
std::int64_t tv_add_grad(const VoxelGrid<T>& grid, GradBuffer<T>& grid_grad, double weight, bool dense_mode,
                         std::span<const std::uint8_t> active_set = {}, double huber_delta = 1.0) {
    if (!(weight >= 0.0)) throw std::invalid_argument("tv_add_grad: weight must be non-negative");
    if (!(huber_delta > 0.0)) throw std::invalid_argument("tv_add_grad: huber delta must be positive");
    if (!grid_grad.matches(grid)) throw std::invalid_argument("tv_add_grad: gradient buffer shape mismatch");
    if (!dense_mode && !active_set.empty() && std::int64_t(active_set.size()) != grid.node_count()) {
        throw std::invalid_argument("tv_add_grad: active set must hold one flag per node");
    }
    if (!dense_mode && active_set.empty()) return 0;

    const Resolution r = grid.resolution();
    const std::int64_t stride[3] = {std::int64_t(r.y) * r.z, r.z, 1};
    auto active = [&](std::int64_t i) { return dense_mode || active_set[std::size_t(i)] != 0; };

    std::int64_t pairs = 0;
    if (dense_mode) {
        pairs = std::int64_t(r.x - 1) * r.y * r.z + std::int64_t(r.x) * (r.y - 1) * r.z +
                std::int64_t(r.x) * r.y * (r.z - 1);
    } else {
        for (int x = 0; x < r.x; ++x)
            for (int y = 0; y < r.y; ++y)
                for (int z = 0; z < r.z; ++z) {
                    const std::int64_t i = grid.node_index(x, y, z);
                    const int pos[3] = {x, y, z};
                    for (int a = 0; a < 3; ++a) {
                        if (pos[a] + 1 < r[a] && (active(i) || active(i + stride[a]))) ++pairs;
                    }
                }
    }
    if (pairs == 0 || weight == 0.0) return pairs;

    const double scale = weight / double(pairs);
    const int C = grid.channels();
    const auto v = grid.values();
    auto g = grid_grad.values();

    // Gather form: each node sums its own pair terms, so no two workers write the same slot.
#pragma omp parallel for schedule(static)
    for (int x = 0; x < r.x; ++x) {
        for (int y = 0; y < r.y; ++y) {
            for (int z = 0; z < r.z; ++z) {
                const std::int64_t i = grid.node_index(x, y, z);
                const bool self_active = active(i);
                const int pos[3] = {x, y, z};
                for (int a = 0; a < 3; ++a) {
                    for (int dir = -1; dir <= 1; dir += 2) {
                        const int q = pos[a] + dir;
                        if (q < 0 || q >= r[a]) continue;
                        const std::int64_t j = i + dir * stride[a];
                        if (!self_active && !active(j)) continue;
                        for (int c = 0; c < C; ++c) {
                            const double d = double(v[std::size_t(i * C + c)]) - double(v[std::size_t(j * C + c)]);
                            g[std::size_t(i * C + c)] += T(scale * huber_derivative(d, huber_delta));
                        }
                    }
                }
            }
        }
    }
    return pairs;
}

inline constexpr std::uint32_t kGridFormatVersion = 1;

/// Binary grid record: "VXG2", u32 version, u32 Nx Ny Nz C, 6 x f64 aabb (min then max),
/// then Nx*Ny*Nz*C f32 values in x-major order. Little-endian throughout.
template <std::floating_point T>
void write_grid(std::ostream& os, const VoxelGrid<T>& grid) {
    io::write_magic(os, "VXG2");
    io::write_le<std::uint32_t>(os, kGridFormatVersion);
    const Resolution& r = grid.resolution();
    io::write_le<std::uint32_t>(os, std::uint32_t(r.x));
    io::write_le<std::uint32_t>(os, std::uint32_t(r.y));
    io::write_le<std::uint32_t>(os, std::uint32_t(r.z));
    io::write_le<std::uint32_t>(os, std::uint32_t(grid.channels()));
    for (int a = 0; a < 3; ++a) io::write_le<double>(os, grid.aabb().min[a]);
    for (int a = 0; a < 3; ++a) io::write_le<double>(os, grid.aabb().max[a]);
    for (T v : grid.values()) io::write_le<float>(os, float(v));
}

template <std::floating_point T>
VoxelGrid<T> read_grid(std::istream& is) {
    io::expect_magic(is, "VXG2");
    const auto version = io::read_le<std::uint32_t>(is);
    if (version != kGridFormatVersion) throw std::runtime_error("unsupported grid record version");
    Resolution r;
    r.x = int(io::read_le<std::uint32_t>(is));
    r.y = int(io::read_le<std::uint32_t>(is));
    r.z = int(io::read_le<std::uint32_t>(is));
    const int channels = int(io::read_le<std::uint32_t>(is));
    Aabb box;
    for (int a = 0; a < 3; ++a) box.min[a] = io::read_le<double>(is);
    for (int a = 0; a < 3; ++a) box.max[a] = io::read_le<double>(is);
    VoxelGrid<T> grid(r, channels, box);
    for (T& v : grid.values()) {
        const float f = io::read_le<float>(is);
        if (!std::isfinite(f)) throw std::runtime_error("grid record holds a non-finite value");
        v = T(f);
    }
    return grid;
}

}  // namespace voxfield
