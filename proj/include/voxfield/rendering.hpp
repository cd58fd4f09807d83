// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "voxfield/common.hpp"
#include "voxfield/contraction.hpp"
#include "voxfield/distortion_loss.hpp"
#include "voxfield/grid.hpp"
#include "voxfield/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace voxfield {

struct Ray {
    Vec3d origin = Vec3d::Zero();
    Vec3d direction = Vec3d::UnitZ();
    double near = 0.0;
    double far = std::numeric_limits<double>::infinity();
};

/// Pinhole camera with a camera-to-world pose. Camera space looks down -z with +y up;
/// pixel (px, py) counts from the top-left corner.
struct PinholeCamera {
    int width = 0;
    int height = 0;
    double focal_x = 1.0;
    double focal_y = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Mat4d c2w = Mat4d::Identity();

    void validate() const {
        if (width <= 0 || height <= 0) throw std::invalid_argument("camera: image size must be positive");
        if (!(focal_x > 0.0 && focal_y > 0.0) || !std::isfinite(focal_x) || !std::isfinite(focal_y)) {
            throw std::invalid_argument("camera: focal length must be positive and finite");
        }
        if (!std::isfinite(cx) || !std::isfinite(cy) || !c2w.allFinite()) {
            throw std::invalid_argument("camera: non-finite intrinsics or pose");
        }
    }

    Vec3d position() const { return c2w.block<3, 1>(0, 3); }
    Vec3d forward() const { return -c2w.block<3, 1>(0, 2).normalized(); }

    Ray ray(double px, double py, double near, double far) const {
        const Vec3d dir_cam((px - cx) / focal_x, -(py - cy) / focal_y, -1.0);
        Ray r;
        r.origin = position();
        r.direction = (c2w.block<3, 3>(0, 0) * dir_cam).normalized();
        r.near = near;
        r.far = far;
        return r;
    }
};

/// Slab-method entry/exit distances of a ray through a box, clipped to [ray.near, ray.far].
inline std::optional<std::pair<double, double>> ray_aabb_intersect(const Ray& ray, const Aabb& box) {
    double t0 = ray.near;
    double t1 = ray.far;
    for (int a = 0; a < 3; ++a) {
        const double o = ray.origin[a];
        const double d = ray.direction[a];
        if (d == 0.0) {
            if (o < box.min[a] || o > box.max[a]) return std::nullopt;
            continue;
        }
        const double inv = 1.0 / d;
        double ta = (box.min[a] - o) * inv;
        double tb = (box.max[a] - o) * inv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
    }
    return std::make_pair(t0, t1);
}

struct RenderConfig {
    ContractionConfig contraction;
    /// Marching step in voxels of the marching space (depth layers for forward-facing).
    double step_size = 0.5;
    /// Length, in marching-space units, of the voxel that density is measured against.
    /// Zero means the voxel of the grid being rendered.
    double ref_voxel = 0.0;
    double alpha_init = 1e-4;
    double near = 0.05;
    double far = 1e10;
    Vec3d background = Vec3d::Ones();
    /// Compositing stops once transmittance drops below this; zero disables the cut.
    double halt_transmittance = 1e-3;
    double alpha_clamp = 1.0 - 1e-6;
};

/// Density offset that makes a zero raw value produce `alpha_init` over `ref_step` voxels.
inline double alpha_shift(double alpha_init, double ref_step = 0.5) {
    return std::log(std::pow(1.0 - alpha_init, -1.0 / ref_step) - 1.0);
}

struct AlphaGrad {
    double alpha = 0.0;
    double dalpha_draw = 0.0;
};

/// alpha = 1 - exp(-softplus(raw + shift) * interval_len), with d(alpha)/d(raw) from the same pass.
inline AlphaGrad density_to_alpha(double raw, double interval_len, double shift, double clamp = 1.0 - 1e-6) {
    const double x = raw + shift;
    const double e = std::exp(-softplus(x) * interval_len);
    AlphaGrad out;
    out.alpha = 1.0 - e;
    if (out.alpha > clamp) {
        out.alpha = clamp;
        return out;
    }
    out.dalpha_draw = e * interval_len * sigmoid(x);
    return out;
}

struct CompositeResult {
    Vec3d rgb = Vec3d::Zero();
    std::vector<double> weights;
    double transmittance = 1.0;
    std::size_t evaluated = 0;
};

/// Front-to-back compositing; stops after the sample that pushes transmittance below `halt`.
/// Alphas must lie in [0, 1]; values above 1 - 1e-6 are clamped.
inline CompositeResult composite(std::span<const double> alphas, std::span<const Vec3d> colors,
                                 const Vec3d& background, double halt = 1e-3) {
    if (alphas.size() != colors.size()) throw std::invalid_argument("composite: alphas and colors differ in length");
    CompositeResult out;
    out.weights.assign(alphas.size(), 0.0);
    double T = 1.0;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        double a = alphas[i];
        if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("composite: alpha outside [0,1]");
        a = std::min(a, 1.0 - 1e-6);
        out.weights[i] = T * a;
        out.rgb += out.weights[i] * colors[i];
        T *= 1.0 - a;
        out.evaluated = i + 1;
        if (T < halt) break;
    }
    out.transmittance = T;
    out.rgb += T * background;
    return out;
}

/// Per-ray weight entropy of w / sum(w); zero for rays with no weight.
inline double weight_entropy(std::span<const double> w) {
    double total = 0.0;
    for (double v : w) total += v;
    if (!(total > 0.0)) return 0.0;
    double h = 0.0;
    for (double v : w) {
        if (v > 0.0) {
            const double p = v / total;
            h -= p * std::log(p);
        }
    }
    return h;
}

/// Coarse occupancy over the grid's normalized cube; free cells are skipped when marching.
class OccupancyMask {
public:
    OccupancyMask() = default;
    explicit OccupancyMask(Resolution cells) : cells_(cells), occupied_(std::size_t(cells.count()), 1) {
        if (cells.x < 1 || cells.y < 1 || cells.z < 1) throw std::invalid_argument("occupancy mask needs cells");
    }

    /// Mask at half the grid's node resolution per axis.
    static OccupancyMask for_grid(const Resolution& grid) {
        return OccupancyMask({std::max(1, grid.x / 2), std::max(1, grid.y / 2), std::max(1, grid.z / 2)});
    }

    const Resolution& cells() const { return cells_; }
    bool empty() const { return occupied_.empty(); }

    std::int64_t cell_of(const Vec3d& u) const {
        int idx[3];
        for (int a = 0; a < 3; ++a) {
            const int n = cells_[a];
            idx[a] = std::clamp(int(std::floor(u[a] * n)), 0, n - 1);
        }
        return (std::int64_t(idx[0]) * cells_.y + idx[1]) * cells_.z + idx[2];
    }
    bool occupied(const Vec3d& u) const { return occupied_[std::size_t(cell_of(u))] != 0; }
    bool occupied_cell(std::int64_t i) const { return occupied_[std::size_t(i)] != 0; }
    void set_free(std::int64_t i) { occupied_[std::size_t(i)] = 0; }

    std::int64_t occupied_count() const {
        std::int64_t n = 0;
        for (auto b : occupied_) n += b;
        return n;
    }

    /// Nearest-cell resample; a new cell takes the state of the old cell holding its center.
    OccupancyMask resampled(Resolution cells) const {
        OccupancyMask out(cells);
        for (int x = 0; x < cells.x; ++x)
            for (int y = 0; y < cells.y; ++y)
                for (int z = 0; z < cells.z; ++z) {
                    const Vec3d c((x + 0.5) / cells.x, (y + 0.5) / cells.y, (z + 0.5) / cells.z);
                    if (!occupied(c)) out.occupied_[std::size_t((std::int64_t(x) * cells.y + y) * cells.z + z)] = 0;
                }
        return out;
    }

private:
    Resolution cells_;
    std::vector<std::uint8_t> occupied_;
};

/// Frees every cell whose highest alpha over the density nodes it can interpolate from, at an
/// interval of `ref_interval` reference voxels, stays below `alpha_threshold`. Cells never
/// flip back to occupied.
template <std::floating_point T>
void update_occupancy(const VoxelGrid<T>& density, OccupancyMask& mask, double alpha_threshold, double shift,
                      double ref_interval = 0.5) {
    const Resolution& n = density.resolution();
    const Resolution& m = mask.cells();
    if (m.x > n.x || m.y > n.y || m.z > n.z) {
        throw std::invalid_argument("update_occupancy: mask finer than the density grid");
    }
    auto node_range = [](int cell, int cells, int nodes) {
        const int lo = int(std::floor(double(cell) / cells * (nodes - 1)));
        const int hi = int(std::ceil(double(cell + 1) / cells * (nodes - 1)));
        return std::make_pair(std::clamp(lo, 0, nodes - 1), std::clamp(hi, 0, nodes - 1));
    };
    for (int cx = 0; cx < m.x; ++cx) {
        const auto [x0, x1] = node_range(cx, m.x, n.x);
        for (int cy = 0; cy < m.y; ++cy) {
            const auto [y0, y1] = node_range(cy, m.y, n.y);
            for (int cz = 0; cz < m.z; ++cz) {
                const std::int64_t cell = (std::int64_t(cx) * m.y + cy) * m.z + cz;
                if (!mask.occupied_cell(cell)) continue;
                const auto [z0, z1] = node_range(cz, m.z, n.z);
                double max_raw = -std::numeric_limits<double>::infinity();
                for (int x = x0; x <= x1; ++x)
                    for (int y = y0; y <= y1; ++y)
                        for (int z = z0; z <= z1; ++z) max_raw = std::max(max_raw, double(density.at(x, y, z)));
                if (density_to_alpha(max_raw, ref_interval, shift).alpha < alpha_threshold) mask.set_free(cell);
            }
        }
    }
}

/// Marched samples of one ray. Points are normalized grid coordinates; `s` holds the N+1
/// normalized interval boundaries; `interval` is each sample's length in reference voxels.
struct RaySamples {
    std::vector<Vec3d> points;
    std::vector<double> t;
    std::vector<double> s;
    std::vector<double> interval;

    std::size_t size() const { return points.size(); }
    void clear() {
        points.clear();
        t.clear();
        s.clear();
        interval.clear();
    }
};

namespace detail {

inline double mean_voxel(const Aabb& box, const Resolution& res) {
    return box.extent().cwiseQuotient(Vec3d(res.x - 1, res.y - 1, res.z - 1)).mean();
}

// Parameter where the ray o + t d (starting inside) leaves the unit p-ball.
inline double unit_ball_exit(const Vec3d& o, const Vec3d& d, double p) {
    if (std::isinf(p)) {
        double t = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
            if (d[a] > 0.0) t = std::min(t, (1.0 - o[a]) / d[a]);
            if (d[a] < 0.0) t = std::min(t, (-1.0 - o[a]) / d[a]);
        }
        return t;
    }
    const double bq = o.dot(d);
    const double c = o.squaredNorm() - 1.0;
    return -bq + std::sqrt(std::max(0.0, bq * bq - c));
}

inline void sample_bounded(const Ray& ray, const RenderConfig& cfg, const Resolution& res, RaySamples& out) {
    const Aabb box = cfg.contraction.aabb;
    const auto hit = ray_aabb_intersect(ray, box);
    if (!hit) return;
    const auto [t0, t1] = *hit;
    const double length = t1 - t0;
    const double voxel = mean_voxel(box, res);
    const double step = cfg.step_size * voxel;
    if (!(length > 0.0) || !(step > 0.0)) return;
    const auto boundaries = std::size_t(std::ceil(length / step - 1e-9));
    if (boundaries < 2) return;
    const double ref = cfg.ref_voxel > 0.0 ? cfg.ref_voxel : voxel;
    const Vec3d inv_extent = box.extent().cwiseInverse();
    for (std::size_t k = 0; k < boundaries; ++k) out.s.push_back(double(k) * step / length);
    for (std::size_t k = 0; k + 1 < boundaries; ++k) {
        const double t = t0 + (double(k) + 0.5) * step;
        out.t.push_back(t);
        out.points.push_back((ray.origin + t * ray.direction - box.min).cwiseProduct(inv_extent));
        out.interval.push_back(step / ref);
    }
}

inline void sample_unbounded(const Ray& ray, const RenderConfig& cfg, const Resolution& res, RaySamples& out) {
    const ContractionConfig& cc = cfg.contraction;
    const Vec3d o = cc.align.apply(ray.origin);
    const Vec3d d = cc.align.apply_direction(ray.direction).normalized();
    const double scale = cc.align.scale;
    const double tau_near = std::max(ray.near, 0.0) * scale;
    const double tau_far = std::min(ray.far * scale, 1e8);
    if (!(tau_far > tau_near)) return;

    const double inner_exit = p_norm(o + tau_near * d, cc.p) >= 1.0
                                  ? tau_near
                                  : std::min(unit_ball_exit(o, d, cc.p), tau_far);

    // Parameter table: linear through the unit ball, uniform in 1/tau outside it.
    constexpr int kInner = 128;
    constexpr int kOuter = 256;
    thread_local std::vector<double> taus, arcs;
    thread_local std::vector<Vec3d> pts;
    taus.clear();
    if (inner_exit > tau_near) {
        for (int i = 0; i < kInner; ++i) taus.push_back(tau_near + (inner_exit - tau_near) * i / kInner);
    }
    const double start = std::max(inner_exit, 1e-9);
    const double inv0 = 1.0 / start;
    const double inv1 = 1.0 / tau_far;
    for (int i = 0; i <= kOuter; ++i) taus.push_back(1.0 / (inv0 + (inv1 - inv0) * i / kOuter));

    pts.resize(taus.size());
    arcs.resize(taus.size());
    for (std::size_t i = 0; i < taus.size(); ++i) pts[i] = contract_unbounded(o + taus[i] * d, cc.b, cc.p);
    arcs[0] = 0.0;
    for (std::size_t i = 1; i < taus.size(); ++i) arcs[i] = arcs[i - 1] + (pts[i] - pts[i - 1]).norm();
    const double total = arcs.back();

    const Aabb box = cc.grid_aabb();
    const double voxel = mean_voxel(box, res);
    const double step = cfg.step_size * voxel;
    if (!(total > 0.0) || !(step > 0.0)) return;
    const auto boundaries = std::size_t(std::ceil(total / step - 1e-9));
    if (boundaries < 2) return;
    const double ref = cfg.ref_voxel > 0.0 ? cfg.ref_voxel : voxel;
    const double half = 1.0 + cc.b;

    std::size_t seg = 1;
    auto tau_at = [&](double arc) {
        while (seg + 1 < arcs.size() && arcs[seg] < arc) ++seg;
        const double a0 = arcs[seg - 1], a1 = arcs[seg];
        const double f = a1 > a0 ? std::clamp((arc - a0) / (a1 - a0), 0.0, 1.0) : 0.0;
        return taus[seg - 1] + f * (taus[seg] - taus[seg - 1]);
    };
    for (std::size_t k = 0; k < boundaries; ++k) out.s.push_back(double(k) * step / total);
    for (std::size_t k = 0; k + 1 < boundaries; ++k) {
        const double tau = tau_at((double(k) + 0.5) * step);
        const Vec3d y = contract_unbounded(o + tau * d, cc.b, cc.p);
        out.t.push_back(tau / scale);
        out.points.push_back((y.array() + half) / (2.0 * half));
        out.interval.push_back(step / ref);
    }
}

inline void sample_forward_facing(const Ray& ray, const RenderConfig& cfg, const Resolution& res,
                                  RaySamples& out) {
    const ContractionConfig& cc = cfg.contraction;
    const Vec3d o = cc.align.apply(ray.origin);
    const Vec3d d = cc.align.apply_direction(ray.direction).normalized();
    const double depth_rate = -d.z();
    if (!(depth_rate > 1e-9)) return;
    const double depth_o = -o.z();
    const int layers = cc.num_layers;
    const double layer_step = cfg.step_size;
    if (!(layer_step > 0.0)) return;
    const auto count = std::size_t(std::floor((layers - 1) / layer_step + 1e-9)) + 1;
    const double du = layer_step / (layers - 1);
    const double voxel = 1.0 / (res.z - 1);
    const double ref = cfg.ref_voxel > 0.0 ? cfg.ref_voxel : voxel;

    std::size_t first = count;
    for (std::size_t k = 0; k < count; ++k) {
        const double u = std::min(double(k) * du, 1.0);
        const double q = (1.0 - u) / cc.near;  // disparity of the layer
        if (q > 0.0 && (1.0 / q - depth_o) / depth_rate < ray.near * cc.align.scale) continue;
        if (first == count) first = k;
        const double lead = 1.0 - depth_o * q;  // x/depth = o.x q + lead * d.x / depth_rate
        out.points.emplace_back(0.5 + (o.x() * q + lead * d.x() / depth_rate) / (2.0 * cc.ff_extent_x),
                                0.5 + (o.y() * q + lead * d.y() / depth_rate) / (2.0 * cc.ff_extent_y), u);
        const double tau = q > 0.0 ? (1.0 / q - depth_o) / depth_rate : std::numeric_limits<double>::infinity();
        out.t.push_back(std::min(tau / cc.align.scale, cfg.far));
        out.interval.push_back(du / ref);
    }
    if (out.points.empty()) return;
    const double lo = (double(first) - 0.5) * du;
    const double hi = (double(count) - 0.5) * du;
    for (std::size_t k = first; k <= count; ++k) out.s.push_back(((double(k) - 0.5) * du - lo) / (hi - lo));
}

}  // namespace detail

/// Marches one ray in the grid's space. Bounded rays sample only inside the box (a miss yields
/// no samples); unbounded rays march with a constant step in contracted space; forward-facing
/// rays step through depth layers. Sample counts differ between rays.
inline void sample_points(const Ray& ray, const RenderConfig& cfg, const Resolution& grid_res, RaySamples& out) {
    out.clear();
    switch (cfg.contraction.mode) {
        case CaptureMode::bounded: detail::sample_bounded(ray, cfg, grid_res, out); break;
        case CaptureMode::unbounded: detail::sample_unbounded(ray, cfg, grid_res, out); break;
        case CaptureMode::forward_facing: detail::sample_forward_facing(ray, cfg, grid_res, out); break;
    }
}

/// Density (1 channel, raw) and color (3 channels, pre-sigmoid) grids sharing one lattice.
template <std::floating_point T>
struct RadianceField {
    VoxelGrid<T> density;
    VoxelGrid<T> color;

    RadianceField() = default;
    RadianceField(Resolution res, const Aabb& box) : density(res, 1, box), color(res, 3, box) {}

    void check() const {
        if (density.channels() != 1 || color.channels() != 3 || !(density.resolution() == color.resolution()) ||
            !(density.aabb() == color.aabb())) {
            throw std::invalid_argument("radiance field: density and color grids must share a lattice");
        }
    }
};

/// Everything composited along one ray, kept for the backward pass. Only samples that were
/// evaluated (occupied, before the transmittance cut) are stored.
struct RayTrace {
    RaySamples samples;
    std::vector<std::uint32_t> index;
    std::vector<double> alpha;
    std::vector<double> dalpha;
    std::vector<double> trans;  // transmittance before the sample
    std::vector<double> w;
    std::vector<Vec3d> rgb;
    std::vector<double> m;
    std::vector<double> len;
    Vec3d color = Vec3d::Zero();
    double transmittance = 1.0;
    double depth = 0.0;

    void clear() {
        index.clear();
        alpha.clear();
        dalpha.clear();
        trans.clear();
        w.clear();
        rgb.clear();
        m.clear();
        len.clear();
        color.setZero();
        transmittance = 1.0;
        depth = 0.0;
    }
};

template <std::floating_point T>
void trace_ray(const RadianceField<T>& field, const Ray& ray, const RenderConfig& cfg, const OccupancyMask* mask,
               RayTrace& tr) {
    tr.clear();
    const Resolution& res = field.density.resolution();
    sample_points(ray, cfg, res, tr.samples);
    const double shift = alpha_shift(cfg.alpha_init);
    const auto dens = field.density.values();
    const auto cols = field.color.values();
    double trans = 1.0;
    for (std::size_t k = 0; k < tr.samples.size(); ++k) {
        const Vec3d& u = tr.samples.points[k];
        if (mask && !mask->occupied(u)) continue;
        const TrilinearStencil st = make_stencil(res, u);
        double raw;
        gather(dens, 1, st, &raw);
        const AlphaGrad ag = density_to_alpha(raw, tr.samples.interval[k], shift, cfg.alpha_clamp);
        double c[3];
        gather(cols, 3, st, c);
        const Vec3d rgb(sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2]));
        const double w = trans * ag.alpha;
        tr.index.push_back(std::uint32_t(k));
        tr.alpha.push_back(ag.alpha);
        tr.dalpha.push_back(ag.dalpha_draw);
        tr.trans.push_back(trans);
        tr.w.push_back(w);
        tr.rgb.push_back(rgb);
        tr.m.push_back(0.5 * (tr.samples.s[k] + tr.samples.s[k + 1]));
        tr.len.push_back(tr.samples.s[k + 1] - tr.samples.s[k]);
        tr.color += w * rgb;
        tr.depth += w * tr.samples.t[k];
        trans *= 1.0 - ag.alpha;
        if (trans < cfg.halt_transmittance) break;
    }
    tr.transmittance = trans;
    tr.color += trans * cfg.background;
}

/// Gradient of one evaluated sample with respect to its raw density and raw color.
struct SampleGrad {
    Vec3d point;
    double density;
    std::array<double, 3> color;
};

/// Backpropagates dL/d(pixel rgb) and `dist_scale` * distortion loss through one traced ray.
/// Appends one SampleGrad per evaluated sample.
inline void backward_ray(const RayTrace& tr, const Vec3d& grad_rgb, double dist_scale, const Vec3d& background,
                         std::vector<double>& grad_w, std::vector<SampleGrad>& out) {
    const std::size_t n = tr.w.size();
    grad_w.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) grad_w[i] = grad_rgb.dot(tr.rgb[i]);
    if (dist_scale != 0.0) {
        distloss_ray_backward(std::span<const double>(tr.m), std::span<const double>(tr.len),
                              std::span<const double>(tr.w), std::span<double>(grad_w), dist_scale);
    }
    // dL/dalpha_i = g_i T_i - (sum_{j>i} g_j w_j + dL/dT_final * T_final) / (1 - alpha_i)
    double tail = grad_rgb.dot(background) * tr.transmittance;
    const std::size_t base = out.size();
    out.resize(base + n);
    for (std::size_t i = n; i-- > 0;) {
        const double dalpha = grad_w[i] * tr.trans[i] - tail / (1.0 - tr.alpha[i]);
        tail += grad_w[i] * tr.w[i];
        SampleGrad& sg = out[base + i];
        sg.point = tr.samples.points[tr.index[i]];
        sg.density = dalpha * tr.dalpha[i];
        for (int c = 0; c < 3; ++c) {
            const double col = tr.rgb[i][c];
            sg.color[std::size_t(c)] = grad_rgb[c] * tr.w[i] * col * (1.0 - col);
        }
    }
}

struct BatchLoss {
    double mse = 0.0;   // mean over rays and channels
    double dist = 0.0;  // mean distortion loss per ray, unweighted
};

/// Reusable buffers for backprop_rays.
struct BatchWorkspace {
    std::vector<RayTrace> traces;
    std::vector<std::vector<double>> grad_w;
    std::vector<std::vector<SampleGrad>> per_ray;
    std::vector<double> ray_mse;
    std::vector<double> ray_dist;
};

/// Renders `rays`, and adds the gradient of
///   L = mean_rays,channels (rgb - target)^2 + dist_weight * mean_rays distortion(w)
/// into the two gradient buffers. Rays run in parallel; the scatter into the buffers runs
/// serially in ray order so the result does not depend on the number of threads.
template <std::floating_point T>
BatchLoss backprop_rays(const RadianceField<T>& field, std::span<const Ray> rays, std::span<const Vec3d> targets,
                        const RenderConfig& cfg, const OccupancyMask* mask, double dist_weight,
                        GradBuffer<T>& grad_density, GradBuffer<T>& grad_color, BatchWorkspace& ws) {
    if (rays.size() != targets.size()) throw std::invalid_argument("backprop_rays: one target per ray expected");
    if (!grad_density.matches(field.density) || !grad_color.matches(field.color)) {
        throw std::invalid_argument("backprop_rays: gradient buffers do not match the field");
    }
    const auto R = std::int64_t(rays.size());
    if (R == 0) return {};
    const int workers = std::max(1, thread_count());
    ws.traces.resize(std::size_t(workers));
    ws.grad_w.resize(std::size_t(workers));
    ws.per_ray.resize(rays.size());
    ws.ray_mse.assign(rays.size(), 0.0);
    ws.ray_dist.assign(rays.size(), 0.0);
    const double mse_scale = 2.0 / (3.0 * double(R));
    const double dist_scale = dist_weight / double(R);

#pragma omp parallel for schedule(dynamic, 32)
    for (std::int64_t r = 0; r < R; ++r) {
        const auto i = std::size_t(r);
        RayTrace& tr = ws.traces[std::size_t(thread_index())];
        trace_ray(field, rays[i], cfg, mask, tr);
        const Vec3d diff = tr.color - targets[i];
        ws.ray_mse[i] = diff.squaredNorm();
        ws.ray_dist[i] = distloss_ray_forward(std::span<const double>(tr.m), std::span<const double>(tr.len),
                                              std::span<const double>(tr.w));
        ws.per_ray[i].clear();
        backward_ray(tr, mse_scale * diff, dist_scale, cfg.background, ws.grad_w[std::size_t(thread_index())],
                     ws.per_ray[i]);
    }

    const Resolution& res = field.density.resolution();
    auto gd = grad_density.values();
    auto gc = grad_color.values();
    for (std::size_t i = 0; i < rays.size(); ++i) {
        for (const SampleGrad& sg : ws.per_ray[i]) {
            const TrilinearStencil st = make_stencil(res, sg.point);
            scatter(gd, 1, st, &sg.density);
            scatter(gc, 3, st, sg.color.data());
        }
    }

    BatchLoss loss;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        loss.mse += ws.ray_mse[i];
        loss.dist += ws.ray_dist[i];
    }
    loss.mse /= 3.0 * double(R);
    loss.dist /= double(R);
    return loss;
}

/// Rendered image plus per-pixel depth (sum w t), final transmittance, weight sum and weight
/// entropy maps.
struct RenderOutput {
    Image rgb;
    Image depth;
    Image transmittance;
    Image weight_sum;
    Image entropy;
};

template <std::floating_point T>
RenderOutput render_image(const RadianceField<T>& field, const PinholeCamera& camera, const RenderConfig& cfg,
                          const OccupancyMask* mask = nullptr) {
    camera.validate();
    field.check();
    const int W = camera.width, H = camera.height;
    RenderOutput out{Image(W, H, 3), Image(W, H, 1), Image(W, H, 1), Image(W, H, 1), Image(W, H, 1)};
    std::vector<RayTrace> traces(std::size_t(std::max(1, thread_count())));
#pragma omp parallel for schedule(dynamic, 1)
    for (int y = 0; y < H; ++y) {
        RayTrace& tr = traces[std::size_t(thread_index())];
        for (int x = 0; x < W; ++x) {
            trace_ray(field, camera.ray(x, y, cfg.near, cfg.far), cfg, mask, tr);
            for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) = float(tr.color[c]);
            double wsum = 0.0;
            for (double w : tr.w) wsum += w;
            out.depth.at(x, y) = float(tr.depth);
            out.transmittance.at(x, y) = float(tr.transmittance);
            out.weight_sum.at(x, y) = float(wsum);
            out.entropy.at(x, y) = float(weight_entropy(tr.w));
        }
    }
    return out;
}

}  // namespace voxfield
