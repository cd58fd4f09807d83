// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "voxfield/common.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <span>
#include <string>

namespace voxfield {

enum class CaptureMode { bounded, forward_facing, unbounded };

inline std::string to_string(CaptureMode mode) {
    switch (mode) {
        case CaptureMode::bounded: return "bounded";
        case CaptureMode::forward_facing: return "forward_facing";
        case CaptureMode::unbounded: return "unbounded";
    }
    return "bounded";
}

inline CaptureMode parse_capture_mode(const std::string& s) {
    if (s == "bounded") return CaptureMode::bounded;
    if (s == "forward_facing" || s == "forward-facing") return CaptureMode::forward_facing;
    if (s == "unbounded") return CaptureMode::unbounded;
    throw std::invalid_argument("unknown capture mode '" + s + "'");
}

/// x -> scale * R * (x + translation)
struct RigidTransform {
    Mat3d rotation = Mat3d::Identity();
    Vec3d translation = Vec3d::Zero();
    double scale = 1.0;

    Vec3d apply(const Vec3d& x) const { return scale * (rotation * (x + translation)); }
    Vec3d apply_direction(const Vec3d& d) const { return rotation * d; }
    Vec3d invert(const Vec3d& y) const { return rotation.transpose() * (y / scale) - translation; }

    bool valid() const {
        return scale > 0.0 && std::isfinite(scale) && translation.allFinite() &&
               (rotation.transpose() * rotation - Mat3d::Identity()).cwiseAbs().maxCoeff() <= 1e-10 &&
               rotation.determinant() > 0.0;
    }
};

struct ContractionConfig {
    CaptureMode mode = CaptureMode::bounded;
    /// World box covered by the grid in bounded mode.
    Aabb aabb = Aabb::cube(1.0);
    /// Background share of the unbounded grid; the grid spans [-(1+b), 1+b]^3.
    double b = 1.0;
    /// Norm order of the unbounded contraction: 2 or infinity.
    double p = 2.0;
    RigidTransform align;
    /// Forward-facing depth layers and the depth of the first one.
    int num_layers = 256;
    double near = 1.0;
    /// Forward-facing half extents of x/depth and y/depth covered by the grid.
    double ff_extent_x = 1.0;
    double ff_extent_y = 1.0;

    void validate() const {
        if (!(b > 0.0)) throw std::invalid_argument("contraction: b must be positive");
        if (p != 2.0 && !std::isinf(p)) throw std::invalid_argument("contraction: p must be 2 or infinity");
        if (!align.valid()) throw std::invalid_argument("contraction: alignment is not a rigid similarity");
        if (mode == CaptureMode::bounded && !aabb.valid()) throw std::invalid_argument("contraction: bad aabb");
        if (mode == CaptureMode::forward_facing) {
            if (num_layers < 2) throw std::invalid_argument("contraction: need at least two depth layers");
            if (!(near > 0.0)) throw std::invalid_argument("contraction: near must be positive");
            if (!(ff_extent_x > 0.0 && ff_extent_y > 0.0)) {
                throw std::invalid_argument("contraction: forward-facing extents must be positive");
            }
        }
    }

    /// Box of the space the grid lives in: the world box, the contracted cube, or the unit
    /// cube of (x/depth, y/depth, layer) coordinates.
    Aabb grid_aabb() const {
        switch (mode) {
            case CaptureMode::bounded: return aabb;
            case CaptureMode::unbounded: return Aabb::cube(1.0 + b);
            case CaptureMode::forward_facing: return Aabb{Vec3d::Zero(), Vec3d::Ones()};
        }
        return aabb;
    }
};

inline double p_norm(const Vec3d& x, double p) {
    return std::isinf(p) ? x.cwiseAbs().maxCoeff() : x.norm();
}

/// Unit p-ball kept as is; everything outside squashed into the shell up to norm 1 + b.
inline Vec3d contract_unbounded(const Vec3d& x, double b, double p) {
    const double n = p_norm(x, p);
    if (n <= 1.0) return x;
    return (1.0 + b - b / n) * (x / n);
}

/// Inverse of contract_unbounded for points with norm < 1 + b.
inline Vec3d uncontract_unbounded(const Vec3d& y, double b, double p) {
    const double n = p_norm(y, p);
    if (n <= 1.0) return y;
    const double r = b / (1.0 + b - std::min(n, 1.0 + b - 1e-12));
    return r * (y / n);
}

/// Normalized forward-facing coordinate of an aligned point: (x/depth, y/depth) scaled by the
/// configured extents, and the layer coordinate 1 - near/depth; depth is -z.
inline Vec3d forward_facing_normalized(const Vec3d& aligned, const ContractionConfig& cfg) {
    const double depth = -aligned.z();
    if (!(depth > 0.0)) return {0.5, 0.5, -1.0};
    const double q = 1.0 / depth;
    return {0.5 + aligned.x() * q / (2.0 * cfg.ff_extent_x), 0.5 + aligned.y() * q / (2.0 * cfg.ff_extent_y),
            1.0 - cfg.near * q};
}

/// Maps a world point to normalized grid coordinates.
inline Vec3d contract(const Vec3d& point, const ContractionConfig& cfg) {
    switch (cfg.mode) {
        case CaptureMode::bounded:
            return (point - cfg.aabb.min).cwiseQuotient(cfg.aabb.extent());
        case CaptureMode::unbounded: {
            const Vec3d y = contract_unbounded(cfg.align.apply(point), cfg.b, cfg.p);
            return (y.array() + (1.0 + cfg.b)) / (2.0 * (1.0 + cfg.b));
        }
        case CaptureMode::forward_facing:
            return forward_facing_normalized(cfg.align.apply(point), cfg);
    }
    return point;
}

/// Layer coordinate u = 1 - near/t in [0, 1) for metric depth t >= near.
inline double forward_facing_warp(double t_depth, const ContractionConfig& cfg) {
    if (!(t_depth >= cfg.near)) throw std::invalid_argument("forward_facing_warp: depth is closer than near");
    return 1.0 - cfg.near / t_depth;
}

namespace detail {
// Makes v[axis] positive; when it is (numerically) zero, the next nonzero component decides.
inline Vec3d orient_toward_axis(Vec3d v, int axis) {
    for (int k = 0; k < 3; ++k) {
        const double c = v[(axis + k) % 3];
        if (std::abs(c) > 1e-12) return c < 0.0 ? Vec3d(-v) : v;
    }
    return v;
}
}  // namespace detail

/// Similarity that centers camera positions at the origin, rotates their first two principal
/// axes onto world X and Y, and scales so every near-plane point (camera center pushed `near`
/// along its forward direction) lies inside the unit ball. With no forward directions the camera
/// centers themselves are covered.
inline RigidTransform compute_alignment(std::span<const Vec3d> positions, std::span<const Vec3d> forwards = {},
                                        double near = 0.0) {
    if (positions.size() < 3) throw std::invalid_argument("compute_alignment: need at least three cameras");
    if (!forwards.empty() && forwards.size() != positions.size()) {
        throw std::invalid_argument("compute_alignment: one forward direction per camera expected");
    }
    Vec3d centroid = Vec3d::Zero();
    for (const auto& p : positions) centroid += p;
    centroid /= double(positions.size());
    Mat3d cov = Mat3d::Zero();
    for (const auto& p : positions) cov += (p - centroid) * (p - centroid).transpose();
    cov /= double(positions.size());

    Eigen::SelfAdjointEigenSolver<Mat3d> eig(cov);
    const Vec3d lambda = eig.eigenvalues();  // ascending
    const Mat3d vecs = eig.eigenvectors();
    const double scale_ref = std::max(lambda[2], std::numeric_limits<double>::min());
    if (lambda[2] <= 1e-24 || lambda[1] <= 1e-12 * scale_ref) {
        throw std::invalid_argument("compute_alignment: camera positions are collinear or coincident");
    }

    Vec3d e1 = vecs.col(2);
    Vec3d e2 = vecs.col(1);
    if (lambda[2] - lambda[1] <= 1e-9 * lambda[2]) {
        // Planar spread with no preferred in-plane axis: keep world X (or Y) as close as possible.
        const Vec3d n = vecs.col(0);
        e1 = Vec3d::UnitX() - Vec3d::UnitX().dot(n) * n;
        if (e1.norm() < 1e-6) e1 = Vec3d::UnitY() - Vec3d::UnitY().dot(n) * n;
        e1.normalize();
        e2 = n.cross(e1).normalized();
    }
    e1 = detail::orient_toward_axis(e1, 0);
    e2 = detail::orient_toward_axis(e2, 1);
    const Vec3d e3 = e1.cross(e2);

    RigidTransform t;
    t.rotation.row(0) = e1.transpose();
    t.rotation.row(1) = e2.transpose();
    t.rotation.row(2) = e3.transpose();
    t.translation = -centroid;

    double radius = 0.0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        Vec3d q = positions[i];
        if (!forwards.empty()) q += near * forwards[i].normalized();
        radius = std::max(radius, (q - centroid).norm());
    }
    if (!(radius > 0.0)) throw std::invalid_argument("compute_alignment: cameras cover no extent");
    t.scale = 1.0 / radius;
    return t;
}

}  // namespace voxfield
