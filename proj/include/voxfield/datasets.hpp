// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "voxfield/common.hpp"
#include "voxfield/contraction.hpp"
#include "voxfield/grid.hpp"
#include "voxfield/image.hpp"
#include "voxfield/rendering.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace voxfield {

struct Frame {
    Mat4d pose = Mat4d::Identity();  // camera-to-world
    Image image;
    std::string file_path;           // relative, without extension
    bool test = false;
};

struct SceneDataset {
    int width = 0;
    int height = 0;
    double focal = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    std::vector<Frame> frames;
    CaptureMode mode = CaptureMode::bounded;
    Aabb aabb = Aabb::cube(1.5);
    double near = 0.05;
    double far = 1e10;
    Vec3d background = Vec3d::Ones();

    double camera_angle_x() const { return 2.0 * std::atan(0.5 * width / focal); }

    PinholeCamera camera(const Frame& f) const {
        PinholeCamera cam;
        cam.width = width;
        cam.height = height;
        cam.focal_x = cam.focal_y = focal;
        cam.cx = cx;
        cam.cy = cy;
        cam.c2w = f.pose;
        return cam;
    }

    std::vector<std::size_t> split(bool test) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < frames.size(); ++i)
            if (frames[i].test == test) idx.push_back(i);
        return idx;
    }
    std::vector<std::size_t> train_indices() const { return split(false); }
    std::vector<std::size_t> test_indices() const { return split(true); }
};

namespace detail {

inline void check_rigid(const Mat4d& pose, const std::string& what) {
    const Mat3d R = pose.block<3, 3>(0, 0);
    const double ortho = (R.transpose() * R - Mat3d::Identity()).cwiseAbs().maxCoeff();
    const double bottom = (pose.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff();
    if (!pose.allFinite() || ortho > 1e-6 || bottom > 1e-6 || R.determinant() < 0.0) {
        throw std::runtime_error(what + ": transform_matrix is not a rigid camera-to-world pose");
    }
}

inline Mat4d pose_from_json(const nlohmann::json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 4) throw std::runtime_error(what + ": transform_matrix must be 4x4");
    Mat4d m;
    for (int r = 0; r < 4; ++r) {
        if (!j[std::size_t(r)].is_array() || j[std::size_t(r)].size() != 4) {
            throw std::runtime_error(what + ": transform_matrix must be 4x4");
        }
        for (int c = 0; c < 4; ++c) m(r, c) = j[std::size_t(r)][std::size_t(c)].get<double>();
    }
    return m;
}

inline std::filesystem::path image_path(const std::filesystem::path& root, const std::string& file_path) {
    std::filesystem::path p = root / file_path;
    if (!p.has_extension()) p += ".png";
    return p.lexically_normal();
}

inline void read_manifest(const std::filesystem::path& json_path, bool test, SceneDataset& ds, bool& have_header) {
    std::ifstream is(json_path);
    if (!is) throw std::runtime_error("cannot open " + json_path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(json_path.string() + ": malformed JSON: " + e.what());
    }
    if (!j.contains("camera_angle_x") || !j.contains("frames") || !j["frames"].is_array()) {
        throw std::runtime_error(json_path.string() + ": needs camera_angle_x and a frames array");
    }
    const double angle = j["camera_angle_x"].get<double>();
    if (!(angle > 0.0 && angle < std::numbers::pi)) throw std::runtime_error(json_path.string() + ": bad camera_angle_x");
    if (!have_header) {
        if (j.contains("mode")) ds.mode = parse_capture_mode(j["mode"].get<std::string>());
        if (j.contains("near")) ds.near = j["near"].get<double>();
        if (j.contains("far")) ds.far = j["far"].get<double>();
        if (j.contains("aabb")) {
            const auto& a = j["aabb"];
            for (int k = 0; k < 3; ++k) {
                ds.aabb.min[k] = a[0][std::size_t(k)].get<double>();
                ds.aabb.max[k] = a[1][std::size_t(k)].get<double>();
            }
        }
        if (j.contains("background")) {
            for (int k = 0; k < 3; ++k) ds.background[k] = j["background"][std::size_t(k)].get<double>();
        }
    }
    const auto root = json_path.parent_path();
    std::size_t index = 0;
    for (const auto& fj : j["frames"]) {
        const std::string what = json_path.filename().string() + " frame " + std::to_string(index++);
        if (!fj.contains("file_path") || !fj.contains("transform_matrix")) {
            throw std::runtime_error(what + ": needs file_path and transform_matrix");
        }
        Frame f;
        f.file_path = fj["file_path"].get<std::string>();
        f.pose = pose_from_json(fj["transform_matrix"], what + " (" + f.file_path + ")");
        check_rigid(f.pose, what + " (" + f.file_path + ")");
        f.image = read_png(image_path(root, f.file_path), ds.background);
        f.test = test;
        if (!have_header) {
            ds.width = f.image.width;
            ds.height = f.image.height;
            ds.focal = 0.5 * ds.width / std::tan(0.5 * angle);
            ds.cx = 0.5 * ds.width;
            ds.cy = 0.5 * ds.height;
            have_header = true;
        } else if (f.image.width != ds.width || f.image.height != ds.height) {
            throw std::runtime_error(what + ": image size differs from the rest of the dataset");
        }
        ds.frames.push_back(std::move(f));
    }
}

}  // namespace detail

/// Loads a dataset in the transforms.json convention. `path` is either a directory holding
/// transforms_train.json (and optionally transforms_test.json) or transforms.json, or one of
/// those files. When no test manifest exists every 8th frame is held out.
inline SceneDataset load_dataset(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    SceneDataset ds;
    bool have_header = false;
    fs::path dir = fs::is_directory(path) ? path : path.parent_path();
    fs::path train = fs::is_directory(path) ? dir / "transforms_train.json" : path;
    if (fs::is_directory(path) && !fs::exists(train)) train = dir / "transforms.json";
    if (!fs::exists(train)) throw std::runtime_error("no transforms manifest found at " + path.string());
    detail::read_manifest(train, false, ds, have_header);
    const fs::path test = dir / "transforms_test.json";
    if (fs::is_directory(path) && train.filename() == "transforms_train.json" && fs::exists(test)) {
        detail::read_manifest(test, true, ds, have_header);
    } else {
        for (std::size_t i = 0; i < ds.frames.size(); i += 8) ds.frames[i].test = true;
    }
    if (ds.test_indices().empty() || ds.train_indices().empty()) {
        throw std::runtime_error("dataset needs at least one train and one test frame");
    }
    return ds;
}

/// Writes transforms_train.json / transforms_test.json and 8-bit PNGs under `dir`.
inline void write_dataset(const SceneDataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "train");
    fs::create_directories(dir / "test");
    for (bool test : {false, true}) {
        nlohmann::json j;
        j["camera_angle_x"] = ds.camera_angle_x();
        j["mode"] = to_string(ds.mode);
        j["near"] = ds.near;
        j["far"] = ds.far;
        j["aabb"] = {{ds.aabb.min.x(), ds.aabb.min.y(), ds.aabb.min.z()},
                     {ds.aabb.max.x(), ds.aabb.max.y(), ds.aabb.max.z()}};
        j["background"] = {ds.background.x(), ds.background.y(), ds.background.z()};
        j["frames"] = nlohmann::json::array();
        std::size_t k = 0;
        for (const Frame& f : ds.frames) {
            if (f.test != test) continue;
            const std::string rel = f.file_path.empty()
                                        ? std::string("./") + (test ? "test" : "train") + "/r_" + std::to_string(k)
                                        : f.file_path;
            ++k;
            nlohmann::json m = nlohmann::json::array();
            for (int r = 0; r < 4; ++r) m.push_back({f.pose(r, 0), f.pose(r, 1), f.pose(r, 2), f.pose(r, 3)});
            j["frames"].push_back({{"file_path", rel}, {"transform_matrix", m}});
            write_png(detail::image_path(dir, rel), f.image);
        }
        std::ofstream os(dir / (test ? "transforms_test.json" : "transforms_train.json"));
        os << j.dump(2) << '\n';
    }
}

/// Camera-to-world pose at `eye` looking at `target`.
inline Mat4d look_at(const Vec3d& eye, const Vec3d& target, Vec3d up = Vec3d::UnitZ()) {
    const Vec3d forward = (target - eye).normalized();
    if (std::abs(forward.dot(up.normalized())) > 0.99) up = Vec3d::UnitY();
    const Vec3d z = -forward;
    const Vec3d x = up.cross(z).normalized();
    const Vec3d y = z.cross(x);
    Mat4d m = Mat4d::Identity();
    m.block<3, 1>(0, 0) = x;
    m.block<3, 1>(0, 1) = y;
    m.block<3, 1>(0, 2) = z;
    m.block<3, 1>(0, 3) = eye;
    return m;
}

// --- reference renderer ------------------------------------------------------------------
//
// Plain scalar loops with their own interpolation, clipping, contraction and compositing.
// Deliberately shares no code with rendering.hpp so it can serve as an oracle for it.

namespace reference {

inline double lerp_grid(const VoxelGrid<double>& g, int channel, double ux, double uy, double uz) {
    const Resolution& r = g.resolution();
    const double u[3] = {ux, uy, uz};
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        double v = u[a];
        if (!(v >= 0.0)) v = 0.0;
        if (v > 1.0) v = 1.0;
        const double pos = v * (r[a] - 1);
        int i = int(std::floor(pos));
        if (i > r[a] - 2) i = r[a] - 2;
        i0[a] = i;
        f[a] = pos - i;
    }
    double acc = 0.0;
    for (int dx = 0; dx <= 1; ++dx)
        for (int dy = 0; dy <= 1; ++dy)
            for (int dz = 0; dz <= 1; ++dz) {
                const double wx = dx ? f[0] : 1.0 - f[0];
                const double wy = dy ? f[1] : 1.0 - f[1];
                const double wz = dz ? f[2] : 1.0 - f[2];
                acc += wx * wy * wz * g.at(i0[0] + dx, i0[1] + dy, i0[2] + dz, channel);
            }
    return acc;
}

// Liang-Barsky clip of the segment [t0, t1] against the box.
inline bool clip(const Vec3d& o, const Vec3d& d, const Aabb& box, double& t0, double& t1) {
    for (int a = 0; a < 3; ++a) {
        const double p[2] = {-d[a], d[a]};
        const double q[2] = {o[a] - box.min[a], box.max[a] - o[a]};
        for (int k = 0; k < 2; ++k) {
            if (p[k] == 0.0) {
                if (q[k] < 0.0) return false;
                continue;
            }
            const double t = q[k] / p[k];
            if (p[k] < 0.0) t0 = std::max(t0, t);
            else t1 = std::min(t1, t);
        }
    }
    return t0 < t1;
}

inline Vec3d squash(const Vec3d& x, double b, double p) {
    double n = 0.0;
    if (std::isinf(p)) {
        for (int a = 0; a < 3; ++a) n = std::max(n, std::abs(x[a]));
    } else {
        n = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    }
    if (n <= 1.0) return x;
    return x * ((1.0 + b - b / n) / n);
}

struct Accumulator {
    double T = 1.0;
    double rgb[3] = {0.0, 0.0, 0.0};

    void add(const RadianceField<double>& f, double ux, double uy, double uz, double interval, double shift) {
        const double x = lerp_grid(f.density, 0, ux, uy, uz) + shift;
        const double sigma = x > 30.0 ? x : std::log(1.0 + std::exp(x));
        const double alpha = 1.0 - std::exp(-sigma * interval);
        for (int c = 0; c < 3; ++c) {
            const double col = 1.0 / (1.0 + std::exp(-lerp_grid(f.color, c, ux, uy, uz)));
            rgb[c] += T * alpha * col;
        }
        T *= 1.0 - alpha;
    }
};

}  // namespace reference

/// Independent oracle renderer for bounded and unbounded fields: fixed fine step (in voxels of
/// the grid's space), no early termination, no occupancy skipping. Uses the contraction,
/// near/far, alpha_init, ref_voxel and background of `cfg`; ignores its step and cut-off.
inline Image reference_render(const RadianceField<double>& field, const PinholeCamera& camera,
                              const RenderConfig& cfg, double step_voxels = 0.25) {
    camera.validate();
    field.check();
    const ContractionConfig& cc = cfg.contraction;
    if (cc.mode == CaptureMode::forward_facing) {
        throw std::invalid_argument("reference_render: forward-facing scenes are not supported");
    }
    const Resolution& res = field.density.resolution();
    const Aabb box = cc.mode == CaptureMode::bounded ? cc.aabb : Aabb::cube(1.0 + cc.b);
    double voxel = 0.0;
    for (int a = 0; a < 3; ++a) voxel += (box.max[a] - box.min[a]) / (res[a] - 1) / 3.0;
    const double ref = cfg.ref_voxel > 0.0 ? cfg.ref_voxel : voxel;
    const double shift = std::log(std::pow(1.0 - cfg.alpha_init, -2.0) - 1.0);
    const double step = step_voxels * voxel;

    Image img(camera.width, camera.height, 3);
    for (int py = 0; py < camera.height; ++py) {
        for (int px = 0; px < camera.width; ++px) {
            Vec3d d_cam((px - camera.cx) / camera.focal_x, -(py - camera.cy) / camera.focal_y, -1.0);
            Vec3d d(0, 0, 0);
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) d[r] += camera.c2w(r, c) * d_cam[c];
            d /= d.norm();
            const Vec3d o(camera.c2w(0, 3), camera.c2w(1, 3), camera.c2w(2, 3));
            reference::Accumulator acc;

            if (cc.mode == CaptureMode::bounded) {
                double t0 = cfg.near, t1 = cfg.far;
                if (reference::clip(o, d, box, t0, t1)) {
                    for (double t = t0; t < t1; t += step) {
                        const double len = std::min(step, t1 - t);
                        const Vec3d x = o + (t + 0.5 * len) * d;
                        acc.add(field, (x[0] - box.min[0]) / (box.max[0] - box.min[0]),
                                (x[1] - box.min[1]) / (box.max[1] - box.min[1]),
                                (x[2] - box.min[2]) / (box.max[2] - box.min[2]), len / ref, shift);
                    }
                }
            } else {
                // March aligned-space distance with steps sized so each spans ~`step` contracted units.
                const Vec3d oa = cc.align.scale * (cc.align.rotation * (o + cc.align.translation));
                const Vec3d da = (cc.align.rotation * d).normalized();
                const double half = 1.0 + cc.b;
                double tau = cfg.near * cc.align.scale;
                const double tau_end = std::min(cfg.far * cc.align.scale, 1e8);
                Vec3d prev = reference::squash(oa + tau * da, cc.b, cc.p);
                while (tau < tau_end) {
                    const double probe = 1e-6 * std::max(1.0, tau);
                    const Vec3d ahead = reference::squash(oa + (tau + probe) * da, cc.b, cc.p);
                    const double speed = (ahead - prev).norm() / probe;
                    if (!(speed > 1e-12)) break;
                    const double dtau = std::min(step / speed, tau_end - tau);
                    const Vec3d next = reference::squash(oa + (tau + dtau) * da, cc.b, cc.p);
                    const Vec3d mid = reference::squash(oa + (tau + 0.5 * dtau) * da, cc.b, cc.p);
                    const double len = (next - prev).norm();
                    acc.add(field, (mid[0] + half) / (2 * half), (mid[1] + half) / (2 * half),
                            (mid[2] + half) / (2 * half), len / ref, shift);
                    tau += dtau;
                    prev = next;
                    if (half - std::max({std::abs(next[0]), std::abs(next[1]), std::abs(next[2])}) < 1e-9) break;
                }
            }
            for (int c = 0; c < 3; ++c) img.at(px, py, c) = float(acc.rgb[c] + acc.T * cfg.background[c]);
        }
    }
    return img;
}

struct BoxSpec {
    Vec3d min = Vec3d::Zero();
    Vec3d max = Vec3d::Ones();
    Vec3d color = Vec3d::Constant(0.5);
};

struct SceneSpec {
    int resolution = 32;
    int num_boxes = 3;
    int train_views = 24;
    int test_views = 4;
    int image_size = 64;
    CaptureMode mode = CaptureMode::bounded;
    double b = 1.0;
    double p = 2.0;
    Vec3d background = Vec3d::Ones();
    /// Explicit boxes in world space; when empty, `num_boxes` random boxes are drawn.
    std::vector<BoxSpec> boxes;
};

/// Ground truth plus the dataset rendered from it.
struct SyntheticScene {
    RadianceField<double> truth;
    RenderConfig render;  // configuration the truth is rendered with
    std::vector<BoxSpec> boxes;
    SceneDataset dataset;
};

inline constexpr double kSceneDensityInside = 18.5;
inline constexpr double kSceneDensityOutside = -10.0;

/// Seeded scene of opaque colored boxes, rasterized into density/color grids and viewed from
/// cameras spread over a sphere (bounded) or a ring (unbounded). Images come from
/// reference_render and are quantized to 8 bits.
inline SyntheticScene gen_synthetic_scene(std::uint64_t seed, const SceneSpec& spec) {
    if (spec.resolution < 2 || spec.image_size < 1 || spec.train_views < 2 || spec.test_views < 1) {
        throw std::invalid_argument("gen_synthetic_scene: invalid scene spec");
    }
    if (spec.mode == CaptureMode::forward_facing) {
        throw std::invalid_argument("gen_synthetic_scene: forward-facing scenes are not generated");
    }
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    SyntheticScene scene;
    SceneDataset& ds = scene.dataset;
    ds.mode = spec.mode;
    ds.background = spec.background;
    ds.width = ds.height = spec.image_size;
    ds.cx = ds.cy = 0.5 * spec.image_size;
    const bool bounded = spec.mode == CaptureMode::bounded;
    const Aabb world = Aabb::cube(1.0);
    ds.aabb = world;

    // Cameras.
    const int views = spec.train_views + spec.test_views;
    std::vector<Vec3d> eyes;
    if (bounded) {
        const Mat3d spin = Eigen::AngleAxisd(uniform(0.0, 2.0 * std::numbers::pi), Vec3d::UnitZ()).toRotationMatrix();
        const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < views; ++i) {
            const double z = 1.0 - 2.0 * (i + 0.5) / views;
            const double r = std::sqrt(1.0 - z * z);
            eyes.push_back(4.0 * (spin * Vec3d(r * std::cos(golden * i), r * std::sin(golden * i), z)));
        }
        ds.focal = 0.5 * spec.image_size / 0.5;  // camera_angle_x = 2 atan(0.5)
        ds.near = 0.05;
    } else {
        for (int i = 0; i < views; ++i) {
            const double phi = 2.0 * std::numbers::pi * (i + uniform(-0.2, 0.2)) / views;
            eyes.emplace_back(2.0 * std::cos(phi), 2.0 * std::sin(phi), uniform(-0.3, 0.3));
        }
        ds.focal = 0.5 * spec.image_size / std::tan(0.5 * 1.2);
        ds.near = 0.2;
    }
    const int stride = std::max(1, views / spec.test_views);
    int tests = 0;
    for (int i = 0; i < views; ++i) {
        Frame f;
        f.pose = look_at(eyes[std::size_t(i)], Vec3d::Zero());
        f.test = (i % stride == stride - 1) && tests < spec.test_views;
        tests += f.test ? 1 : 0;
        ds.frames.push_back(std::move(f));
    }

    // Grids and their render configuration.
    RenderConfig& rc = scene.render;
    rc.background = spec.background;
    rc.near = ds.near;
    rc.contraction.mode = spec.mode;
    rc.contraction.b = spec.b;
    rc.contraction.p = spec.p;
    if (bounded) {
        rc.contraction.aabb = world;
    } else {
        std::vector<Vec3d> fwd;
        for (const Frame& f : ds.frames) fwd.push_back(-f.pose.block<3, 1>(0, 2));
        rc.contraction.align = compute_alignment(eyes, fwd, ds.near);
    }
    const Aabb grid_box = rc.contraction.grid_aabb();
    const Resolution res{spec.resolution, spec.resolution, spec.resolution};
    scene.truth = RadianceField<double>(res, grid_box);
    rc.ref_voxel = scene.truth.density.voxel_size();

    // Boxes.
    scene.boxes = spec.boxes;
    if (scene.boxes.empty()) {
        for (int i = 0; i < spec.num_boxes; ++i) {
            BoxSpec box;
            Vec3d center, half;
            if (bounded || i == 0) {
                center = Vec3d(uniform(-0.5, 0.5), uniform(-0.5, 0.5), uniform(-0.5, 0.5));
                half = Vec3d(uniform(0.15, 0.4), uniform(0.15, 0.4), uniform(0.15, 0.4));
            } else {
                const double phi = uniform(0.0, 2.0 * std::numbers::pi);
                const double dist = uniform(3.5, 5.0);
                center = Vec3d(dist * std::cos(phi), dist * std::sin(phi), uniform(-0.5, 0.5));
                half = Vec3d::Constant(uniform(0.4, 0.8));
            }
            box.min = center - half;
            box.max = center + half;
            if (bounded) {
                box.min = box.min.cwiseMax(Vec3d::Constant(-0.95));
                box.max = box.max.cwiseMin(Vec3d::Constant(0.95));
            }
            box.color = Vec3d(uniform(0.1, 0.9), uniform(0.1, 0.9), uniform(0.1, 0.9));
            scene.boxes.push_back(box);
        }
    }
    for (const BoxSpec& box : scene.boxes) {
        if (!Aabb{box.min, box.max}.valid()) throw std::invalid_argument("gen_synthetic_scene: degenerate box");
        if (bounded && ((box.min.array() < world.min.array()).any() || (box.max.array() > world.max.array()).any())) {
            throw std::invalid_argument("gen_synthetic_scene: box outside the scene aabb");
        }
    }

    // Rasterize: box id per node, colors dilated by two nodes so surfaces see a constant color.
    VoxelGrid<double>& dens = scene.truth.density;
    VoxelGrid<double>& col = scene.truth.color;
    std::vector<int> owner(std::size_t(dens.node_count()), -1);
    for (int x = 0; x < res.x; ++x)
        for (int y = 0; y < res.y; ++y)
            for (int z = 0; z < res.z; ++z) {
                Vec3d wpos = dens.node_world(x, y, z);
                if (!bounded) wpos = rc.contraction.align.invert(uncontract_unbounded(wpos, spec.b, spec.p));
                int id = -1;
                for (std::size_t k = 0; k < scene.boxes.size() && id < 0; ++k) {
                    const BoxSpec& bx = scene.boxes[k];
                    if ((wpos.array() >= bx.min.array()).all() && (wpos.array() <= bx.max.array()).all()) id = int(k);
                }
                owner[std::size_t(dens.node_index(x, y, z))] = id;
                dens.at(x, y, z) = id >= 0 ? kSceneDensityInside : kSceneDensityOutside;
            }
    constexpr int kDilate = 2;
    for (int x = 0; x < res.x; ++x)
        for (int y = 0; y < res.y; ++y)
            for (int z = 0; z < res.z; ++z) {
                int id = -1;
                for (int dx = -kDilate; dx <= kDilate && id < 0; ++dx)
                    for (int dy = -kDilate; dy <= kDilate && id < 0; ++dy)
                        for (int dz = -kDilate; dz <= kDilate && id < 0; ++dz) {
                            const int qx = x + dx, qy = y + dy, qz = z + dz;
                            if (qx < 0 || qy < 0 || qz < 0 || qx >= res.x || qy >= res.y || qz >= res.z) continue;
                            id = owner[std::size_t(dens.node_index(qx, qy, qz))];
                        }
                const int own = owner[std::size_t(dens.node_index(x, y, z))];
                if (own >= 0) id = own;
                for (int c = 0; c < 3; ++c) {
                    const double v = id >= 0 ? scene.boxes[std::size_t(id)].color[c] : 0.5;
                    col.at(x, y, z, c) = std::log(v / (1.0 - v));
                }
            }

    for (Frame& f : ds.frames) {
        f.image = reference_render(scene.truth, ds.camera(f), rc);
        quantize_u8(f.image);
    }
    return scene;
}

}  // namespace voxfield
