// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "voxfield/config.hpp"
#include "voxfield/contraction.hpp"
#include "voxfield/datasets.hpp"
#include "voxfield/distortion_loss.hpp"
#include "voxfield/grid.hpp"
#include "voxfield/image.hpp"
#include "voxfield/optimizer.hpp"
#include "voxfield/rendering.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace voxfield {

/// Per-batch loss values. `dist` is already multiplied by the distortion weight, so
/// total = mse + dist. TV only contributes gradients and has no logged value.
struct LossReport {
    double total = 0.0;
    double mse = 0.0;
    double dist = 0.0;
};

/// mse over rays and channels; dist = dist_weight * (sum of per-ray distortion) / rays.
inline LossReport compute_losses(std::span<const Vec3d> rendered, std::span<const Vec3d> gt,
                                 const RaySampleBatch& batch, double dist_weight) {
    if (rendered.size() != gt.size()) throw std::invalid_argument("compute_losses: rendered and target differ");
    if (batch.num_rays() != rendered.size()) throw std::invalid_argument("compute_losses: batch ray count differs");
    LossReport r;
    for (std::size_t i = 0; i < rendered.size(); ++i) r.mse += (rendered[i] - gt[i]).squaredNorm();
    if (!rendered.empty()) r.mse /= 3.0 * double(rendered.size());
    if (dist_weight != 0.0 && batch.num_rays() > 0) {
        r.dist = dist_weight * distloss_forward(batch) / double(batch.num_rays());
    }
    r.total = r.mse + r.dist;
    return r;
}

inline constexpr double kPsnrCap = 99.0;

inline double psnr_from_mse(double mse) {
    if (!(mse > 0.0)) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// 10 log10(1 / MSE) over all pixels and channels, capped at 99 dB.
inline double psnr(const Image& img, const Image& ref) {
    if (img.width != ref.width || img.height != ref.height || img.channels != ref.channels) {
        throw std::invalid_argument("psnr: image shapes differ");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double d = double(img.data[i]) - double(ref.data[i]);
        sum += d * d;
    }
    return psnr_from_mse(img.data.empty() ? 0.0 : sum / double(img.data.size()));
}

/// decay^(step / total_steps)
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, double decay) {
    if (step < 0 || total_steps <= 0) throw std::invalid_argument("lr_schedule: bad step");
    return std::pow(decay, double(step) / double(total_steps));
}

struct GridPhase {
    int start_step = 0;
    int resolution = 0;
};

/// Resolution in force from each step on. Every upscale doubles the resolution (capped at
/// the final one) and the last upscale lands on the final resolution.
inline std::vector<GridPhase> grid_schedule(const TrainConfig& cfg) {
    const int r0 = cfg.grid.initial_resolution;
    const int rf = cfg.grid.final_resolution;
    std::vector<GridPhase> phases{{0, r0}};
    if (r0 == rf) return phases;
    std::vector<int> steps = cfg.grid.upscale_steps;
    if (steps.empty()) {
        const int it = cfg.train.iterations;
        for (int s : {it / 4, it / 2})
            if (s > 0 && (steps.empty() || s > steps.back())) steps.push_back(s);
    }
    if (steps.empty()) {
        phases[0].resolution = rf;
        return phases;
    }
    int r = r0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        r = i + 1 == steps.size() ? rf : std::min(rf, 2 * r);
        if (r != phases.back().resolution) phases.push_back({steps[i], r});
    }
    return phases;
}

namespace detail {

// Camera frame averaged over the training views: aligned +z points backward, so the scene lies
// at negative aligned z. Used as the forward-facing reference frame.
inline RigidTransform average_camera_frame(const SceneDataset& ds) {
    Vec3d right = Vec3d::Zero(), back = Vec3d::Zero(), center = Vec3d::Zero();
    const auto idx = ds.train_indices();
    for (std::size_t i : idx) {
        right += ds.frames[i].pose.block<3, 1>(0, 0);
        back += ds.frames[i].pose.block<3, 1>(0, 2);
        center += ds.frames[i].pose.block<3, 1>(0, 3);
    }
    back.normalize();
    right = (right - right.dot(back) * back).normalized();
    const Vec3d up = back.cross(right);
    RigidTransform t;
    t.rotation.row(0) = right.transpose();
    t.rotation.row(1) = up.transpose();
    t.rotation.row(2) = back.transpose();
    t.translation = -center / double(idx.size());
    return t;
}

}  // namespace detail

/// Rendering setup for a dataset: contraction mode, box or alignment, near/far, background,
/// and a reference voxel fixed to the final grid so upscales keep density units.
inline RenderConfig make_render_config(const TrainConfig& cfg, const SceneDataset& ds) {
    RenderConfig rc;
    ContractionConfig& cc = rc.contraction;
    cc.mode = cfg.contraction.mode == "auto" ? ds.mode : parse_capture_mode(cfg.contraction.mode);
    cc.aabb = ds.aabb;
    cc.b = cfg.contraction.b;
    cc.p = cfg.contraction.p;
    cc.num_layers = cfg.contraction.num_layers;
    cc.near = cfg.contraction.near;
    rc.step_size = cfg.render.step_size;
    rc.alpha_init = cfg.render.alpha_init;
    rc.near = std::max(cfg.render.near, ds.near);
    rc.far = std::min(cfg.render.far, ds.far);
    rc.halt_transmittance = cfg.render.halt_transmittance;
    rc.background = ds.background;

    const auto train = ds.train_indices();
    const int rf = cfg.grid.final_resolution;
    if (cc.mode == CaptureMode::unbounded) {
        std::vector<Vec3d> pos, fwd;
        for (std::size_t i : train) {
            const PinholeCamera cam = ds.camera(ds.frames[i]);
            pos.push_back(cam.position());
            fwd.push_back(cam.forward());
        }
        cc.align = compute_alignment(pos, fwd, rc.near);
        rc.ref_voxel = 2.0 * (1.0 + cc.b) / (rf - 1);
    } else if (cc.mode == CaptureMode::forward_facing) {
        cc.align = detail::average_camera_frame(ds);
        // Cover the (x/depth, y/depth) range of every training ray between the near layer and infinity.
        double ex = 1e-3, ey = 1e-3;
        for (std::size_t i : train) {
            const PinholeCamera cam = ds.camera(ds.frames[i]);
            for (double px : {0.0, double(ds.width - 1)})
                for (double py : {0.0, double(ds.height - 1)}) {
                    const Ray r = cam.ray(px, py, 0.0, 1.0);
                    const Vec3d o = cc.align.apply(r.origin);
                    const Vec3d d = cc.align.apply_direction(r.direction);
                    if (!(-d.z() > 1e-6)) continue;
                    const double far_x = d.x() / -d.z(), far_y = d.y() / -d.z();
                    const double tn = (cc.near + o.z()) / -d.z();
                    const Vec3d pn = o + std::max(tn, 0.0) * d;
                    const double depth = std::max(-pn.z(), 1e-9);
                    ex = std::max({ex, std::abs(far_x), std::abs(pn.x() / depth)});
                    ey = std::max({ey, std::abs(far_y), std::abs(pn.y() / depth)});
                }
        }
        cc.ff_extent_x = 1.05 * ex;
        cc.ff_extent_y = 1.05 * ey;
        rc.ref_voxel = 1.0 / (rf - 1);
    } else {
        rc.ref_voxel = detail::mean_voxel(cc.aabb, {rf, rf, rf});
    }
    cc.validate();
    return rc;
}

inline nlohmann::json render_config_to_json(const RenderConfig& rc) {
    const ContractionConfig& cc = rc.contraction;
    auto vec = [](const Vec3d& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); };
    nlohmann::json rot = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) rot.push_back(vec(cc.align.rotation.row(r).transpose()));
    return {
        {"mode", to_string(cc.mode)},
        {"aabb", {vec(cc.aabb.min), vec(cc.aabb.max)}},
        {"b", cc.b},
        {"p", std::isinf(cc.p) ? nlohmann::json("inf") : nlohmann::json(cc.p)},
        {"align", {{"rotation", rot}, {"translation", vec(cc.align.translation)}, {"scale", cc.align.scale}}},
        {"num_layers", cc.num_layers},
        {"contraction_near", cc.near},
        {"ff_extent", {cc.ff_extent_x, cc.ff_extent_y}},
        {"step_size", rc.step_size},
        {"ref_voxel", rc.ref_voxel},
        {"alpha_init", rc.alpha_init},
        {"near", rc.near},
        {"far", rc.far},
        {"background", vec(rc.background)},
        {"halt_transmittance", rc.halt_transmittance},
    };
}

inline RenderConfig render_config_from_json(const nlohmann::json& j) {
    auto vec = [](const nlohmann::json& a) { return Vec3d(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()); };
    RenderConfig rc;
    ContractionConfig& cc = rc.contraction;
    cc.mode = parse_capture_mode(j.at("mode").get<std::string>());
    cc.aabb = {vec(j.at("aabb").at(0)), vec(j.at("aabb").at(1))};
    cc.b = j.at("b").get<double>();
    cc.p = j.at("p").is_string() ? std::numeric_limits<double>::infinity() : j.at("p").get<double>();
    for (int r = 0; r < 3; ++r) cc.align.rotation.row(r) = vec(j.at("align").at("rotation").at(r)).transpose();
    cc.align.translation = vec(j.at("align").at("translation"));
    cc.align.scale = j.at("align").at("scale").get<double>();
    cc.num_layers = j.at("num_layers").get<int>();
    cc.near = j.at("contraction_near").get<double>();
    cc.ff_extent_x = j.at("ff_extent").at(0).get<double>();
    cc.ff_extent_y = j.at("ff_extent").at(1).get<double>();
    rc.step_size = j.at("step_size").get<double>();
    rc.ref_voxel = j.at("ref_voxel").get<double>();
    rc.alpha_init = j.at("alpha_init").get<double>();
    rc.near = j.at("near").get<double>();
    rc.far = j.at("far").get<double>();
    rc.background = vec(j.at("background"));
    rc.halt_transmittance = j.at("halt_transmittance").get<double>();
    cc.validate();
    return rc;
}

/// Trained model state: the field, its occupancy mask, optimizer moments and how to render it.
struct Checkpoint {
    RadianceField<float> field;
    OccupancyMask mask;
    AdamState<float> adam_density;
    AdamState<float> adam_color;
    RenderConfig render;
};

/// Binary layout: density grid record, color grid record, then "VXAD", u32 group count and per
/// group (density, color) u64 size, f32 m[size], f32 v[size], u64 step; then "VXOC", u32 cell
/// counts x y z and one byte per cell. All little-endian.
inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_grid(os, ck.field.density);
    write_grid(os, ck.field.color);
    io::write_magic(os, "VXAD");
    io::write_le<std::uint32_t>(os, 2);
    for (const AdamState<float>* st : {&ck.adam_density, &ck.adam_color}) {
        io::write_le<std::uint64_t>(os, st->m.size());
        for (float v : st->m) io::write_le<float>(os, v);
        for (float v : st->v) io::write_le<float>(os, v);
        io::write_le<std::uint64_t>(os, st->step);
    }
    io::write_magic(os, "VXOC");
    const Resolution c = ck.mask.empty() ? Resolution{0, 0, 0} : ck.mask.cells();
    io::write_le<std::uint32_t>(os, std::uint32_t(c.x));
    io::write_le<std::uint32_t>(os, std::uint32_t(c.y));
    io::write_le<std::uint32_t>(os, std::uint32_t(c.z));
    for (std::int64_t i = 0; i < (ck.mask.empty() ? 0 : c.count()); ++i) {
        io::write_le<std::uint8_t>(os, ck.mask.occupied_cell(i) ? 1 : 0);
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
    std::ofstream js(std::filesystem::path(path).replace_extension(".json"));
    js << render_config_to_json(ck.render).dump(2) << '\n';
}

/// Reads a checkpoint and the render settings stored next to it (same stem, .json).
inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    Checkpoint ck;
    ck.field.density = read_grid<float>(is);
    ck.field.color = read_grid<float>(is);
    ck.field.check();
    io::expect_magic(is, "VXAD");
    if (io::read_le<std::uint32_t>(is) != 2) throw std::runtime_error("checkpoint: expected two optimizer groups");
    for (AdamState<float>* st : {&ck.adam_density, &ck.adam_color}) {
        const auto n = io::read_le<std::uint64_t>(is);
        st->m.resize(n);
        st->v.resize(n);
        for (float& v : st->m) v = io::read_le<float>(is);
        for (float& v : st->v) v = io::read_le<float>(is);
        st->step = io::read_le<std::uint64_t>(is);
    }
    if (ck.adam_density.m.size() != ck.field.density.size() || ck.adam_color.m.size() != ck.field.color.size()) {
        throw std::runtime_error("checkpoint: optimizer state does not match the grids");
    }
    io::expect_magic(is, "VXOC");
    Resolution c;
    c.x = int(io::read_le<std::uint32_t>(is));
    c.y = int(io::read_le<std::uint32_t>(is));
    c.z = int(io::read_le<std::uint32_t>(is));
    if (c.count() > 0) {
        ck.mask = OccupancyMask(c);
        for (std::int64_t i = 0; i < c.count(); ++i)
            if (io::read_le<std::uint8_t>(is) == 0) ck.mask.set_free(i);
    }
    const auto json_path = std::filesystem::path(path).replace_extension(".json");
    std::ifstream js(json_path);
    if (!js) throw std::runtime_error("checkpoint render settings missing: " + json_path.string());
    try {
        ck.render = render_config_from_json(nlohmann::json::parse(js));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed " + json_path.string() + ": " + e.what());
    }
    return ck;
}

struct ViewScore {
    std::size_t frame = 0;
    double psnr = 0.0;
    double mse = 0.0;
};

struct EvalResult {
    std::vector<ViewScore> views;
    double mean_psnr = 0.0;
    /// Mean per-ray weight entropy over rays whose weights sum to more than 0.5.
    double mean_entropy = 0.0;
    std::size_t entropy_rays = 0;
};

/// Scores the field on the given frames (the test split when `frames` is empty).
template <std::floating_point T>
EvalResult evaluate(const RadianceField<T>& field, const OccupancyMask* mask, const RenderConfig& rc,
                    const SceneDataset& ds, std::vector<std::size_t> frames = {}) {
    if (frames.empty()) frames = ds.test_indices();
    EvalResult out;
    double entropy_sum = 0.0;
    for (std::size_t f : frames) {
        const RenderOutput r = render_image(field, ds.camera(ds.frames[f]), rc, mask);
        ViewScore s;
        s.frame = f;
        for (std::size_t i = 0; i < r.rgb.data.size(); ++i) {
            const double d = double(r.rgb.data[i]) - double(ds.frames[f].image.data[i]);
            s.mse += d * d;
        }
        s.mse /= double(r.rgb.data.size());
        s.psnr = psnr_from_mse(s.mse);
        out.views.push_back(s);
        out.mean_psnr += s.psnr;
        for (std::size_t p = 0; p < r.weight_sum.data.size(); ++p) {
            if (r.weight_sum.data[p] > 0.5f) {
                entropy_sum += r.entropy.data[p];
                ++out.entropy_rays;
            }
        }
    }
    if (!frames.empty()) out.mean_psnr /= double(frames.size());
    if (out.entropy_rays) out.mean_entropy = entropy_sum / double(out.entropy_rays);
    return out;
}

struct MetricsRow {
    int step = 0;
    double mse = 0.0;
    double dist = 0.0;
    double psnr = 0.0;
    double lr_mult = 0.0;
    double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,mse,dist,psnr,lr_mult,seconds";

inline std::string format_metrics_row(const MetricsRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.3f", r.step, r.mse, r.dist, r.psnr, r.lr_mult,
                  r.seconds);
    return buf;
}

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<MetricsRow> log;
    /// TV pairs evaluated (density + color) at every step.
    std::vector<std::int64_t> tv_pairs;
    EvalResult eval;
};

struct TrainOptions {
    /// Directory for metrics.csv and checkpoint.vxg; empty writes nothing.
    std::filesystem::path out_dir;
    /// Called after each logged row.
    std::function<void(const MetricsRow&)> on_log;
    /// Skips the final evaluation over the test split.
    bool skip_final_eval = false;
};

/// The dataset at data.path, or a generated scene seeded with train.seed when the path is empty.
inline SceneDataset dataset_for(const TrainConfig& cfg) {
    if (!cfg.data.path.empty()) return load_dataset(cfg.data.path);
    SceneSpec spec;
    spec.resolution = cfg.scene.resolution;
    spec.num_boxes = cfg.scene.num_boxes;
    spec.train_views = cfg.scene.train_views;
    spec.test_views = cfg.scene.test_views;
    spec.image_size = cfg.scene.image_size;
    spec.mode = parse_capture_mode(cfg.scene.mode);
    spec.b = cfg.contraction.b;
    spec.p = cfg.contraction.p;
    return gen_synthetic_scene(cfg.train.seed, spec).dataset;
}

/// Trains a density/color grid pair on the dataset's training views.
inline TrainResult train(const TrainConfig& cfg, const SceneDataset& ds, const TrainOptions& opts = {}) {
    cfg.validate();
    const auto train_idx = ds.train_indices();
    const auto test_idx = ds.test_indices();
    if (train_idx.size() < 2) throw std::invalid_argument("train: dataset needs at least two training views");
    if (test_idx.empty()) throw std::invalid_argument("train: dataset needs a test view");
    if (cfg.train.threads > 0) set_thread_count(cfg.train.threads);

    const RenderConfig rc = make_render_config(cfg, ds);
    const Aabb grid_box = rc.contraction.grid_aabb();
    const double shift = alpha_shift(rc.alpha_init);

    std::vector<Ray> all_rays;
    std::vector<Vec3d> all_targets;
    all_rays.reserve(train_idx.size() * std::size_t(ds.width) * std::size_t(ds.height));
    for (std::size_t f : train_idx) {
        const PinholeCamera cam = ds.camera(ds.frames[f]);
        const Image& img = ds.frames[f].image;
        for (int y = 0; y < ds.height; ++y)
            for (int x = 0; x < ds.width; ++x) {
                all_rays.push_back(cam.ray(x, y, rc.near, rc.far));
                all_targets.emplace_back(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
            }
    }

    const std::vector<GridPhase> phases = grid_schedule(cfg);
    std::size_t phase = 0;
    auto cube = [](int r) { return Resolution{r, r, r}; };

    TrainResult result;
    Checkpoint& ck = result.checkpoint;
    ck.render = rc;
    ck.field = RadianceField<float>(cube(phases[0].resolution), grid_box);
    ck.adam_density = AdamState<float>(ck.field.density.size(), cfg.train.lr_density);
    ck.adam_color = AdamState<float>(ck.field.color.size(), cfg.train.lr_color);
    ck.mask = OccupancyMask::for_grid(ck.field.density.resolution());
    GradBuffer<float> gd(ck.field.density), gc(ck.field.color);

    std::mt19937_64 rng(cfg.train.seed);
    std::uniform_int_distribution<std::size_t> pick(0, all_rays.size() - 1);
    const auto B = std::size_t(cfg.train.rays_per_batch);
    std::vector<Ray> rays(B);
    std::vector<Vec3d> targets(B);
    BatchWorkspace ws;

    std::ofstream metrics;
    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        metrics.open(opts.out_dir / "metrics.csv");
        if (!metrics) throw std::runtime_error("cannot write " + (opts.out_dir / "metrics.csv").string());
        metrics << kMetricsHeader << '\n';
    }
    const auto t_start = std::chrono::steady_clock::now();
    const int iters = cfg.train.iterations;
    result.tv_pairs.reserve(std::size_t(iters));

    for (int step = 0; step < iters; ++step) {
        if (phase + 1 < phases.size() && step == phases[phase + 1].start_step) {
            ++phase;
            const Resolution r = cube(phases[phase].resolution);
            ck.field.density = upscale(ck.field.density, r);
            ck.field.color = upscale(ck.field.color, r);
            ck.mask = ck.mask.resampled(OccupancyMask::for_grid(r).cells());
            gd = GradBuffer<float>(ck.field.density);
            gc = GradBuffer<float>(ck.field.color);
            ck.adam_density.reset(ck.field.density.size());
            ck.adam_color.reset(ck.field.color.size());
        }
        if (cfg.occupancy.enabled && step > 0 && step % cfg.occupancy.every == 0) {
            update_occupancy(ck.field.density, ck.mask, cfg.occupancy.threshold, shift);
        }

        for (std::size_t i = 0; i < B; ++i) {
            const std::size_t k = pick(rng);
            rays[i] = all_rays[k];
            targets[i] = all_targets[k];
        }
        gd.zero();
        gc.zero();
        const BatchLoss bl = backprop_rays(ck.field, std::span<const Ray>(rays), std::span<const Vec3d>(targets), rc,
                                           &ck.mask, cfg.loss.dist_weight, gd, gc, ws);
        if (!std::isfinite(bl.mse)) {
            throw std::runtime_error("training diverged at step " + std::to_string(step) + ": photometric loss is NaN");
        }
        if (!std::isfinite(bl.dist)) {
            throw std::runtime_error("training diverged at step " + std::to_string(step) + ": distortion loss is NaN");
        }

        const bool dense = step < cfg.loss.tv_dense_until;
        std::int64_t pairs = 0;
        if (cfg.loss.tv_weight_density > 0.0) {
            const auto active = dense ? std::vector<std::uint8_t>{} : active_nodes(gd);
            pairs += tv_add_grad(ck.field.density, gd, cfg.loss.tv_weight_density, dense,
                                 std::span<const std::uint8_t>(active), cfg.loss.huber_delta);
        }
        if (cfg.loss.tv_weight_color > 0.0) {
            const auto active = dense ? std::vector<std::uint8_t>{} : active_nodes(gc);
            pairs += tv_add_grad(ck.field.color, gc, cfg.loss.tv_weight_color, dense,
                                 std::span<const std::uint8_t>(active), cfg.loss.huber_delta);
        }
        result.tv_pairs.push_back(pairs);

        const double lr_mult = lr_schedule(step, iters, cfg.train.lr_decay);
        try {
            adam_step(ck.field.density.values(), std::span<const float>(gd.values()), ck.adam_density, lr_mult);
            adam_step(ck.field.color.values(), std::span<const float>(gc.values()), ck.adam_color, lr_mult);
        } catch (const std::exception& e) {
            throw std::runtime_error("training diverged at step " + std::to_string(step) + ": " + e.what());
        }

        if ((step + 1) % cfg.train.log_every == 0 || step + 1 == iters) {
            MetricsRow row;
            row.step = step + 1;
            row.mse = bl.mse;
            row.dist = cfg.loss.dist_weight * bl.dist;
            row.psnr = evaluate(ck.field, &ck.mask, rc, ds, {test_idx.front()}).mean_psnr;
            row.lr_mult = lr_mult;
            if (cfg.train.log_timing) {
                row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            }
            result.log.push_back(row);
            if (metrics.is_open()) metrics << format_metrics_row(row) << '\n' << std::flush;
            if (opts.on_log) opts.on_log(row);
        }
        if (!opts.out_dir.empty() && cfg.train.checkpoint_every > 0 && (step + 1) % cfg.train.checkpoint_every == 0) {
            write_checkpoint(opts.out_dir / "checkpoint.vxg", ck);
        }
    }

    if (!opts.out_dir.empty()) write_checkpoint(opts.out_dir / "checkpoint.vxg", ck);
    if (!opts.skip_final_eval) result.eval = evaluate(ck.field, &ck.mask, rc, ds);
    return result;
}

}  // namespace voxfield
