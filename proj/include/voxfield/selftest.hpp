// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Oracle and invariant checks shared by `voxfield selftest` and the acceptance binary. Each
// check compares the library against an independently written scalar computation.

#include "voxfield/contraction.hpp"
#include "voxfield/datasets.hpp"
#include "voxfield/distortion_loss.hpp"
#include "voxfield/grid.hpp"
#include "voxfield/optimizer.hpp"
#include "voxfield/rendering.hpp"
#include "voxfield/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#endif

namespace voxfield::selftest {

struct CheckResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

inline std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Ragged batch with 1..max_rays rays of 1..max_samples samples. Boundaries are sorted uniforms
/// on [0,1]; weights are positive with a per-ray sum drawn from [0,1].
inline RaySampleBatch random_batch(std::mt19937_64& rng, int max_rays, int max_samples) {
    std::uniform_int_distribution<int> nrays(1, max_rays), nsamp(1, max_samples);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RaySampleBatch batch;
    const int R = nrays(rng);
    std::vector<double> s, w;
    for (int r = 0; r < R; ++r) {
        const int N = nsamp(rng);
        s.resize(std::size_t(N) + 1);
        for (;;) {
            for (double& v : s) v = u(rng);
            std::sort(s.begin(), s.end());
            if (std::adjacent_find(s.begin(), s.end()) == s.end()) break;
        }
        w.resize(std::size_t(N));
        double sum = 0.0;
        for (double& v : w) sum += (v = u(rng));
        const double target = u(rng);
        for (double& v : w) v *= target / sum;
        batch.add_ray(s, w);
    }
    return batch;
}

/// Batch of `rays` rays with exactly `n` samples each.
inline RaySampleBatch fixed_batch(std::mt19937_64& rng, int rays, int n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RaySampleBatch batch;
    std::vector<double> s(static_cast<std::size_t>(n) + 1), w(static_cast<std::size_t>(n));
    for (int r = 0; r < rays; ++r) {
        for (int i = 0; i <= n; ++i) s[std::size_t(i)] = (i + 0.5 * u(rng)) / (n + 1.0);
        for (double& v : w) v = u(rng) / n;
        batch.add_ray(s, w);
    }
    return batch;
}

// 1
inline CheckResult check_distloss_oracle(int batches = 1000, std::uint64_t seed = 1) {
    Stopwatch sw;
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int b = 0; b < batches; ++b) {
        const RaySampleBatch batch = random_batch(rng, 64, 512);
        const double fast = distloss_forward(batch);
        const double ref = distloss_oracle(batch);
        worst = std::max(worst, std::abs(fast - ref) / std::max(std::abs(ref), 1e-12));
    }
    const double t = sw.seconds();
    return {1, "distortion loss matches O(N^2) oracle", worst <= 1e-6 && t < 30.0,
            fmt("%d batches, max rel err %.3e (tol 1e-6), %.2fs (limit 30s)", batches, worst, t), t};
}

// 2
inline CheckResult check_distloss_gradient(int batches = 100, std::uint64_t seed = 2) {
    Stopwatch sw;
    std::mt19937_64 rng(seed);
    const double h = 1e-5;
    double worst = 0.0;
    for (int b = 0; b < batches; ++b) {
        RaySampleBatch batch = random_batch(rng, 16, 256);
        const std::vector<double> grad = distloss_backward(batch);
        // The loss is a sum of per-ray terms, so each weight only needs its own ray re-evaluated.
        for (std::size_t r = 0; r < batch.num_rays(); ++r) {
            const std::size_t lo = batch.ray_offsets[r], hi = batch.ray_offsets[r + 1];
            auto f = [&] { return distloss_ray_forward(batch.ray_m(r), batch.ray_len(r), batch.ray_w(r)); };
            for (std::size_t k = lo; k < hi; ++k) {
                const double w0 = batch.w[k];
                batch.w[k] = w0 + h;
                const double fp = f();
                batch.w[k] = w0 - h;
                const double fm = f();
                batch.w[k] = w0;
                const double fd = (fp - fm) / (2.0 * h);
                worst = std::max(worst, std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1e-12}));
            }
        }
    }
    const double t = sw.seconds();
    return {2, "distortion loss gradient matches finite differences", worst <= 1e-5 && t < 60.0,
            fmt("%d batches, step 1e-5, max rel err %.3e (tol 1e-5), %.2fs (limit 60s)", batches, worst, t), t};
}

struct ScalingRow {
    int n = 0;
    double t_fast = 0.0;
    double t_oracle = 0.0;  // negative when not measured
};

/// Evicts the batch from every cache level so each timed call streams it from memory.
inline void evict(const RaySampleBatch& b) {
#if defined(__x86_64__) || defined(__i386__)
    auto flush = [](const void* data, std::size_t bytes) {
        const char* p = static_cast<const char*>(data);
        for (std::size_t i = 0; i < bytes; i += 64) _mm_clflush(p + i);
    };
    flush(b.ray_offsets.data(), b.ray_offsets.size() * sizeof(std::size_t));
    for (const auto* v : {&b.s, &b.m, &b.len, &b.w}) flush(v->data(), v->size() * sizeof(double));
    _mm_mfence();
#else
    (void)b;
#endif
}

/// Seconds per call of the O(N) forward and, for n >= oracle_from, of the oracle, on `rays`
/// rays of each sample count. Made for a shared virtual machine:
/// - rounds interleave single calls over every n, so slow phases hit all sizes alike;
/// - the batches are re-copied every few rounds, since one allocation can sit in slower memory
///   for the life of the process;
/// - each call starts with the batch evicted from cache; otherwise small batches stay resident
///   between calls and look cheaper per sample than large ones streaming from memory;
/// - each n keeps its fastest call, as interference only ever adds time.
inline std::vector<ScalingRow> time_distloss(int rays, const std::vector<int>& ns, int oracle_from, int rounds = 60,
                                             int oracle_rounds = 2, std::uint64_t seed = 3) {
    constexpr int kRecopyEvery = 25;
    std::vector<RaySampleBatch> originals, batches;
    std::vector<ScalingRow> rows(ns.size());
    volatile double sink = 0.0;
    for (std::size_t i = 0; i < ns.size(); ++i) {
        std::mt19937_64 rng(seed + std::uint64_t(ns[i]));
        originals.push_back(fixed_batch(rng, rays, ns[i]));
        rows[i].n = ns[i];
        rows[i].t_fast = std::numeric_limits<double>::infinity();
        rows[i].t_oracle = -1.0;
    }
    for (int round = 0; round < rounds; ++round) {
        if (round % kRecopyEvery == 0) {
            batches.clear();
            for (const auto& b : originals) batches.push_back(b);
        }
        for (std::size_t i = 0; i < ns.size(); ++i) {
            evict(batches[i]);
            Stopwatch call;
            sink = sink + distloss_forward(batches[i]);
            rows[i].t_fast = std::min(rows[i].t_fast, call.seconds());
        }
    }
    for (int round = 0; round < oracle_rounds; ++round) {
        for (std::size_t i = 0; i < ns.size(); ++i) {
            if (ns[i] < oracle_from) continue;
            Stopwatch sw;
            sink = sink + distloss_oracle(originals[i], std::numeric_limits<std::size_t>::max());
            const double t = sw.seconds();
            rows[i].t_oracle = rows[i].t_oracle < 0.0 ? t : std::min(rows[i].t_oracle, t);
        }
    }
    return rows;
}

// 3
inline CheckResult check_distloss_scaling(int rays = 4096) {
    Stopwatch sw;
    const std::vector<ScalingRow> rows = time_distloss(rays, {128, 256, 512, 1024}, 512);
    double worst_fast = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) worst_fast = std::max(worst_fast, rows[i].t_fast / rows[i - 1].t_fast);
    const double oracle_ratio = rows[3].t_oracle / rows[2].t_oracle;
    const double t = sw.seconds();
    return {3, "distortion loss scales linearly, oracle quadratically",
            worst_fast <= 2.5 && oracle_ratio >= 3.5 && t < 120.0,
            fmt("fast t(2N)/t(N) max %.2f (<= 2.5); oracle t(1024)/t(512) %.2f (>= 3.5); fast ms %.2f/%.2f/%.2f/%.2f; "
                "%.1fs (limit 120s)",
                worst_fast, oracle_ratio, rows[0].t_fast * 1e3, rows[1].t_fast * 1e3, rows[2].t_fast * 1e3,
                rows[3].t_fast * 1e3, t),
            t};
}

// 4
inline CheckResult check_adam(std::size_t entries = 100000, int steps = 100, std::uint64_t seed = 4) {
    Stopwatch sw;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> p_fast(entries), p_ref, g(entries);
    for (double& v : p_fast) v = normal(rng);
    p_ref = p_fast;
    AdamState<double> s_fast(entries, 0.1), s_ref(entries, 0.1);
    double worst = 0.0;
    for (int step = 0; step < steps; ++step) {
        for (double& v : g) {
            do v = normal(rng);
            while (v == 0.0);
        }
        const double mult = 0.5 + 0.5 * double(step % 7) / 6.0;
        adam_step(std::span<double>(p_fast), std::span<const double>(g), s_fast, mult);
        adam_reference_step(std::span<double>(p_ref), std::span<const double>(g), s_ref, mult);
        for (std::size_t i = 0; i < entries; ++i) {
            worst = std::max({worst, std::abs(p_fast[i] - p_ref[i]), std::abs(s_fast.m[i] - s_ref.m[i]),
                              std::abs(s_fast.v[i] - s_ref.v[i])});
        }
    }
    // Zero-gradient entries must keep their exact bits in parameter and both moments.
    std::bernoulli_distribution zero(0.3);
    std::size_t frozen_bad = 0, zeros = 0;
    for (int step = 0; step < 10; ++step) {
        for (double& v : g) v = zero(rng) ? 0.0 : normal(rng);
        const std::vector<double> p0 = p_fast, m0 = s_fast.m, v0 = s_fast.v;
        adam_step(std::span<double>(p_fast), std::span<const double>(g), s_fast);
        for (std::size_t i = 0; i < entries; ++i) {
            if (g[i] != 0.0) continue;
            ++zeros;
            if (std::memcmp(&p0[i], &p_fast[i], sizeof(double)) || std::memcmp(&m0[i], &s_fast.m[i], sizeof(double)) ||
                std::memcmp(&v0[i], &s_fast.v[i], sizeof(double)))
                ++frozen_bad;
        }
    }
    const double t = sw.seconds();
    return {4, "fused Adam equals reference; zero gradients freeze state",
            worst <= 1e-12 && frozen_bad == 0 && t < 30.0,
            fmt("%zu entries x %d steps, max abs diff %.3e (tol 1e-12); %zu zero-grad entries, %zu changed; %.2fs "
                "(limit 30s)",
                entries, steps, worst, zeros, frozen_bad, t),
            t};
}

/// Explicit Huber TV energy, (weight / pairs) * sum over axis-neighbor pairs and channels.
/// Accumulates in long double so central differences of it resolve small gradient entries.
inline long double tv_energy(const VoxelGrid<double>& g, double weight, double delta) {
    const Resolution r = g.resolution();
    long double sum = 0.0L;
    std::int64_t pairs = 0;
    for (int x = 0; x < r.x; ++x)
        for (int y = 0; y < r.y; ++y)
            for (int z = 0; z < r.z; ++z) {
                const int nb[3][3] = {{x + 1, y, z}, {x, y + 1, z}, {x, y, z + 1}};
                for (const auto& q : nb) {
                    if (q[0] >= r.x || q[1] >= r.y || q[2] >= r.z) continue;
                    ++pairs;
                    for (int c = 0; c < g.channels(); ++c) {
                        const long double d = (long double)g.at(x, y, z, c) - g.at(q[0], q[1], q[2], c);
                        const long double a = d < 0 ? -d : d;
                        sum += a <= delta ? 0.5L * d * d : delta * (a - 0.5L * delta);
                    }
                }
            }
    return (long double)weight * sum / (long double)pairs;
}

// 5. Relative error uses max(|analytic|, |fd|, 1e-3 * largest gradient) as denominator; entries
// whose clipped Huber slopes cancel to exactly zero would otherwise divide roundoff by zero.
inline CheckResult check_tv(int grids = 20, std::uint64_t seed = 5) {
    Stopwatch sw;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(4, 8);
    std::normal_distribution<double> normal(0.0, 1.5);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    const double h = 1e-6;
    double worst_fd = 0.0, worst_sparse = 0.0;
    for (int k = 0; k < grids; ++k) {
        const Resolution res{dim(rng), dim(rng), dim(rng)};
        const int C = k % 2 ? 3 : 1;
        VoxelGrid<double> g(res, C, Aabb::cube(1.0));
        for (double& v : g.values()) v = normal(rng);
        const double weight = u(rng);
        const double delta = k % 3 == 0 ? 1.0 : u(rng);
        GradBuffer<double> dense(g), sparse(g);
        tv_add_grad(g, dense, weight, true, {}, delta);
        const std::vector<std::uint8_t> all(std::size_t(g.node_count()), 1);
        tv_add_grad(g, sparse, weight, false, std::span<const std::uint8_t>(all), delta);
        double gmax = 0.0;
        for (double v : dense.values()) gmax = std::max(gmax, std::abs(v));
        auto vals = g.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double v0 = vals[i];
            vals[i] = v0 + h;
            const long double ep = tv_energy(g, weight, delta);
            vals[i] = v0 - h;
            const long double em = tv_energy(g, weight, delta);
            vals[i] = v0;
            const double fd = double((ep - em) / (2.0L * h));
            const double an = dense.values()[i];
            worst_fd = std::max(worst_fd, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3 * gmax}));
            worst_sparse = std::max(worst_sparse, std::abs(sparse.values()[i] - an));
        }
    }
    const double t = sw.seconds();
    return {5, "TV gradient matches finite differences; full sparse equals dense",
            worst_fd <= 1e-5 && worst_sparse <= 1e-12 && t < 60.0,
            fmt("%d grids 4^3..8^3, max rel err %.3e (tol 1e-5), sparse-dense max diff %.3e (tol 1e-12), %.2fs "
                "(limit 60s)",
                grids, worst_fd, worst_sparse, t),
            t};
}

/// Mean pixel MSE of rendering `rays` against `targets`, forward pass only.
inline double render_mse(const RadianceField<double>& field, std::span<const Ray> rays, std::span<const Vec3d> targets,
                         const RenderConfig& rc) {
    RayTrace tr;
    double sum = 0.0;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        trace_ray(field, rays[i], rc, nullptr, tr);
        sum += (tr.color - targets[i]).squaredNorm();
    }
    return sum / (3.0 * double(rays.size()));
}

struct GradCheck {
    double worst = 0.0;
    double max_grad = 0.0;
    std::size_t checked = 0;
};

/// Compares backprop_rays against central differences of render_mse on a 4^3 field seen by a
/// 2x2 camera. Relative error uses max(|analytic|, |fd|, 1e-3 * largest gradient) as denominator.
inline GradCheck render_gradient_check(std::uint64_t seed, double dist_weight = 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RenderConfig rc;
    rc.contraction.aabb = Aabb::cube(1.0);
    rc.halt_transmittance = 0.0;
    rc.background = Vec3d(u(rng), u(rng), u(rng));
    RadianceField<double> field({4, 4, 4}, rc.contraction.aabb);
    for (double& v : field.density.values()) v = 5.0 + 5.0 * u(rng);
    for (double& v : field.color.values()) v = 4.0 * u(rng) - 2.0;

    PinholeCamera cam;
    cam.width = cam.height = 2;
    cam.focal_x = cam.focal_y = 3.0;
    cam.cx = cam.cy = 0.5;
    const Vec3d eye = 3.0 * Vec3d(u(rng) - 0.5, u(rng) - 0.5, 1.0).normalized();
    cam.c2w = look_at(eye, Vec3d(0.1 * u(rng), 0.1 * u(rng), 0.0), Vec3d::UnitY());
    std::vector<Ray> rays;
    std::vector<Vec3d> targets;
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            rays.push_back(cam.ray(x, y, rc.near, rc.far));
            targets.emplace_back(u(rng), u(rng), u(rng));
        }

    GradBuffer<double> gd(field.density), gc(field.color);
    BatchWorkspace ws;
    backprop_rays(field, std::span<const Ray>(rays), std::span<const Vec3d>(targets), rc, nullptr, dist_weight, gd, gc,
                  ws);

    auto loss = [&] {
        double l = render_mse(field, rays, targets, rc);
        if (dist_weight != 0.0) {
            RayTrace tr;
            double d = 0.0;
            for (const Ray& r : rays) {
                trace_ray(field, r, rc, nullptr, tr);
                RaySampleBatch b;
                std::vector<double> s;
                // Rebuild boundaries from the evaluated samples' midpoints and lengths.
                for (std::size_t i = 0; i < tr.m.size(); ++i) s.push_back(tr.m[i] - 0.5 * tr.len[i]);
                if (!tr.m.empty()) s.push_back(tr.m.back() + 0.5 * tr.len.back());
                if (!tr.w.empty()) b.add_ray(s, tr.w);
                d += b.num_rays() ? distloss_oracle(b) : 0.0;
            }
            l += dist_weight * d / double(rays.size());
        }
        return l;
    };
    GradCheck out;
    for (double v : gd.values()) out.max_grad = std::max(out.max_grad, std::abs(v));
    for (double v : gc.values()) out.max_grad = std::max(out.max_grad, std::abs(v));
    const double h = 1e-6;
    auto probe = [&](std::span<double> vals, std::span<const double> an) {
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double v0 = vals[i];
            vals[i] = v0 + h;
            const double lp = loss();
            vals[i] = v0 - h;
            const double lm = loss();
            vals[i] = v0;
            const double fd = (lp - lm) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(an[i]), 1e-3 * out.max_grad, 1e-300});
            out.worst = std::max(out.worst, std::abs(fd - an[i]) / denom);
            ++out.checked;
        }
    };
    probe(field.density.values(), gd.values());
    probe(field.color.values(), gc.values());
    return out;
}

// 6
inline CheckResult check_render_gradient(int trials = 5, std::uint64_t seed = 6) {
    Stopwatch sw;
    double worst = 0.0;
    std::size_t checked = 0;
    for (int k = 0; k < trials; ++k) {
        const GradCheck g = render_gradient_check(seed + std::uint64_t(k));
        worst = std::max(worst, g.worst);
        checked += g.checked;
    }
    const double t = sw.seconds();
    return {6, "pixel MSE gradient matches finite differences", worst <= 1e-4 && t < 60.0,
            fmt("%d fields 4^3, 2x2 image, %zu values, max rel err %.3e (tol 1e-4), %.2fs (limit 60s)", trials,
                checked, worst, t),
            t};
}

// 7
inline CheckResult check_contraction(std::size_t points = 100000, std::uint64_t seed = 7) {
    Stopwatch sw;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double b = 1.0;
    double identity_err = 0.0, continuity = 0.0, overshoot = -std::numeric_limits<double>::infinity();
    for (double p : {2.0, std::numeric_limits<double>::infinity()}) {
        for (std::size_t i = 0; i < points; ++i) {
            Vec3d dir(normal(rng), normal(rng), normal(rng));
            dir /= p_norm(dir, p);
            // Inside the unit ball the map is the identity.
            const Vec3d inside = u(rng) * dir;
            identity_err = std::max(identity_err, (contract_unbounded(inside, b, p) - inside).cwiseAbs().maxCoeff());
            // Both sides of the unit sphere meet.
            const Vec3d lo = contract_unbounded((1.0 - 1e-6) * dir, b, p);
            const Vec3d hi = contract_unbounded((1.0 + 1e-6) * dir, b, p);
            continuity = std::max(continuity, (hi - lo).cwiseAbs().maxCoeff());
            // Anything, however far, lands within norm 1 + b.
            const double radius = std::pow(10.0, -3.0 + 11.0 * u(rng));
            overshoot = std::max(overshoot, p_norm(contract_unbounded(radius * dir, b, p), p) - (1.0 + b));
        }
    }
    const Vec3d ex1 = contract_unbounded({2, 0, 0}, 1.0, 2.0);
    const Vec3d ex2 = contract_unbounded({2, 1, 0}, 1.0, std::numeric_limits<double>::infinity());
    const double ex_err = std::max((ex1 - Vec3d(1.5, 0, 0)).cwiseAbs().maxCoeff(),
                                   (ex2 - Vec3d(1.5, 0.75, 0)).cwiseAbs().maxCoeff());
    const double t = sw.seconds();
    const bool pass = identity_err == 0.0 && continuity <= 1e-5 && overshoot <= 0.0 && ex_err <= 1e-15 && t < 10.0;
    return {7, "contraction identity, continuity, boundedness, closed forms", pass,
            fmt("identity err %.1e, boundary jump %.3e (tol 1e-5), max norm - (1+b) %.3e (<= 0), closed-form err "
                "%.1e, %zu points x 2 norms, %.2fs (limit 10s)",
                identity_err, continuity, overshoot, ex_err, points, t),
            t};
}

// 8
inline CheckResult check_compositing(int rays = 10000, std::uint64_t seed = 8) {
    Stopwatch sw;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> len(1, 256);
    double worst_sum = 0.0, worst_halt = 0.0;
    int halted = 0;
    std::vector<double> alpha;
    std::vector<Vec3d> color;
    for (int r = 0; r < rays; ++r) {
        const int n = len(rng);
        const double scale = std::pow(u(rng), 2.0);  // mix of transparent and saturating rays
        alpha.resize(std::size_t(n));
        color.resize(std::size_t(n));
        for (int i = 0; i < n; ++i) {
            alpha[std::size_t(i)] = std::min(u(rng) * scale, 0.999);
            color[std::size_t(i)] = Vec3d(u(rng), u(rng), u(rng));
        }
        const Vec3d bg(u(rng), u(rng), u(rng));
        const CompositeResult cut = composite(alpha, color, bg, 1e-3);
        const CompositeResult full = composite(alpha, color, bg, 0.0);
        for (const CompositeResult* c : {&cut, &full}) {
            double s = c->transmittance;
            for (double w : c->weights) s += w;
            worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        }
        worst_halt = std::max(worst_halt, (cut.rgb - full.rgb).cwiseAbs().maxCoeff());
        halted += cut.evaluated < std::size_t(n);
    }
    const double t = sw.seconds();
    return {8, "weights + transmittance sum to one; early halt within 2e-3",
            worst_sum <= 1e-6 && worst_halt <= 2e-3 && t < 30.0,
            fmt("%d rays (%d halted early), max |sum w + T - 1| %.3e (tol 1e-6), max halt diff %.3e (tol 2e-3), "
                "%.2fs (limit 30s)",
                rays, halted, worst_sum, worst_halt, t),
            t};
}

struct RecoveryRun {
    TrainResult result;
    std::string log_text;
    double seconds = 0.0;
};

inline RecoveryRun run_recovery(const TrainConfig& cfg) {
    Stopwatch sw;
    RecoveryRun run;
    const SceneDataset ds = dataset_for(cfg);
    run.result = train(cfg, ds);
    run.log_text = std::string(kMetricsHeader) + "\n";
    for (const MetricsRow& row : run.result.log) run.log_text += format_metrics_row(row) + "\n";
    run.seconds = sw.seconds();
    return run;
}

/// Criteria 9 and 10: trains the default configuration on the generated box scene with the
/// distortion loss on and off, then repeats the first run for bit-identical logs.
inline std::vector<CheckResult> check_scene_recovery(const TrainConfig& base = {},
                                                     const std::function<void(const std::string&)>& progress = {}) {
    TrainConfig with_dist = base;
    TrainConfig without_dist = base;
    without_dist.loss.dist_weight = 0.0;
    auto note = [&](const std::string& s) {
        if (progress) progress(s);
    };

    const RecoveryRun a = run_recovery(with_dist);
    note(fmt("dist_weight=%g run: test PSNR %.2f dB, entropy %.4f, %.1fs", with_dist.loss.dist_weight,
             a.result.eval.mean_psnr, a.result.eval.mean_entropy, a.seconds));
    const RecoveryRun b = run_recovery(without_dist);
    note(fmt("dist_weight=0 run: test PSNR %.2f dB, entropy %.4f, %.1fs", b.result.eval.mean_psnr,
             b.result.eval.mean_entropy, b.seconds));
    const RecoveryRun c = run_recovery(with_dist);
    note(fmt("repeat run: %.1fs", c.seconds));

    std::vector<CheckResult> out;
    const double t9 = a.seconds + b.seconds;
    const bool pass9 = a.result.eval.mean_psnr > 30.0 && b.result.eval.mean_psnr > 0.0 &&
                       a.result.eval.mean_entropy < b.result.eval.mean_entropy && t9 < 600.0;
    out.push_back({9, "toy scene recovery; distortion loss lowers weight entropy", pass9,
                   fmt("%d^3 grid, %d steps: held-out PSNR %.2f dB (> 30); entropy with dist %.4f < without %.4f "
                       "(PSNR without %.2f dB); %.1fs (limit 600s)",
                       with_dist.grid.final_resolution, with_dist.train.iterations, a.result.eval.mean_psnr,
                       a.result.eval.mean_entropy, b.result.eval.mean_entropy, b.result.eval.mean_psnr, t9),
                   t9});
    const bool same = a.log_text == c.log_text && !a.result.log.empty();
    out.push_back({10, "repeated run gives a bit-identical metrics log", same,
                   fmt("%zu log rows, %s", a.result.log.size(), same ? "identical" : "logs differ"), c.seconds});
    return out;
}

/// Criteria 1-8.
inline std::vector<CheckResult> run_core_checks() {
    return {check_distloss_oracle(), check_distloss_gradient(), check_distloss_scaling(), check_adam(),
            check_tv(),              check_render_gradient(),   check_contraction(),      check_compositing()};
}

inline std::string format_result(const CheckResult& r) {
    return fmt("[%s] criterion %d: %s -- %s", r.pass ? "PASS" : "FAIL", r.id, r.name.c_str(), r.detail.c_str());
}

}  // namespace voxfield::selftest
