// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#include "voxfield/datasets.hpp"
#include "voxfield/rendering.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace voxfield;

namespace {

Ray make_ray(Vec3d o, Vec3d d, double near = 0.0, double far = 1e10) {
    Ray r;
    r.origin = o;
    r.direction = d.normalized();
    r.near = near;
    r.far = far;
    return r;
}

RenderConfig bounded_config(const Aabb& box = Aabb{Vec3d::Zero(), Vec3d::Ones()}) {
    RenderConfig rc;
    rc.contraction.aabb = box;
    return rc;
}

PinholeCamera camera_at(Vec3d eye, int w, int h, double focal) {
    PinholeCamera cam;
    cam.width = w;
    cam.height = h;
    cam.focal_x = cam.focal_y = focal;
    cam.cx = 0.5 * w;
    cam.cy = 0.5 * h;
    cam.c2w = look_at(eye, Vec3d::Zero());
    return cam;
}

RadianceField<double> blob_field(int n) {
    RadianceField<double> f({n, n, n}, Aabb::cube(1.0));
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y)
            for (int z = 0; z < n; ++z) {
                const Vec3d p = f.density.node_world(x, y, z);
                f.density.at(x, y, z) = p.norm() < 0.5 ? 12.0 : -8.0;
                f.color.at(x, y, z, 0) = 2.0 * p.x();
                f.color.at(x, y, z, 1) = -1.0;
                f.color.at(x, y, z, 2) = 2.0 * p.z();
            }
    return f;
}

}  // namespace

TEST(RayAabb, AxisAlignedHit) {
    const auto hit = ray_aabb_intersect(make_ray({-2, 0.5, 0.5}, {1, 0, 0}), Aabb{Vec3d::Zero(), Vec3d::Ones()});
    ASSERT_TRUE(hit);
    EXPECT_NEAR(hit->first, 2.0, 1e-15);
    EXPECT_NEAR(hit->second, 3.0, 1e-15);
}

TEST(RayAabb, PointingAwayMisses) {
    EXPECT_FALSE(ray_aabb_intersect(make_ray({-2, 0.5, 0.5}, {-1, 0, 0}), Aabb{Vec3d::Zero(), Vec3d::Ones()}));
    EXPECT_FALSE(ray_aabb_intersect(make_ray({-2, 2, 0.5}, {1, 0, 0}), Aabb{Vec3d::Zero(), Vec3d::Ones()}));
}

TEST(RayAabb, ClipsToNearFar) {
    const auto hit = ray_aabb_intersect(make_ray({-2, 0.5, 0.5}, {1, 0, 0}, 2.5, 2.8), Aabb{Vec3d::Zero(), Vec3d::Ones()});
    ASSERT_TRUE(hit);
    EXPECT_EQ(hit->first, 2.5);
    EXPECT_EQ(hit->second, 2.8);
}

TEST(RayAabb, EndpointsLieOnSurface) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    const Aabb box{Vec3d(-1, -0.5, 0), Vec3d(2, 1, 0.5)};
    int hits = 0;
    for (int i = 0; i < 10000; ++i) {
        const Ray r = make_ray(4.0 * Vec3d(n(rng), n(rng), n(rng)), Vec3d(n(rng), n(rng), n(rng)));
        const auto hit = ray_aabb_intersect(r, box);
        if (!hit) continue;
        for (double t : {hit->first, hit->second}) {
            if (t == r.near) continue;  // origin inside the box
            const Vec3d p = r.origin + t * r.direction;
            double face = 1e9;
            for (int a = 0; a < 3; ++a) face = std::min({face, std::abs(p[a] - box.min[a]), std::abs(p[a] - box.max[a])});
            EXPECT_LE(face, 1e-9);
        }
        ++hits;
    }
    EXPECT_GT(hits, 100);
}

TEST(Sampling, BoundedStepArithmetic) {
    // Box 10 voxels long along x (11 nodes), step 0.5 voxel.
    RenderConfig rc = bounded_config(Aabb{Vec3d::Zero(), Vec3d::Constant(10.0)});
    RaySamples s;
    sample_points(make_ray({-1, 5.2, 5.3}, {1, 0, 0}), rc, {11, 11, 11}, s);
    EXPECT_EQ(s.s.size(), 20u);
    EXPECT_EQ(s.size(), 19u);
    EXPECT_EQ(s.s.front(), 0.0);
}

TEST(Sampling, BoundedMissIsEmpty) {
    RaySamples s;
    sample_points(make_ray({-1, 5, 5}, {-1, 0, 0}), bounded_config(), {8, 8, 8}, s);
    EXPECT_EQ(s.size(), 0u);
    EXPECT_TRUE(s.s.empty());
}

TEST(Sampling, ForwardFacingLayerCounts) {
    RenderConfig rc;
    rc.contraction.mode = CaptureMode::forward_facing;
    rc.contraction.num_layers = 256;
    rc.contraction.near = 1.0;
    rc.near = 0.0;
    const Resolution res{64, 64, 256};
    RaySamples s;
    rc.step_size = 1.0;
    sample_points(make_ray({0, 0, 0}, {0.1, 0.05, -1}), rc, res, s);
    EXPECT_EQ(s.size(), 256u);
    rc.step_size = 0.5;
    sample_points(make_ray({0, 0, 0}, {0.1, 0.05, -1}), rc, res, s);
    EXPECT_EQ(s.size(), 2u * 256u - 1u);
    EXPECT_NEAR(s.points.front().z(), 0.0, 1e-15);
    EXPECT_NEAR(s.points.back().z(), 1.0, 1e-15);
}

TEST(Sampling, BoundariesStrictlyIncreasingInUnitInterval) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    RenderConfig bounded = bounded_config(Aabb::cube(1.0));
    RenderConfig unbounded;
    unbounded.contraction.mode = CaptureMode::unbounded;
    RenderConfig ff;
    ff.contraction.mode = CaptureMode::forward_facing;
    ff.contraction.num_layers = 32;
    ff.near = 0.0;
    RaySamples s;
    for (const RenderConfig* rc : {&bounded, &unbounded, &ff}) {
        int nonempty = 0;
        for (int i = 0; i < 300; ++i) {
            const Vec3d o = rc == &ff ? Vec3d(0.1 * n(rng), 0.1 * n(rng), 0) : 3.0 * Vec3d(n(rng), n(rng), n(rng));
            const Vec3d d = rc == &ff ? Vec3d(0.2 * n(rng), 0.2 * n(rng), -1) : (-o + Vec3d(n(rng), n(rng), n(rng)));
            sample_points(make_ray(o, d, 0.05), *rc, {16, 16, 32}, s);
            if (s.size() == 0) continue;
            ++nonempty;
            ASSERT_EQ(s.s.size(), s.size() + 1);
            EXPECT_GE(s.s.front(), 0.0);
            EXPECT_LE(s.s.back(), 1.0 + 1e-12);
            for (std::size_t k = 1; k < s.s.size(); ++k) EXPECT_GT(s.s[k], s.s[k - 1]);
            for (const Vec3d& p : s.points) {
                EXPECT_TRUE((p.array() >= -1e-9).all() && (p.array() <= 1.0 + 1e-9).all());
            }
        }
        EXPECT_GT(nonempty, 50);
    }
}

TEST(Sampling, UnboundedMarchesToTheCubeEdge) {
    RenderConfig rc;
    rc.contraction.mode = CaptureMode::unbounded;
    rc.contraction.p = std::numeric_limits<double>::infinity();
    RaySamples s;
    sample_points(make_ray({0, 0, 0}, {1, 0, 0}), rc, {32, 32, 32}, s);
    ASSERT_GT(s.size(), 0u);
    EXPECT_GT(s.points.back().x(), 0.97);
    // Constant step in contracted space: sample spacing is uniform in grid coordinates.
    const double d0 = (s.points[1] - s.points[0]).norm();
    const double d1 = (s.points[s.size() - 1] - s.points[s.size() - 2]).norm();
    EXPECT_NEAR(d0, d1, 1e-3 * d0);
}

TEST(Alpha, InitShiftGivesAlphaInit) {
    const double shift = alpha_shift(1e-4);
    EXPECT_NEAR(density_to_alpha(0.0, 0.5, shift).alpha, 1e-4, 1e-12);
    EXPECT_EQ(density_to_alpha(0.0, 0.0, shift).alpha, 0.0);
}

TEST(Alpha, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> raw(-10.0, 10.0), len(0.05, 2.0);
    const double shift = alpha_shift(1e-4);
    for (int i = 0; i < 1000; ++i) {
        const double r = raw(rng), l = len(rng);
        const AlphaGrad g = density_to_alpha(r, l, shift);
        if (g.alpha >= 1.0 - 1e-6) continue;
        const double h = 1e-6;
        const double fd = (density_to_alpha(r + h, l, shift).alpha - density_to_alpha(r - h, l, shift).alpha) / (2 * h);
        // Central differences of a value near 1 carry ~eps/h = 1e-10 of roundoff, hence the floor.
        EXPECT_LE(std::abs(fd - g.dalpha_draw), 1e-6 * std::max(std::abs(fd), 1e-4));
    }
}

TEST(Alpha, ClampKeepsTransmittancePositive) {
    const AlphaGrad g = density_to_alpha(1e4, 10.0, 0.0);
    EXPECT_EQ(g.alpha, 1.0 - 1e-6);
    EXPECT_EQ(g.dalpha_draw, 0.0);
}

TEST(Composite, ZeroAlphasGiveBackground) {
    const std::vector<double> a(5, 0.0);
    const std::vector<Vec3d> c(5, Vec3d(0.2, 0.4, 0.6));
    const Vec3d bg(0.9, 0.8, 0.7);
    const auto r = composite(a, c, bg);
    EXPECT_EQ(r.rgb, bg);
    EXPECT_EQ(r.transmittance, 1.0);
    for (double w : r.weights) EXPECT_EQ(w, 0.0);
}

TEST(Composite, OpaqueFirstSampleTakesItsColor) {
    const std::vector<double> a{1.0, 0.5};
    const std::vector<Vec3d> c{Vec3d(0.1, 0.2, 0.3), Vec3d(1, 1, 1)};
    const auto r = composite(a, c, Vec3d::Ones());
    EXPECT_NEAR(r.weights[0], 1.0, 2e-6);
    EXPECT_LE((r.rgb - c[0]).cwiseAbs().maxCoeff(), 2e-6);
    EXPECT_EQ(r.evaluated, 1u);
}

TEST(Composite, WeightsAndTransmittanceSumToOne) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 0.3);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> a(64);
        std::vector<Vec3d> c(64, Vec3d::Constant(0.5));
        for (double& v : a) v = u(rng);
        const auto r = composite(a, c, Vec3d::Zero(), 0.0);
        double sum = r.transmittance;
        for (double w : r.weights) sum += w;
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Composite, EarlyHaltWithinTolerance) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> a(128);
        std::vector<Vec3d> c(128);
        for (std::size_t k = 0; k < a.size(); ++k) {
            a[k] = 0.2 * u(rng);
            c[k] = Vec3d(u(rng), u(rng), u(rng));
        }
        const auto halted = composite(a, c, Vec3d::Ones(), 1e-3);
        const auto full = composite(a, c, Vec3d::Ones(), 0.0);
        EXPECT_LE((halted.rgb - full.rgb).cwiseAbs().maxCoeff(), 2e-3);
    }
}

TEST(Composite, SplittingZeroAlphaSampleIsInvariant) {
    const std::vector<double> a{0.3, 0.0, 0.5};
    const std::vector<double> b{0.3, 0.0, 0.0, 0.5};
    const std::vector<Vec3d> ca{Vec3d(1, 0, 0), Vec3d(0, 1, 0), Vec3d(0, 0, 1)};
    const std::vector<Vec3d> cb{Vec3d(1, 0, 0), Vec3d(0, 1, 0), Vec3d(0, 1, 0), Vec3d(0, 0, 1)};
    EXPECT_EQ(composite(a, ca, Vec3d::Ones()).rgb, composite(b, cb, Vec3d::Ones()).rgb);
}

TEST(Composite, RejectsBadAlpha) {
    const std::vector<Vec3d> c(1, Vec3d::Zero());
    EXPECT_THROW(composite(std::vector<double>{-0.1}, c, Vec3d::Ones()), std::invalid_argument);
    EXPECT_THROW(composite(std::vector<double>{1.5}, c, Vec3d::Ones()), std::invalid_argument);
    EXPECT_THROW(composite(std::vector<double>{std::nan("")}, c, Vec3d::Ones()), std::invalid_argument);
    EXPECT_THROW(composite(std::vector<double>{0.1, 0.2}, c, Vec3d::Ones()), std::invalid_argument);
}

TEST(Occupancy, ZeroGridIsAllFree) {
    VoxelGrid<double> d({16, 16, 16}, 1, Aabb::cube(1.0));
    auto mask = OccupancyMask::for_grid(d.resolution());
    EXPECT_EQ(mask.cells(), (Resolution{8, 8, 8}));
    update_occupancy(d, mask, 1e-3, alpha_shift(1e-4));
    EXPECT_EQ(mask.occupied_count(), 0);
}

TEST(Occupancy, DenseNodeKeepsItsCell) {
    VoxelGrid<double> d({16, 16, 16}, 1, Aabb::cube(1.0));
    d.at(5, 9, 12) = 50.0;
    auto mask = OccupancyMask::for_grid(d.resolution());
    update_occupancy(d, mask, 1e-3, alpha_shift(1e-4));
    EXPECT_GE(mask.occupied_count(), 1);
    EXPECT_TRUE(mask.occupied(d.node_normalized(5, 9, 12)));
    // Cells never come back once freed.
    d.at(0, 0, 0) = 50.0;
    const bool before = mask.occupied(d.node_normalized(0, 0, 0));
    update_occupancy(d, mask, 1e-3, alpha_shift(1e-4));
    EXPECT_EQ(mask.occupied(d.node_normalized(0, 0, 0)), before);
}

TEST(Occupancy, RejectsMaskFinerThanGrid) {
    VoxelGrid<double> d({4, 4, 4}, 1, Aabb::cube(1.0));
    OccupancyMask mask({8, 8, 8});
    EXPECT_THROW(update_occupancy(d, mask, 1e-3, 0.0), std::invalid_argument);
}

TEST(Occupancy, MaskedRenderMatchesUnmasked) {
    const auto field = blob_field(24);
    auto mask = OccupancyMask::for_grid(field.density.resolution());
    RenderConfig rc = bounded_config(Aabb::cube(1.0));
    update_occupancy(field.density, mask, 1e-3, alpha_shift(rc.alpha_init));
    EXPECT_LT(mask.occupied_count(), mask.cells().count());
    const auto cam = camera_at({2.5, 1.0, 0.8}, 24, 24, 30.0);
    const auto with = render_image(field, cam, rc, &mask);
    const auto without = render_image(field, cam, rc);
    for (std::size_t i = 0; i < with.rgb.data.size(); ++i) EXPECT_NEAR(with.rgb.data[i], without.rgb.data[i], 1e-2);
}

TEST(RenderImage, EmptySceneIsBackground) {
    RadianceField<double> f({8, 8, 8}, Aabb::cube(1.0));
    for (double& v : f.density.values()) v = -20.0;
    RenderConfig rc = bounded_config(Aabb::cube(1.0));
    rc.background = Vec3d(0.25, 0.5, 0.75);
    const auto out = render_image(f, camera_at({3, 0, 0}, 8, 6, 10.0), rc);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.rgb.at(x, y, c), rc.background[c], 1e-6);
}

TEST(RenderImage, AgreesWithReferenceRenderer) {
    // Smooth, semi-transparent density so both quadratures are converged to well under 5e-3.
    auto field = blob_field(20);
    for (int x = 0; x < 20; ++x)
        for (int y = 0; y < 20; ++y)
            for (int z = 0; z < 20; ++z) field.density.at(x, y, z) = 9.0 - 12.0 * field.density.node_world(x, y, z).squaredNorm();
    RenderConfig rc = bounded_config(Aabb::cube(1.0));
    rc.halt_transmittance = 0.0;
    const auto cam = camera_at({2.0, -2.0, 1.0}, 16, 16, 20.0);
    const auto ours = render_image(field, cam, rc);
    const auto ref = reference_render(field, cam, rc);
    for (std::size_t i = 0; i < ref.data.size(); ++i) EXPECT_NEAR(ours.rgb.data[i], ref.data[i], 5e-3);
}

TEST(RenderImage, DoubledResolutionAgreesAtSharedRays) {
    const auto field = blob_field(16);
    const RenderConfig rc = bounded_config(Aabb::cube(1.0));
    const auto small = render_image(field, camera_at({0.5, 2.5, 1.5}, 8, 8, 10.0), rc);
    const auto big = render_image(field, camera_at({0.5, 2.5, 1.5}, 16, 16, 20.0), rc);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_NEAR(small.rgb.at(x, y, c), big.rgb.at(2 * x, 2 * y, c), 1e-6);
}

TEST(RenderImage, DeterministicAcrossThreadCounts) {
    const auto field = blob_field(16);
    const RenderConfig rc = bounded_config(Aabb::cube(1.0));
    const auto cam = camera_at({2.0, 1.0, -1.0}, 12, 12, 14.0);
    set_thread_count(1);
    const auto a = render_image(field, cam, rc);
    set_thread_count(3);
    const auto b = render_image(field, cam, rc);
    set_thread_count(0);
    EXPECT_EQ(a.rgb, b.rgb);
    EXPECT_EQ(a.depth, b.depth);
}

TEST(RenderImage, DepthAndTransmittanceMaps) {
    const auto field = blob_field(20);
    const RenderConfig rc = bounded_config(Aabb::cube(1.0));
    const auto out = render_image(field, camera_at({3.0, 0, 0}, 9, 9, 12.0), rc);
    // The central ray enters the radius-0.5 ball at depth 2.5; the trilinear ramp across one
    // voxel pushes the visible surface a little deeper, never past the ball's center at 3.
    const double depth = out.depth.at(4, 4) / (1.0 - out.transmittance.at(4, 4));
    EXPECT_GT(depth, 2.4);
    EXPECT_LT(depth, 2.8);
    EXPECT_LT(out.transmittance.at(4, 4), 1e-2);
    EXPECT_GT(out.transmittance.at(0, 0), 0.99);
}

TEST(RenderImage, RejectsInvalidCamera) {
    const auto field = blob_field(4);
    PinholeCamera cam;
    cam.width = 0;
    cam.height = 4;
    EXPECT_THROW(render_image(field, cam, bounded_config()), std::invalid_argument);
    cam.width = 4;
    cam.focal_x = -1.0;
    EXPECT_THROW(render_image(field, cam, bounded_config()), std::invalid_argument);
}

TEST(Backprop, GradientsIndependentOfThreadCount) {
    auto field = blob_field(12);
    const RenderConfig rc = bounded_config(Aabb::cube(1.0));
    const auto cam = camera_at({2.0, 0.5, 0.3}, 10, 10, 12.0);
    std::vector<Ray> rays;
    std::vector<Vec3d> targets;
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) {
            rays.push_back(cam.ray(x, y, rc.near, rc.far));
            targets.emplace_back(0.3, 0.6, 0.9);
        }
    auto run = [&](int threads) {
        set_thread_count(threads);
        GradBuffer<double> gd(field.density), gc(field.color);
        BatchWorkspace ws;
        backprop_rays(field, std::span<const Ray>(rays), std::span<const Vec3d>(targets), rc, nullptr, 1e-2, gd, gc, ws);
        std::vector<double> all(gd.values().begin(), gd.values().end());
        all.insert(all.end(), gc.values().begin(), gc.values().end());
        return all;
    };
    const auto one = run(1);
    const auto four = run(4);
    set_thread_count(0);
    EXPECT_EQ(one, four);
}
