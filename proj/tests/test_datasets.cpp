// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#include "voxfield/datasets.hpp"
#include "voxfield/rendering.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>

using namespace voxfield;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("voxfield_test_datasets_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

SceneSpec small_spec() {
    SceneSpec s;
    s.resolution = 16;
    s.image_size = 16;
    s.train_views = 6;
    s.test_views = 2;
    return s;
}

void write_manifest(const fs::path& dir, const std::string& matrix) {
    Image img(4, 4, 3);
    write_png(dir / "a.png", img);
    std::ofstream(dir / "transforms.json") << R"({"camera_angle_x": 1.0, "frames": [)"
                                           << R"({"file_path": "./a", "transform_matrix": )" << matrix << "}]}";
}

}  // namespace

TEST(Dataset, FocalFromCameraAngle) {
    SceneDataset ds;
    ds.width = 100;
    ds.focal = 50.0;
    EXPECT_NEAR(ds.camera_angle_x(), std::numbers::pi / 2, 1e-15);

    const fs::path dir = scratch("focal");
    Image img(100, 10, 3);
    write_png(dir / "a.png", img);
    write_png(dir / "b.png", img);
    std::ofstream(dir / "transforms.json")
        << std::setprecision(17) << R"({"camera_angle_x": )" << std::numbers::pi / 2 << R"(, "frames": [)"
        << R"({"file_path": "./a", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]]},)"
        << R"({"file_path": "./b", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,5],[0,0,0,1]]}]})";
    const SceneDataset loaded = load_dataset(dir);
    EXPECT_NEAR(loaded.focal, 50.0, 1e-12);
    EXPECT_EQ(loaded.cx, 50.0);
    EXPECT_EQ(loaded.cy, 5.0);
    // No test manifest: every 8th frame is held out, starting with the first.
    EXPECT_EQ(loaded.test_indices(), std::vector<std::size_t>{0});
    EXPECT_EQ(loaded.train_indices(), std::vector<std::size_t>{1});
}

TEST(Dataset, RejectsNonRigidPoseNamingTheFrame) {
    const fs::path dir = scratch("nonrigid");
    write_manifest(dir, "[[2,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]]");
    try {
        load_dataset(dir);
        FAIL() << "expected an error";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("frame 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("rigid"), std::string::npos) << msg;
    }
}

TEST(Dataset, RejectsMalformedManifests) {
    const fs::path dir = scratch("malformed");
    write_manifest(dir, "[[1,0,0],[0,1,0],[0,0,1]]");
    EXPECT_THROW(load_dataset(dir), std::runtime_error);
    std::ofstream(dir / "transforms.json") << "{ not json";
    EXPECT_THROW(load_dataset(dir), std::runtime_error);
    EXPECT_THROW(load_dataset(scratch("missing")), std::runtime_error);
}

TEST(Dataset, CheckRigidAcceptsRotations) {
    Mat4d m = Mat4d::Identity();
    m.block<3, 3>(0, 0) = Eigen::AngleAxisd(0.7, Vec3d(1, 2, 3).normalized()).toRotationMatrix();
    EXPECT_NO_THROW(detail::check_rigid(m, "x"));
    m(0, 0) = -m(0, 0);
    m(1, 0) = -m(1, 0);
    m(2, 0) = -m(2, 0);  // reflection
    EXPECT_THROW(detail::check_rigid(m, "x"), std::runtime_error);
}

TEST(Dataset, LookAtPointsTheCameraAtTheTarget) {
    const Vec3d eye(3, -2, 1);
    const Mat4d m = look_at(eye, Vec3d::Zero());
    const Mat3d R = m.block<3, 3>(0, 0);
    EXPECT_NEAR((R.transpose() * R - Mat3d::Identity()).norm(), 0.0, 1e-12);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-12);
    const Vec3d forward = -R.col(2);
    EXPECT_NEAR((forward - (-eye).normalized()).norm(), 0.0, 1e-12);
    // Looking straight down still gives a valid frame.
    EXPECT_NO_THROW(detail::check_rigid(look_at(Vec3d(0, 0, 4), Vec3d::Zero()), "down"));
}

TEST(Dataset, WriteThenLoadRoundTrips) {
    const auto scene = gen_synthetic_scene(11, small_spec());
    const fs::path dir = scratch("roundtrip");
    write_dataset(scene.dataset, dir);
    const SceneDataset back = load_dataset(dir);
    const SceneDataset& ds = scene.dataset;
    ASSERT_EQ(back.frames.size(), ds.frames.size());
    EXPECT_EQ(back.width, ds.width);
    EXPECT_EQ(back.height, ds.height);
    EXPECT_NEAR(back.focal, ds.focal, 1e-9);
    EXPECT_EQ(back.mode, ds.mode);
    EXPECT_EQ(back.near, ds.near);
    EXPECT_EQ(back.test_indices().size(), ds.test_indices().size());
    // Train frames come first in the reloaded set, then test frames, each in original order.
    std::vector<std::size_t> order = ds.train_indices();
    for (std::size_t i : ds.test_indices()) order.push_back(i);
    for (std::size_t k = 0; k < order.size(); ++k) {
        const Frame& a = ds.frames[order[k]];
        const Frame& b = back.frames[k];
        EXPECT_EQ(a.test, b.test);
        EXPECT_LT((a.pose - b.pose).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(a.image, b.image);  // generated images are already 8-bit
    }
}

TEST(SyntheticScene, SameSeedIsBitIdentical) {
    const auto a = gen_synthetic_scene(5, small_spec());
    const auto b = gen_synthetic_scene(5, small_spec());
    EXPECT_TRUE(std::ranges::equal(a.truth.density.values(), b.truth.density.values()));
    EXPECT_TRUE(std::ranges::equal(a.truth.color.values(), b.truth.color.values()));
    ASSERT_EQ(a.dataset.frames.size(), b.dataset.frames.size());
    for (std::size_t i = 0; i < a.dataset.frames.size(); ++i) {
        EXPECT_EQ(a.dataset.frames[i].image, b.dataset.frames[i].image);
        EXPECT_EQ(a.dataset.frames[i].pose, b.dataset.frames[i].pose);
    }
    const auto c = gen_synthetic_scene(6, small_spec());
    EXPECT_FALSE(std::ranges::equal(a.truth.density.values(), c.truth.density.values()));
}

TEST(SyntheticScene, SplitSizesAndDisjointness) {
    const auto s = gen_synthetic_scene(1, small_spec());
    const auto train = s.dataset.train_indices();
    const auto test = s.dataset.test_indices();
    EXPECT_EQ(train.size(), 6u);
    EXPECT_EQ(test.size(), 2u);
    for (std::size_t t : test)
        EXPECT_EQ(std::find(train.begin(), train.end(), t), train.end());
}

TEST(SyntheticScene, NoBoxesRendersBackground) {
    SceneSpec spec = small_spec();
    spec.num_boxes = 0;
    spec.background = Vec3d(1.0, 1.0, 1.0);
    const auto s = gen_synthetic_scene(2, spec);
    for (const Frame& f : s.dataset.frames)
        for (float v : f.image.data) EXPECT_EQ(v, 1.0f);
}

TEST(SyntheticScene, RejectsBoxesOutsideTheScene) {
    SceneSpec spec = small_spec();
    spec.boxes.push_back({Vec3d(0.5, 0.5, 0.5), Vec3d(1.5, 0.9, 0.9), Vec3d(1, 0, 0)});
    EXPECT_THROW(gen_synthetic_scene(0, spec), std::invalid_argument);
    spec.boxes = {{Vec3d(0.5, 0.5, 0.5), Vec3d(0.4, 0.9, 0.9), Vec3d(1, 0, 0)}};
    EXPECT_THROW(gen_synthetic_scene(0, spec), std::invalid_argument);
    spec.boxes.clear();
    spec.mode = CaptureMode::forward_facing;
    EXPECT_THROW(gen_synthetic_scene(0, spec), std::invalid_argument);
}

TEST(SyntheticScene, ExplicitBoxShowsItsColor) {
    SceneSpec spec = small_spec();
    spec.resolution = 24;
    spec.boxes.push_back({Vec3d::Constant(-0.5), Vec3d::Constant(0.5), Vec3d(0.8, 0.2, 0.3)});
    const auto s = gen_synthetic_scene(3, spec);
    for (const Frame& f : s.dataset.frames) {
        // Every camera looks at the origin, so the center pixel hits the box.
        const int c = spec.image_size / 2;
        EXPECT_NEAR(f.image.at(c, c, 0), 0.8, 2.0 / 255);
        EXPECT_NEAR(f.image.at(c, c, 1), 0.2, 2.0 / 255);
        EXPECT_NEAR(f.image.at(c, c, 2), 0.3, 2.0 / 255);
    }
}

TEST(SyntheticScene, UnboundedSceneIsGenerated) {
    SceneSpec spec = small_spec();
    spec.mode = CaptureMode::unbounded;
    const auto s = gen_synthetic_scene(4, spec);
    EXPECT_EQ(s.dataset.mode, CaptureMode::unbounded);
    EXPECT_EQ(s.render.contraction.mode, CaptureMode::unbounded);
    EXPECT_EQ(s.dataset.frames.size(), 8u);
    bool any_foreground = false;
    for (const Frame& f : s.dataset.frames)
        for (float v : f.image.data) any_foreground = any_foreground || v < 0.99f;
    EXPECT_TRUE(any_foreground);
}

TEST(SyntheticScene, RendererAgreesWithReferenceOnTruth) {
    SceneSpec spec = small_spec();
    spec.resolution = 32;
    const auto s = gen_synthetic_scene(9, spec);
    RenderConfig rc = s.render;
    rc.halt_transmittance = 0.0;
    rc.step_size = 0.125;
    double worst = 0.0, mean = 0.0;
    std::size_t count = 0;
    for (std::size_t f : s.dataset.test_indices()) {
        const auto cam = s.dataset.camera(s.dataset.frames[f]);
        const auto ours = render_image(s.truth, cam, rc);
        const auto ref = reference_render(s.truth, cam, rc);
        for (std::size_t i = 0; i < ref.data.size(); ++i) {
            const double d = std::abs(double(ours.rgb.data[i]) - double(ref.data[i]));
            worst = std::max(worst, d);
            mean += d;
            ++count;
        }
    }
    EXPECT_LT(worst, 5e-3);
    EXPECT_LT(mean / double(count), 5e-4);
}

TEST(ReferenceRender, HalvingTheStepBarelyChangesPixels) {
    // Smooth semi-transparent density; the hard box edges of a generated scene need a finer
    // step than the default to converge to this tolerance.
    RadianceField<double> f({20, 20, 20}, Aabb::cube(1.0));
    for (int x = 0; x < 20; ++x)
        for (int y = 0; y < 20; ++y)
            for (int z = 0; z < 20; ++z) {
                const Vec3d p = f.density.node_world(x, y, z);
                f.density.at(x, y, z) = 9.0 - 12.0 * p.squaredNorm();
                f.color.at(x, y, z, 0) = 2.0 * p.x();
                f.color.at(x, y, z, 2) = -p.y();
            }
    RenderConfig rc;
    rc.contraction.aabb = Aabb::cube(1.0);
    PinholeCamera cam;
    cam.width = cam.height = 12;
    cam.focal_x = cam.focal_y = 15.0;
    cam.cx = cam.cy = 6.0;
    cam.c2w = look_at(Vec3d(2.0, -2.0, 1.0), Vec3d::Zero());
    const auto a = reference_render(f, cam, rc, 0.25);
    const auto b = reference_render(f, cam, rc, 0.125);
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-3);
}

TEST(ReferenceRender, ColorIsLinearInTheBackground) {
    // With everything transparent the pixel is exactly the background.
    RadianceField<double> f({4, 4, 4}, Aabb::cube(1.0));
    for (double& v : f.density.values()) v = -30.0;
    RenderConfig rc;
    rc.contraction.aabb = Aabb::cube(1.0);
    rc.background = Vec3d(0.1, 0.2, 0.3);
    PinholeCamera cam;
    cam.width = cam.height = 4;
    cam.focal_x = cam.focal_y = 4.0;
    cam.cx = cam.cy = 2.0;
    cam.c2w = look_at(Vec3d(3, 0, 0), Vec3d::Zero());
    const auto img = reference_render(f, cam, rc);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_NEAR(img.at(x, y, c), rc.background[c], 1e-6);
}

TEST(ReferenceRender, OpaqueCenterVoxelGivesColoredBlob) {
    RadianceField<double> f({9, 9, 9}, Aabb::cube(1.0));
    for (double& v : f.density.values()) v = -30.0;
    for (int x = 3; x <= 5; ++x)
        for (int y = 3; y <= 5; ++y)
            for (int z = 3; z <= 5; ++z) {
                f.density.at(x, y, z) = 40.0;
                f.color.at(x, y, z, 0) = 10.0;
                f.color.at(x, y, z, 1) = -10.0;
                f.color.at(x, y, z, 2) = -10.0;
            }
    RenderConfig rc;
    rc.contraction.aabb = Aabb::cube(1.0);
    PinholeCamera cam;
    cam.width = cam.height = 9;
    cam.focal_x = cam.focal_y = 9.0;
    cam.cx = cam.cy = 4.0;
    cam.c2w = look_at(Vec3d(3, 0, 0), Vec3d::Zero());
    const auto img = reference_render(f, cam, rc);
    EXPECT_GT(img.at(4, 4, 0), 0.95);
    EXPECT_LT(img.at(4, 4, 1), 0.05);
    // Corner rays miss the blob and see the white background.
    EXPECT_NEAR(img.at(0, 0, 1), 1.0, 1e-6);
    EXPECT_THROW(
        [&] {
            RenderConfig ff = rc;
            ff.contraction.mode = CaptureMode::forward_facing;
            reference_render(f, cam, ff);
        }(),
        std::invalid_argument);
}
