// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#include "voxfield/optimizer.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <random>

using namespace voxfield;

TEST(Adam, SingleStepClosedForm) {
    std::vector<double> p{0.0}, g{1.0};
    AdamState<double> st(1, 0.1);
    adam_step(std::span<double>(p), std::span<const double>(g), st);
    EXPECT_EQ(st.step, 1u);
    EXPECT_NEAR(st.m[0], 0.1, 1e-15);
    EXPECT_NEAR(st.v[0], 0.01, 1e-15);
    EXPECT_NEAR(p[0], -0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, AllZeroGradientsFreezeEverything) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    std::vector<double> p(100), g(100, 1.0);
    for (double& v : p) v = n(rng);
    AdamState<double> st(p.size(), 0.1);
    adam_step(std::span<double>(p), std::span<const double>(g), st);
    const auto p0 = p, m0 = st.m, v0 = st.v;
    std::fill(g.begin(), g.end(), 0.0);
    adam_step(std::span<double>(p), std::span<const double>(g), st);
    EXPECT_EQ(st.step, 2u);
    EXPECT_EQ(std::memcmp(p.data(), p0.data(), p.size() * sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(st.m.data(), m0.data(), p.size() * sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(st.v.data(), v0.data(), p.size() * sizeof(double)), 0);
}

TEST(Adam, ReferenceDecaysMomentsOnZeroGradient) {
    std::vector<double> p{1.0}, g{1.0};
    AdamState<double> st(1, 0.1);
    adam_reference_step(std::span<double>(p), std::span<const double>(g), st);
    const double m1 = st.m[0], v1 = st.v[0], p1 = p[0];
    g[0] = 0.0;
    adam_reference_step(std::span<double>(p), std::span<const double>(g), st);
    EXPECT_NEAR(st.m[0], 0.9 * m1, 1e-15);
    EXPECT_NEAR(st.v[0], 0.99 * v1, 1e-15);
    EXPECT_NE(p[0], p1);  // momentum keeps moving the reference
}

TEST(Adam, MatchesReferenceOnDenseGradients) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    std::vector<double> a(5000), b, g(a.size());
    for (double& v : a) v = n(rng);
    b = a;
    AdamState<double> sa(a.size(), 0.05), sb(a.size(), 0.05);
    for (int step = 0; step < 20; ++step) {
        for (double& v : g) {
            do v = n(rng);
            while (v == 0.0);
        }
        adam_step(std::span<double>(a), std::span<const double>(g), sa, 0.7);
        adam_reference_step(std::span<double>(b), std::span<const double>(g), sb, 0.7);
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(a[i], b[i], 1e-12);
        EXPECT_NEAR(sa.m[i], sb.m[i], 1e-12);
        EXPECT_NEAR(sa.v[i], sb.v[i], 1e-12);
    }
}

TEST(Adam, ConstantGradientMovesMonotonically) {
    std::vector<double> p{0.5}, g{-2.0};
    AdamState<double> st(1, 0.01);
    double prev = p[0];
    for (int i = 0; i < 5; ++i) {
        adam_reference_step(std::span<double>(p), std::span<const double>(g), st);
        EXPECT_GT(p[0], prev);
        prev = p[0];
    }
}

TEST(Adam, SkippedEntryResumesWithFrozenMoments) {
    // Entry 0 sees g on steps 1 and 3; entry 1 sees g on every step. The skipped step leaves
    // entry 0's moments where step 1 put them, and step 3 uses the global t = 3.
    std::vector<double> p{0.0, 0.0};
    AdamState<double> st(2, 0.1);
    adam_step(std::span<double>(p), std::span<const double>(std::vector<double>{1.0, 1.0}), st);
    const double m1 = st.m[0], v1 = st.v[0];
    adam_step(std::span<double>(p), std::span<const double>(std::vector<double>{0.0, 1.0}), st);
    EXPECT_EQ(st.m[0], m1);
    EXPECT_EQ(st.v[0], v1);
    const double p_before = p[0];
    adam_step(std::span<double>(p), std::span<const double>(std::vector<double>{1.0, 1.0}), st);
    const double m = 0.9 * m1 + 0.1, v = 0.99 * v1 + 0.01;
    EXPECT_NEAR(st.m[0], m, 1e-15);
    EXPECT_NEAR(st.v[0], v, 1e-15);
    const double expected = p_before - 0.1 * (m / (1 - std::pow(0.9, 3))) / (std::sqrt(v / (1 - std::pow(0.99, 3))) + 1e-8);
    EXPECT_NEAR(p[0], expected, 1e-15);
}

TEST(Adam, GroupsAreIndependent) {
    std::vector<double> a{1.0}, b{1.0}, g{1.0};
    AdamState<double> sa(1, 0.1), sb(1, 0.01);
    adam_step(std::span<double>(a), std::span<const double>(g), sa);
    adam_step(std::span<double>(b), std::span<const double>(g), sb);
    EXPECT_NEAR(1.0 - a[0], 10.0 * (1.0 - b[0]), 1e-12);
}

TEST(Adam, RejectsNonFiniteGradientNamingIndex) {
    std::vector<double> p(4, 0.0), g{0.0, 1.0, std::nan(""), 0.0};
    AdamState<double> st(4, 0.1);
    try {
        adam_step(std::span<double>(p), std::span<const double>(g), st);
        FAIL() << "expected an error";
    } catch (const std::domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("index 2"), std::string::npos) << e.what();
    }
    EXPECT_EQ(st.step, 0u);
}

TEST(Adam, RejectsShapeMismatch) {
    std::vector<double> p(3), g(4);
    AdamState<double> st(3, 0.1);
    EXPECT_THROW(adam_step(std::span<double>(p), std::span<const double>(g), st), std::invalid_argument);
    EXPECT_THROW(adam_reference_step(std::span<double>(p), std::span<const double>(g), st), std::invalid_argument);
}

TEST(Adam, ResetClearsMomentsAndStep) {
    std::vector<double> p{0.0}, g{1.0};
    AdamState<double> st(1, 0.1);
    adam_step(std::span<double>(p), std::span<const double>(g), st);
    st.reset(3);
    EXPECT_EQ(st.step, 0u);
    EXPECT_EQ(st.m, std::vector<double>(3, 0.0));
    EXPECT_EQ(st.v, std::vector<double>(3, 0.0));
    EXPECT_EQ(st.lr, 0.1);
}

TEST(Adam, VarianceStaysNonNegative) {
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n;
    std::vector<float> p(1000, 0.0f), g(1000);
    AdamState<float> st(p.size(), 0.1);
    for (int s = 0; s < 10; ++s) {
        for (float& v : g) v = n(rng);
        adam_step(std::span<float>(p), std::span<const float>(g), st);
    }
    for (float v : st.v) EXPECT_GE(v, 0.0f);
}
