// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace voxfield {

using Vec3d = Eigen::Vector3d;
using Mat3d = Eigen::Matrix3d;
using Mat4d = Eigen::Matrix4d;

/// Node counts of a dense grid along x, y, z.
struct Resolution {
    int x = 0;
    int y = 0;
    int z = 0;

    std::int64_t count() const { return std::int64_t(x) * y * z; }
    int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    bool operator==(const Resolution&) const = default;
};

/// Axis-aligned box in world units.
struct Aabb {
    Vec3d min = Vec3d::Zero();
    Vec3d max = Vec3d::Ones();

    Vec3d extent() const { return max - min; }
    bool valid() const {
        return min.allFinite() && max.allFinite() && (min.array() < max.array()).all();
    }
    static Aabb cube(double half) { return {Vec3d::Constant(-half), Vec3d::Constant(half)}; }
    bool operator==(const Aabb& o) const { return min == o.min && max == o.max; }
};

inline double softplus(double x) { return x > 20.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Number of worker threads used by parallel loops. 0 restores the runtime default.
inline void set_thread_count(int threads) {
#ifdef _OPENMP
    static const int default_threads = omp_get_max_threads();
    omp_set_num_threads(threads > 0 ? threads : default_threads);
#else
    (void)threads;
#endif
}

inline int thread_index() {
#ifdef _OPENMP
    return omp_get_thread_num();
#else
    return 0;
#endif
}

inline int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace io {

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    os.write(bytes, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    static_assert(std::is_trivially_copyable_v<T>);
    char bytes[sizeof(T)];
    if (!is.read(bytes, sizeof(T))) throw std::runtime_error("unexpected end of binary stream");
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

inline void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
    char got[4];
    if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
        throw std::runtime_error(std::string("bad magic, expected ") + magic);
    }
}

}  // namespace io

}  // namespace voxfield
