// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "voxfield/common.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace voxfield {

/// Row-major float image, value (x, y, c) at (y*width + x)*channels + c.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

    float& at(int x, int y, int c = 0) { return data[(std::size_t(y) * width + x) * channels + c]; }
    float at(int x, int y, int c = 0) const { return data[(std::size_t(y) * width + x) * channels + c]; }
    std::size_t pixel_count() const { return std::size_t(width) * height; }
    bool operator==(const Image&) const = default;
};

inline std::uint8_t to_u8(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return std::uint8_t(std::lround(c * 255.0f));
}

/// Rounds every value to the nearest 8-bit level, so a PNG round trip is lossless.
inline void quantize_u8(Image& img) {
    for (float& v : img.data) v = float(to_u8(v)) / 255.0f;
}

/// 8-bit RGB (or gray for single-channel images) PNG.
inline void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: need 1 or 3 channels");
    png_image out{};
    out.version = PNG_IMAGE_VERSION;
    out.width = png_uint_32(img.width);
    out.height = png_uint_32(img.height);
    out.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> bytes(img.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_u8(img.data[i]);
    if (!png_image_write_to_file(&out, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
        throw std::runtime_error("failed to write PNG " + path.string() + ": " + out.message);
    }
}

/// Reads a PNG as RGB floats in [0,1]. Images with alpha are composited over `background`.
inline Image read_png(const std::filesystem::path& path, const Vec3d& background = Vec3d::Ones()) {
    png_image in{};
    in.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&in, path.string().c_str())) {
        throw std::runtime_error("failed to open PNG " + path.string() + ": " + in.message);
    }
    const bool has_alpha = (in.format & PNG_FORMAT_FLAG_ALPHA) != 0;
    in.format = has_alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
    const int channels = has_alpha ? 4 : 3;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(in));
    if (!png_image_finish_read(&in, nullptr, bytes.data(), 0, nullptr)) {
        png_image_free(&in);
        throw std::runtime_error("failed to decode PNG " + path.string() + ": " + in.message);
    }
    Image img(int(in.width), int(in.height), 3);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        const std::uint8_t* px = bytes.data() + p * channels;
        const float a = has_alpha ? px[3] / 255.0f : 1.0f;
        for (int c = 0; c < 3; ++c) {
            const float v = px[c] / 255.0f;
            img.data[p * 3 + c] = has_alpha ? v * a + float(background[c]) * (1.0f - a) : v;
        }
    }
    return img;
}

/// f32 sidecar: "VXIM", u32 height, u32 width, u32 channels, then row-major f32 values.
inline void write_vxim(const std::filesystem::path& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    io::write_magic(os, "VXIM");
    io::write_le<std::uint32_t>(os, std::uint32_t(img.height));
    io::write_le<std::uint32_t>(os, std::uint32_t(img.width));
    io::write_le<std::uint32_t>(os, std::uint32_t(img.channels));
    for (float v : img.data) io::write_le<float>(os, v);
}

inline Image read_vxim(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    io::expect_magic(is, "VXIM");
    const int h = int(io::read_le<std::uint32_t>(is));
    const int w = int(io::read_le<std::uint32_t>(is));
    const int c = int(io::read_le<std::uint32_t>(is));
    Image img(w, h, c);
    for (float& v : img.data) v = io::read_le<float>(is);
    return img;
}

}  // namespace voxfield
