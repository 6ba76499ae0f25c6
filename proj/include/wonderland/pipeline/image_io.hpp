#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include "wonderland/numerics/ops.hpp"

namespace wonderland::pipeline {

// 8-bit RGB PNG. Values are clamped to [0,1] and rounded to the nearest level.

namespace detail {
struct FileCloser {
    void operator()(std::FILE *f) const {
        if (f) std::fclose(f);
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline void write_png(const std::filesystem::path &path, const Tensor &image) {
    if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("write_png expects H×W×3, got " + to_string(image.shape()));
    const std::size_t H = image.dim(0), W = image.dim(1);
    std::vector<unsigned char> bytes(H * W * 3);
    const auto src = image.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const float v = std::isfinite(src[i]) ? std::clamp(src[i], 0.0f, 1.0f) : 0.0f;
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    detail::File fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < H; ++y) png_write_row(png, bytes.data() + y * W * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads 8-bit gray, RGB or RGBA (alpha dropped) into H×W×3 floats in [0,1].
inline Tensor read_png(const std::filesystem::path &path) {
    detail::File fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open image " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw FormatError(path.string() + ": not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng initialisation failed");
    }
    std::vector<unsigned char> bytes;
    png_uint_32 W = 0, H = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(path.string() + ": corrupt PNG");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    W = png_get_image_width(png, info);
    H = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info), type = png_get_color_type(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (type == PNG_COLOR_TYPE_GRAY || type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        png_set_gray_to_rgb(png);
    }
    if (type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != W * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(path.string() + ": unsupported PNG layout");
    }
    bytes.resize(std::size_t(H) * W * 3);
    for (png_uint_32 y = 0; y < H; ++y) png_read_row(png, bytes.data() + std::size_t(y) * W * 3, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::vector<float> out(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<float>(bytes[i]) / 255.0f;
    return Tensor({H, W, 3}, std::move(out));
}

inline std::filesystem::path frame_path(const std::filesystem::path &dir, std::size_t f) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05zu.png", f);
    return dir / name;
}

/// Writes T×H×W×3 as frame_00000.png, frame_00001.png, ...
inline void write_frames(const std::filesystem::path &dir, const Tensor &video) {
    if (video.rank() != 4) throw ShapeError("write_frames expects T×H×W×3, got " + to_string(video.shape()));
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t f = 0; f < video.dim(0); ++f) write_png(frame_path(dir, f), reshape(slice(video, 0, f, 1), {video.dim(1), video.dim(2), 3}));
}

/// Reads a contiguous frame_%05d.png sequence starting at 0.
inline Tensor read_frames(const std::filesystem::path &dir) {
    std::vector<Tensor> frames;
    while (std::filesystem::exists(frame_path(dir, frames.size()))) {
        Tensor f = read_png(frame_path(dir, frames.size()));
        if (!frames.empty() && (f.dim(0) != frames.front().dim(1) || f.dim(1) != frames.front().dim(2))) throw FormatError(dir.string() + ": frame sizes differ");
        frames.push_back(reshape(f, {1, f.dim(0), f.dim(1), 3}));
    }
    if (frames.empty()) throw IoError("no frame_00000.png in " + dir.string());
    return concat(frames, 0);
}

}  // namespace wonderland::pipeline
