#pragma once

// PNG read/write backed by libpng. Reads are normalized to 8-bit gray, RGB
// or RGBA regardless of the on-disk layout (palette, 16-bit, gray+alpha),
// so externally built occluder libraries load without preprocessing.
// Writes quantize [0,1] floats to 8 bits.

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "dpl/image.hpp"

namespace dpl {

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline Image read_png(const std::string& path, int want_channels = 0) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail("read_png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png: libpng init failed");
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<unsigned char> raw;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png: decode error in " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (want_channels == 4) {
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        png_set_filler(png, 0xFF, PNG_FILLER_AFTER);
    } else if (want_channels == 3) {
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        png_set_strip_alpha(png);
    } else if (want_channels == 1) {
        if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_rgb_to_gray_fixed(png, 1, -1, -1);
        png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    raw.resize(static_cast<std::size_t>(h) * w * channels);
    row_ptrs.resize(h);
    for (png_uint_32 y = 0; y < h; ++y)
        row_ptrs[y] = raw.data() + static_cast<std::size_t>(y) * w * channels;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image out(static_cast<int>(h), static_cast<int>(w), channels);
    for (std::size_t i = 0; i < raw.size(); ++i) out.v[i] = raw[i] / 255.0;
    return out;
}

inline void write_png(const std::string& path, const Image& img) {
    require(img.c == 1 || img.c == 3 || img.c == 4, "write_png: unsupported channel count");
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail("write_png: cannot open " + path + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail("write_png: libpng init failed");
    }
    std::vector<unsigned char> raw(img.v.size());
    std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(img.h));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("write_png: encode error for " + path);
    }
    png_init_io(png, fp.get());
    const int color = img.c == 1 ? PNG_COLOR_TYPE_GRAY
                    : img.c == 3 ? PNG_COLOR_TYPE_RGB
                                 : PNG_COLOR_TYPE_RGBA;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t i = 0; i < img.v.size(); ++i) {
        const double x = std::min(1.0, std::max(0.0, img.v[i]));
        raw[i] = static_cast<unsigned char>(std::lround(x * 255.0));
    }
    for (int y = 0; y < img.h; ++y)
        row_ptrs[static_cast<std::size_t>(y)] =
            raw.data() + static_cast<std::size_t>(y) * img.w * img.c;
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace dpl
