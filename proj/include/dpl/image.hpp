#pragma once

// Float images in [0,1], the dataset sample record, and bilinear resize.
// Channel counts: 1 (masks/heatmaps), 3 (pedestrian images), 4 (RGBA
// occluder canvases, alpha last).

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpl/common.hpp"

namespace dpl {

struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<double> v;

    Image() = default;
    Image(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

    double& at(int y, int x, int ch) {
        return v[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    double at(int y, int x, int ch) const {
        return v[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }

    std::size_t pixels() const { return static_cast<std::size_t>(h) * w; }

    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }

    void clamp01() {
        for (double& x : v) x = std::min(1.0, std::max(0.0, x));
    }

    // Snap to the 8-bit grid so in-memory pipelines agree with PNG round trips.
    void quantize8() {
        for (double& x : v) x = std::round(std::min(1.0, std::max(0.0, x)) * 255.0) / 255.0;
    }
};

enum class Split { train, query, gallery };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::query: return "query";
        default: return "gallery";
    }
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "query") return Split::query;
    if (s == "gallery") return Split::gallery;
    fail("unknown split name: " + s);
}

struct ImageSample {
    Image pixels;                       // h x w x 3, values in [0,1]
    int person_id = 0;
    int camera_id = 0;
    bool occluded = false;
    std::optional<Image> occlusion_mask;  // h x w x 1 when occluded
    Split split = Split::train;
    int index = 0;  // per (id, camera) sample index; names files on disk

    void check_invariants() const {
        require(pixels.c == 3, "ImageSample: pixels must have 3 channels");
        for (double x : pixels.v)
            require(x >= 0.0 && x <= 1.0, "ImageSample: pixel out of [0,1]");
        if (occluded) {
            require(occlusion_mask.has_value(), "ImageSample: occluded without mask");
            double mx = 0.0;
            for (double x : occlusion_mask->v) mx = std::max(mx, x);
            require(mx > 0.0, "ImageSample: occluded but mask is empty");
        }
    }
};

// Bilinear resize with half-pixel centers; preserves constant fields and is
// bit-identical when the size does not change.
inline Image resize_bilinear(const Image& src, int oh, int ow) {
    require(oh > 0 && ow > 0, "resize_bilinear: degenerate target size");
    Image out(oh, ow, src.c);
    const double sy = static_cast<double>(src.h) / oh;
    const double sx = static_cast<double>(src.w) / ow;
    for (int y = 0; y < oh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(src.h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < ow; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(src.w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < src.c; ++ch) {
                const double top = src.at(y0, x0, ch) * (1.0 - wx) + src.at(y0, x1, ch) * wx;
                const double bot = src.at(y1, x0, ch) * (1.0 - wx) + src.at(y1, x1, ch) * wx;
                out.at(y, x, ch) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

// Nearest-neighbour upscale used for heatmap export.
inline Image resize_nearest(const Image& src, int oh, int ow) {
    require(oh > 0 && ow > 0, "resize_nearest: degenerate target size");
    Image out(oh, ow, src.c);
    for (int y = 0; y < oh; ++y) {
        const int iy = std::min(src.h - 1, static_cast<int>(static_cast<double>(y) * src.h / oh));
        for (int x = 0; x < ow; ++x) {
            const int ix = std::min(src.w - 1, static_cast<int>(static_cast<double>(x) * src.w / ow));
            for (int ch = 0; ch < src.c; ++ch) out.at(y, x, ch) = src.at(iy, ix, ch);
        }
    }
    return out;
}

inline Image flip_horizontal(const Image& src) {
    Image out(src.h, src.w, src.c);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int ch = 0; ch < src.c; ++ch) out.at(y, x, ch) = src.at(y, src.w - 1 - x, ch);
    return out;
}

}  // namespace dpl
