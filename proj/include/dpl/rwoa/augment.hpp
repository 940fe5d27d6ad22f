#pragma once

// Real-world occlusion augmentation: resize the full-frame occluder canvas
// to the pedestrian image, feather the alpha matte, alpha-composite, then
// match the composited image's per-channel moments to the clean original.
//
// Every operation is a pure function of its inputs plus an explicit Rng,
// so augmentation parallelizes by handing each image a derived seed.

#include <cmath>
#include <optional>
#include <vector>

#include "dpl/common.hpp"
#include "dpl/image.hpp"
#include "dpl/occlib/library.hpp"

namespace dpl::rwoa {

struct AugmentConfig {
    double occlusion_ratio = 0.5;    // per-image Bernoulli each epoch
    double feather_radius_frac = 0.02;  // of image height; min 1 px
    double align_epsilon = 1e-6;
    double strong_weight = 0.5;
    bool clamp_output = true;

    void check() const {
        require(occlusion_ratio >= 0.0 && occlusion_ratio <= 1.0, "AugmentConfig: occlusion_ratio out of [0,1]");
        require(strong_weight >= 0.0 && strong_weight <= 1.0, "AugmentConfig: strong_weight out of [0,1]");
        require(feather_radius_frac >= 0.0, "AugmentConfig: feather_radius_frac must be >= 0");
        require(align_epsilon > 0.0, "AugmentConfig: align_epsilon must be positive");
    }
};

// Resize the whole canvas; spatial semantics (car at the bottom stays at
// the bottom) survive because non-occluded regions are transparent.
inline occlib::OcclusionInstance resize_to_target(const occlib::OcclusionInstance& inst, int h, int w) {
    require(h >= 8 && w >= 8, "resize_to_target: degenerate target size");
    occlib::OcclusionInstance out = inst;
    out.pixels = resize_bilinear(inst.pixels, h, w);
    return out;
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
    const int r = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[static_cast<std::size_t>(i + r)];
    }
    for (double& v : k) v /= sum;
    return k;
}

// One separable pass along an axis with border renormalization, so a
// constant field stays constant right up to the edge.
inline void blur_axis(const std::vector<double>& in, std::vector<double>& out, int h, int w,
                      const std::vector<double>& k, bool vertical) {
    const int r = static_cast<int>(k.size()) / 2;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0, mass = 0.0;
            for (int d = -r; d <= r; ++d) {
                const int yy = vertical ? y + d : y;
                const int xx = vertical ? x : x + d;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                const double kv = k[static_cast<std::size_t>(d + r)];
                acc += kv * in[static_cast<std::size_t>(yy) * w + xx];
                mass += kv;
            }
            out[static_cast<std::size_t>(y) * w + x] = acc / mass;
        }
}

}  // namespace detail

// Isotropic Gaussian blur of the alpha matte, stddev = radius pixels.
inline Image feather_alpha(const Image& alpha, double radius) {
    require(alpha.c == 1, "feather_alpha: expects single-channel alpha");
    require(radius >= 0.0, "feather_alpha: radius must be >= 0");
    if (radius == 0.0) return alpha;
    const auto k = detail::gaussian_kernel(radius);
    std::vector<double> tmp(alpha.v.size()), out(alpha.v.size());
    detail::blur_axis(alpha.v, tmp, alpha.h, alpha.w, k, false);
    detail::blur_axis(tmp, out, alpha.h, alpha.w, k, true);
    Image result(alpha.h, alpha.w, 1);
    result.v = std::move(out);
    for (double& v : result.v) v = std::min(1.0, std::max(0.0, v));
    return result;
}

inline Image extract_alpha(const Image& rgba) {
    require(rgba.c == 4, "extract_alpha: expects RGBA");
    Image a(rgba.h, rgba.w, 1);
    for (int y = 0; y < rgba.h; ++y)
        for (int x = 0; x < rgba.w; ++x) a.at(y, x, 0) = rgba.at(y, x, 3);
    return a;
}

// out = a*occ + (1-a)*base per pixel; the feathered alpha becomes the
// occlusion mask. Labels pass through untouched.
inline ImageSample composite(const ImageSample& base, const occlib::OcclusionInstance& inst,
                             const AugmentConfig& cfg) {
    require(inst.pixels.h == base.pixels.h && inst.pixels.w == base.pixels.w,
            "composite: instance canvas not resized to base shape");
    const double radius = std::max(1.0, cfg.feather_radius_frac * base.pixels.h);
    const Image a = feather_alpha(extract_alpha(inst.pixels), radius);
    ImageSample out = base;
    for (int y = 0; y < base.pixels.h; ++y)
        for (int x = 0; x < base.pixels.w; ++x) {
            const double av = a.at(y, x, 0);
            for (int ch = 0; ch < 3; ++ch)
                out.pixels.at(y, x, ch) =
                    av * inst.pixels.at(y, x, ch) + (1.0 - av) * base.pixels.at(y, x, ch);
        }
    out.occlusion_mask = a;
    out.occluded = true;
    return out;
}

// Standardize occ per channel, then rescale to the clean image's
// moments. Population (biased) std; eps guards sigma = 0.
inline Image align_distribution(const Image& occ, const Image& clean, double eps, bool clamp) {
    require(occ.same_shape(clean), "align_distribution: shape mismatch");
    require(eps > 0.0, "align_distribution: eps must be positive");
    Image out = occ;
    const std::size_t n = occ.pixels();
    require(n > 0, "align_distribution: empty image");
    for (int ch = 0; ch < occ.c; ++ch) {
        double mu_o = 0.0, mu_f = 0.0;
        for (int y = 0; y < occ.h; ++y)
            for (int x = 0; x < occ.w; ++x) {
                mu_o += occ.at(y, x, ch);
                mu_f += clean.at(y, x, ch);
            }
        mu_o /= static_cast<double>(n);
        mu_f /= static_cast<double>(n);
        double var_o = 0.0, var_f = 0.0;
        for (int y = 0; y < occ.h; ++y)
            for (int x = 0; x < occ.w; ++x) {
                const double d_o = occ.at(y, x, ch) - mu_o;
                const double d_f = clean.at(y, x, ch) - mu_f;
                var_o += d_o * d_o;
                var_f += d_f * d_f;
            }
        const double sigma_o = std::sqrt(var_o / static_cast<double>(n));
        const double sigma_f = std::sqrt(var_f / static_cast<double>(n));
        const double scale = sigma_f / (sigma_o + eps);
        for (int y = 0; y < occ.h; ++y)
            for (int x = 0; x < occ.w; ++x)
                out.at(y, x, ch) = (occ.at(y, x, ch) - mu_o) * scale + mu_f;
    }
    if (clamp) out.clamp01();
    return out;
}

// Full chain, unconditionally applied. Callers deciding per-image whether
// occlusion fires (train augmentation, eval-side occlusion) wrap this.
inline ImageSample apply_occlusion(const ImageSample& s, const occlib::LibraryManifest& lib,
                                   const AugmentConfig& cfg, Rng& rng) {
    const occlib::OcclusionInstance& inst = occlib::sample_instance(lib, rng, cfg.strong_weight);
    const occlib::OcclusionInstance resized = resize_to_target(inst, s.pixels.h, s.pixels.w);
    ImageSample out = composite(s, resized, cfg);
    out.pixels = align_distribution(out.pixels, s.pixels, cfg.align_epsilon, cfg.clamp_output);
    return out;
}

// Training-time augmentation: Bernoulli(occlusion_ratio) per image.
inline ImageSample augment_sample(const ImageSample& s, const occlib::LibraryManifest& lib,
                                  const AugmentConfig& cfg, Rng& rng) {
    cfg.check();
    require(s.split == Split::train, "augment_sample: only train samples are augmented");
    require(!s.occluded, "augment_sample: sample already occluded");
    if (rng.uniform() >= cfg.occlusion_ratio) return s;
    return apply_occlusion(s, lib, cfg, rng);
}

}  // namespace dpl::rwoa
