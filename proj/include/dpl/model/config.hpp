#pragma once

#include <string>

#include "dpl/common.hpp"

namespace dpl::model {

enum class Variant { grid, token };

inline const char* variant_name(Variant v) { return v == Variant::grid ? "grid" : "token"; }

inline Variant variant_from_name(const std::string& s) {
    if (s == "grid") return Variant::grid;
    if (s == "token") return Variant::token;
    fail("unknown encoder variant: " + s);
}

enum class TemplateKind { full, occ };

// Which prompt branches participate in training / text fusion.
enum class TemplateMode { full, occ, both };

inline const char* template_mode_name(TemplateMode m) {
    switch (m) {
        case TemplateMode::full: return "full";
        case TemplateMode::occ: return "occ";
        default: return "both";
    }
}

inline TemplateMode template_mode_from_name(const std::string& s) {
    if (s == "full") return TemplateMode::full;
    if (s == "occ") return TemplateMode::occ;
    if (s == "both") return TemplateMode::both;
    fail("unknown template mode: " + s);
}

struct ModelConfig {
    Variant variant = Variant::grid;
    int image_h = 64;
    int image_w = 32;
    int patch = 8;        // total spatial downsampling; power of two
    int channels = 24;    // intermediate feature width C
    int embed_dim = 32;   // projected embedding width D
    int text_dim = 24;    // text token width
    int tokens_m = 4;     // learnable [X] tokens
    int tokens_n = 4;     // learnable [Y] tokens
    int global_kernel = 7;
    double tau = 0.07;
    bool use_wgff = true;

    int grid_h() const { return image_h / patch; }
    int grid_w() const { return image_w / patch; }
    int num_patches() const { return grid_h() * grid_w(); }

    int conv_blocks() const {
        int p = patch, n = 0;
        while (p > 1) {
            require(p % 2 == 0, "ModelConfig: patch must be a power of two");
            p /= 2;
            ++n;
        }
        return n;
    }

    void check() const {
        require(patch >= 2, "ModelConfig: patch must be >= 2");
        require(image_h % patch == 0 && image_w % patch == 0,
                "ModelConfig: image size must be divisible by patch");
        require(channels >= 4 && embed_dim >= 4 && text_dim >= 4, "ModelConfig: widths too small");
        require(tokens_m >= 1 && tokens_n >= 1, "ModelConfig: token counts must be positive");
        require(tau > 0.0, "ModelConfig: tau must be positive");
        conv_blocks();
    }
};

}  // namespace dpl::model
