#pragma once

// The assembled dual-encoder model: a CLIP-stand-in image branch (grid or
// token variant), the large-kernel global-context branch, the frozen text
// encoder, WGFF fusion parameters and the stage-2 identity head.
//
// Fusion selection is tied to the variant: grid features use the sigmoid
// gate, token features use the convex beta blend. Never mixed.

#include <string>
#include <vector>

#include "dpl/model/checkpoint.hpp"
#include "dpl/model/config.hpp"
#include "dpl/model/encoders.hpp"
#include "dpl/model/fusion.hpp"
#include "dpl/model/prompts.hpp"

namespace dpl::model {

// Inference-level view of an encoder pass.
struct EncoderOutput {
    Tensor intermediate;  // grid: [C,H',W']; token: [1+Np, C]
    Tensor projected;     // [D]
};

// Graph-level outputs of the fused forward pass.
struct FusedVars {
    Var x4;      // fused intermediate feature
    Var f_v;     // [1,D] fused embedding (retrieval feature)
    Var pooled;  // [1,C] feature feeding the identity head
};

struct ReidModel {
    ModelConfig cfg;
    ConvEncoder grid;          // active for Variant::grid
    TokenEncoder token;        // active for Variant::token
    ConvEncoder global_branch; // large-kernel global-context branch
    TextEncoder text;
    FusionParams fusion;
    Param head_w, head_b;  // identity classifier, sized by init_head
    int num_classes = 0;

    static ReidModel create(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.check();
        ReidModel m;
        m.cfg = cfg;
        Rng rng_img(derive_seed(seed, 0x111u));
        if (cfg.variant == Variant::grid)
            m.grid.init("img", cfg, 3, rng_img);
        else
            m.token.init("img", cfg, rng_img);
        Rng rng_glob(derive_seed(seed, 0x222u));
        m.global_branch.init("glob", cfg, cfg.global_kernel, rng_glob);
        Rng rng_text(derive_seed(seed, 0x333u));
        m.text.init("text", cfg, rng_text);
        m.fusion.alpha_raw.value = Tensor::scalar(0.0);
        m.fusion.beta_raw.value = Tensor::scalar(0.0);
        return m;
    }

    void init_head(int classes, std::uint64_t seed) {
        require(classes >= 2, "init_head: need at least 2 classes");
        num_classes = classes;
        Rng rng(derive_seed(seed, 0x444u));
        head_w = Param{"head.w", init::xavier({classes, cfg.channels}, cfg.channels, rng)};
        head_b = Param{"head.b", Tensor::zeros({classes})};
    }

    // ------------------------------------------------------------- forwards

    std::pair<Var, Var> encode_image_g(Tape& tape, const Var& img_chw) const {
        return cfg.variant == Variant::grid ? grid.forward(tape, img_chw)
                                            : token.forward(tape, img_chw);
    }

    std::pair<Var, Var> encode_global_g(Tape& tape, const Var& img_chw) const {
        return global_branch.forward(tape, img_chw);
    }

    // Global x4 map reshaped for the token variant: flattened cells become
    // tokens and the spatial mean stands in for the class token.
    Var global_as_tokens(const Var& ls_x4) const {
        const int c = ls_x4->value.dim(0);
        const int cells = ls_x4->value.dim(1) * ls_x4->value.dim(2);
        Var flat = nn::transpose(nn::reshape(ls_x4, {c, cells}));
        Var mean_tok = nn::reshape(nn::spatial_mean(ls_x4), {1, c});
        return nn::concat_rows({mean_tok, flat});
    }

    FusedVars forward_fused(Tape& tape, const Var& img_chw) const {
        auto [clip_x4, clip_proj] = encode_image_g(tape, img_chw);
        if (!cfg.use_wgff) {
            Var pooled = cfg.variant == Variant::grid
                             ? nn::reshape(nn::spatial_mean(clip_x4), {1, cfg.channels})
                             : nn::slice_rows(clip_x4, 0, 1);
            return {clip_x4, clip_proj, pooled};
        }
        auto [ls_x4, ls_proj] = encode_global_g(tape, img_chw);
        FusedVars out;
        if (cfg.variant == Variant::grid) {
            out.x4 = gated_fuse(clip_x4, ls_x4);
            out.f_v = gated_fuse(clip_proj, ls_proj);
            out.pooled = nn::reshape(nn::spatial_mean(out.x4), {1, cfg.channels});
        } else {
            Var beta = tape.use(const_cast<Param&>(fusion.beta_raw));
            Var beta_sq = nn::sigmoid_v(beta);
            out.x4 = weighted_fuse(clip_x4, global_as_tokens(ls_x4), beta_sq);
            out.f_v = weighted_fuse(clip_proj, ls_proj, beta_sq);
            out.pooled = nn::slice_rows(out.x4, 0, 1);
        }
        return out;
    }

    Var head_logits(Tape& tape, const Var& pooled_rows) const {
        require(num_classes >= 2, "head_logits: identity head not initialized");
        return nn::linear(pooled_rows, tape.use(const_cast<Param&>(head_w)),
                          tape.use(const_cast<Param&>(head_b)));
    }

    // Inference wrappers.
    EncoderOutput encode_image(const Image& img) const {
        check_input(img);
        Tape tape;
        auto [x4, proj] = encode_image_g(tape, nn::constant(to_chw(img)));
        return {x4->value, Tensor({cfg.embed_dim}, proj->value.data)};
    }

    EncoderOutput encode_global(const Image& img) const {
        check_input(img);
        Tape tape;
        auto [x4, proj] = encode_global_g(tape, nn::constant(to_chw(img)));
        return {x4->value, Tensor({cfg.embed_dim}, proj->value.data)};
    }

    // Fused retrieval embedding [D] plus the fused x4 map.
    EncoderOutput embed(const Image& img) const {
        check_input(img);
        Tape tape;
        FusedVars f = forward_fused(tape, nn::constant(to_chw(img)));
        return {f.x4->value, Tensor({cfg.embed_dim}, f.f_v->value.data)};
    }

    void check_input(const Image& img) const {
        require(img.h == cfg.image_h && img.w == cfg.image_w && img.c == 3,
                "ReidModel: input image shape mismatch (got " + std::to_string(img.h) + "x" +
                    std::to_string(img.w) + "x" + std::to_string(img.c) + ")");
    }

    // ------------------------------------------------------------ parameters

    std::vector<Param*> image_params() {
        std::vector<Param*> out;
        if (cfg.variant == Variant::grid)
            grid.collect(out);
        else
            token.collect(out);
        return out;
    }

    std::vector<Param*> global_params() {
        std::vector<Param*> out;
        global_branch.collect(out);
        return out;
    }

    std::vector<Param*> text_params() {
        std::vector<Param*> out;
        text.collect(out);
        return out;
    }

    std::vector<Param*> head_params() {
        std::vector<Param*> out;
        if (num_classes >= 2) {
            out.push_back(&head_w);
            out.push_back(&head_b);
        }
        return out;
    }

    std::vector<Param*> fusion_params() {
        std::vector<Param*> out;
        fusion.collect(out);
        return out;
    }

    std::vector<Param*> all_params() {
        std::vector<Param*> out = image_params();
        for (Param* p : global_params()) out.push_back(p);
        for (Param* p : text_params()) out.push_back(p);
        for (Param* p : fusion_params()) out.push_back(p);
        for (Param* p : head_params()) out.push_back(p);
        return out;
    }

    void set_trainable(std::vector<Param*> params, bool on) {
        for (Param* p : params) p->trainable = on;
    }

    // ------------------------------------------------------------ checkpoint

    void write_tensors(Checkpoint& ck) {
        for (Param* p : all_params()) ck.tensors[p->name] = p->value;
    }

    void read_tensors(const Checkpoint& ck) {
        for (Param* p : all_params()) {
            auto it = ck.tensors.find(p->name);
            if (it == ck.tensors.end()) fail("checkpoint missing tensor " + p->name);
            require(it->second.shape == p->value.shape,
                    "checkpoint tensor shape mismatch for " + p->name);
            p->value = it->second;
        }
    }
};

}  // namespace dpl::model
