#pragma once

// The miniature encoder zoo. Three image-side backbones (3x3-conv grid
// encoder, attention-over-patches token encoder, large-kernel global
// context encoder) and the 2-block self-attention text encoder. All build
// autodiff graphs through a Tape so freezing is just a trainable flag.

#include <cmath>
#include <string>
#include <vector>

#include "dpl/image.hpp"
#include "dpl/model/config.hpp"
#include "dpl/nn/autodiff.hpp"
#include "dpl/nn/optim.hpp"

namespace dpl::model {

using nn::Param;
using nn::Tape;
using nn::Tensor;
using nn::Var;

inline Tensor to_chw(const Image& img) {
    require(img.c == 3, "to_chw: expects 3-channel image");
    Tensor t({3, img.h, img.w});
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) t.at(ch, y, x) = img.at(y, x, ch);
    return t;
}

namespace init {

inline Tensor xavier(std::vector<int> shape, int fan_in, Rng& rng) {
    return Tensor::randn(std::move(shape), rng, std::sqrt(1.0 / fan_in));
}

}  // namespace init

// ------------------------------------------------------------- conv backbone

struct ConvBlock {
    Param w, b;
    int kernel = 3, stride = 2, pad = 1;
    int in_ch = 0, out_ch = 0;

    void init(const std::string& name, int in, int out, int k, Rng& rng) {
        in_ch = in;
        out_ch = out;
        kernel = k;
        pad = k / 2;
        w = Param{name + ".w", init::xavier({out, in * k * k}, in * k * k, rng)};
        b = Param{name + ".b", Tensor::zeros({out})};
    }

    Var forward(Tape& tape, const Var& x) const {
        return nn::tanh_v(nn::conv2d(x, tape.use(const_cast<Param&>(w)),
                                     tape.use(const_cast<Param&>(b)), kernel, kernel, stride, pad));
    }
};

// Channel progression toward the final width, e.g. 24 over 3 blocks -> 8,16,24.
inline std::vector<int> channel_plan(int final_c, int blocks) {
    std::vector<int> plan(static_cast<std::size_t>(blocks));
    for (int i = 0; i < blocks; ++i)
        plan[static_cast<std::size_t>(i)] = std::max(4, final_c * (i + 1) / blocks);
    plan.back() = final_c;
    return plan;
}

struct ConvEncoder {
    std::vector<ConvBlock> blocks;
    Param proj_w, proj_b;
    int out_ch = 0;

    void init(const std::string& name, const ModelConfig& cfg, int kernel, Rng& rng) {
        const int nb = cfg.conv_blocks();
        const auto plan = channel_plan(cfg.channels, nb);
        blocks.resize(static_cast<std::size_t>(nb));
        int in = 3;
        for (int i = 0; i < nb; ++i) {
            blocks[static_cast<std::size_t>(i)].init(name + ".block" + std::to_string(i), in,
                                                     plan[static_cast<std::size_t>(i)], kernel, rng);
            in = plan[static_cast<std::size_t>(i)];
        }
        out_ch = in;
        proj_w = Param{name + ".proj_w", init::xavier({cfg.embed_dim, out_ch}, out_ch, rng)};
        proj_b = Param{name + ".proj_b", Tensor::zeros({cfg.embed_dim})};
    }

    // Returns {x4 feature [C,H',W'], projected [1,D]}.
    std::pair<Var, Var> forward(Tape& tape, const Var& img_chw) const {
        Var x = img_chw;
        for (const auto& blk : blocks) x = blk.forward(tape, x);
        Var pooled = nn::reshape(nn::spatial_mean(x), {1, out_ch});
        Var proj = nn::linear(pooled, tape.use(const_cast<Param&>(proj_w)),
                              tape.use(const_cast<Param&>(proj_b)));
        return {x, proj};
    }

    void collect(std::vector<Param*>& out) {
        for (auto& blk : blocks) {
            out.push_back(&blk.w);
            out.push_back(&blk.b);
        }
        out.push_back(&proj_w);
        out.push_back(&proj_b);
    }
};

// --------------------------------------------------------- attention blocks

struct AttnBlock {
    Param ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Param ln2_g, ln2_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    int width = 0;

    void init(const std::string& name, int d, Rng& rng) {
        width = d;
        const int h = 2 * d;
        ln1_g = Param{name + ".ln1_g", Tensor::full({d}, 1.0)};
        ln1_b = Param{name + ".ln1_b", Tensor::zeros({d})};
        wq = Param{name + ".wq", init::xavier({d, d}, d, rng)};
        bq = Param{name + ".bq", Tensor::zeros({d})};
        wk = Param{name + ".wk", init::xavier({d, d}, d, rng)};
        bk = Param{name + ".bk", Tensor::zeros({d})};
        wv = Param{name + ".wv", init::xavier({d, d}, d, rng)};
        bv = Param{name + ".bv", Tensor::zeros({d})};
        wo = Param{name + ".wo", init::xavier({d, d}, d, rng)};
        bo = Param{name + ".bo", Tensor::zeros({d})};
        ln2_g = Param{name + ".ln2_g", Tensor::full({d}, 1.0)};
        ln2_b = Param{name + ".ln2_b", Tensor::zeros({d})};
        ffn_w1 = Param{name + ".ffn_w1", init::xavier({h, d}, d, rng)};
        ffn_b1 = Param{name + ".ffn_b1", Tensor::zeros({h})};
        ffn_w2 = Param{name + ".ffn_w2", init::xavier({d, h}, h, rng)};
        ffn_b2 = Param{name + ".ffn_b2", Tensor::zeros({d})};
    }

    // Pre-norm transformer block, single head, bidirectional.
    Var forward(Tape& tape, const Var& x) const {
        auto P = [&](const Param& p) { return tape.use(const_cast<Param&>(p)); };
        Var n1 = nn::layer_norm_rows(x, P(ln1_g), P(ln1_b));
        Var q = nn::linear(n1, P(wq), P(bq));
        Var k = nn::linear(n1, P(wk), P(bk));
        Var v = nn::linear(n1, P(wv), P(bv));
        Var scores = nn::scale(nn::matmul(q, nn::transpose(k)), 1.0 / std::sqrt(double(width)));
        Var attn = nn::matmul(nn::softmax_rows(scores), v);
        Var a = nn::add(x, nn::linear(attn, P(wo), P(bo)));
        Var n2 = nn::layer_norm_rows(a, P(ln2_g), P(ln2_b));
        Var ff = nn::linear(nn::tanh_v(nn::linear(n2, P(ffn_w1), P(ffn_b1))), P(ffn_w2), P(ffn_b2));
        return nn::add(a, ff);
    }

    void collect(std::vector<Param*>& out) {
        for (Param* p : {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_g, &ln2_b,
                         &ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2})
            out.push_back(p);
    }
};

// Rearranges [3,H,W] into per-patch rows [Np, 3*p*p]; pure index shuffle.
inline Var patchify(const Var& img, int p) {
    require(img->value.ndim() == 3, "patchify: expects [C,H,W]");
    const int c = img->value.dim(0), h = img->value.dim(1), w = img->value.dim(2);
    require(h % p == 0 && w % p == 0, "patchify: image not divisible by patch");
    const int gh = h / p, gw = w / p;
    Tensor out({gh * gw, c * p * p});
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            const int row = gy * gw + gx;
            int col = 0;
            for (int ch = 0; ch < c; ++ch)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        out.at(row, col++) = img->value.at(ch, gy * p + dy, gx * p + dx);
        }
    return nn::make_op(std::move(out), {img}, [c, p, gh, gw](nn::Node& nd) {
        nn::Node& in = *nd.inputs[0];
        in.ensure_grad();
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                const int row = gy * gw + gx;
                int col = 0;
                for (int ch = 0; ch < c; ++ch)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx)
                            in.grad.at(ch, gy * p + dy, gx * p + dx) += nd.grad.at(row, col++);
            }
    });
}

// ---------------------------------------------------------- token encoder

struct TokenEncoder {
    Param embed_w, embed_b, cls, pos;
    std::vector<AttnBlock> blocks;
    Param proj_w, proj_b;
    int patch = 8, width = 0;

    void init(const std::string& name, const ModelConfig& cfg, Rng& rng) {
        patch = cfg.patch;
        width = cfg.channels;
        const int pdim = 3 * patch * patch;
        embed_w = Param{name + ".embed_w", init::xavier({width, pdim}, pdim, rng)};
        embed_b = Param{name + ".embed_b", Tensor::zeros({width})};
        cls = Param{name + ".cls", Tensor::randn({1, width}, rng, 0.02)};
        pos = Param{name + ".pos", Tensor::randn({1 + cfg.num_patches(), width}, rng, 0.02)};
        blocks.resize(2);
        blocks[0].init(name + ".attn0", width, rng);
        blocks[1].init(name + ".attn1", width, rng);
        proj_w = Param{name + ".proj_w", init::xavier({cfg.embed_dim, width}, width, rng)};
        proj_b = Param{name + ".proj_b", Tensor::zeros({cfg.embed_dim})};
    }

    // Returns {token sequence [1+Np, C] (class token first), projected [1,D]}.
    std::pair<Var, Var> forward(Tape& tape, const Var& img_chw) const {
        auto P = [&](const Param& p) { return tape.use(const_cast<Param&>(p)); };
        Var tok = nn::linear(patchify(img_chw, patch), P(embed_w), P(embed_b));
        Var seq = nn::concat_rows({P(cls), tok});
        seq = nn::add(seq, P(pos));
        for (const auto& blk : blocks) seq = blk.forward(tape, seq);
        Var cls_out = nn::slice_rows(seq, 0, 1);
        Var proj = nn::linear(cls_out, P(proj_w), P(proj_b));
        return {seq, proj};
    }

    void collect(std::vector<Param*>& out) {
        for (Param* p : {&embed_w, &embed_b, &cls, &pos}) out.push_back(p);
        for (auto& blk : blocks) blk.collect(out);
        out.push_back(&proj_w);
        out.push_back(&proj_b);
    }
};

// ------------------------------------------------------------- text encoder

// Scaffold vocabulary for the two prompt templates.
namespace vocab {
constexpr int a = 0, photo = 1, of = 2, person = 3, is = 4, occluded = 5, by = 6, period = 7;
constexpr int size = 8;
}  // namespace vocab

struct TextEncoder {
    Param word_embed, pos;
    std::vector<AttnBlock> blocks;
    Param proj_w, proj_b;
    int width = 0;
    int max_len = 0;

    void init(const std::string& name, const ModelConfig& cfg, Rng& rng) {
        width = cfg.text_dim;
        max_len = 9 + cfg.tokens_m + cfg.tokens_n;
        word_embed = Param{name + ".word_embed", Tensor::randn({vocab::size, width}, rng, 0.02)};
        pos = Param{name + ".pos", Tensor::randn({max_len, width}, rng, 0.02)};
        blocks.resize(2);
        blocks[0].init(name + ".attn0", width, rng);
        blocks[1].init(name + ".attn1", width, rng);
        proj_w = Param{name + ".proj_w", init::xavier({cfg.embed_dim, width}, width, rng)};
        proj_b = Param{name + ".proj_b", Tensor::zeros({cfg.embed_dim})};
        // The text encoder is frozen for the model's whole life; only the
        // prompt token rows fed into it ever train.
        std::vector<Param*> ps;
        collect(ps);
        for (Param* p : ps) p->trainable = false;
    }

    // Runs the scaffold + learnable rows through the frozen stack; mean-pools
    // and projects to the shared embedding width. Gradients reach only the
    // learnable token rows (everything else binds as non-trainable).
    Var forward(Tape& tape, const std::vector<Var>& pieces, int seq_len) const {
        auto P = [&](const Param& p) { return tape.use(const_cast<Param&>(p)); };
        Var seq = nn::concat_rows(pieces);
        require(seq->value.dim(0) == seq_len, "TextEncoder: sequence length mismatch");
        require(seq_len <= max_len, "TextEncoder: sequence longer than positional table");
        seq = nn::add(seq, nn::slice_rows(P(pos), 0, seq_len));
        for (const auto& blk : blocks) seq = blk.forward(tape, seq);
        return nn::linear(nn::mean_over_rows(seq), P(proj_w), P(proj_b));
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&word_embed);
        out.push_back(&pos);
        for (auto& blk : blocks) blk.collect(out);
        out.push_back(&proj_w);
        out.push_back(&proj_b);
    }
};

}  // namespace dpl::model
