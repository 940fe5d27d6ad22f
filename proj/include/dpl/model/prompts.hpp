#pragma once

// Per-identity learnable prompt tokens. Template^full carries M [X] rows;
// Template^occ carries its own M [X] rows plus N [Y] rows. The two branches
// never share parameters.

#include <map>
#include <string>
#include <vector>

#include "dpl/model/encoders.hpp"

namespace dpl::model {

struct PromptTokens {
    Param x_full;  // [M, text_dim]
    Param x_occ;   // [M, text_dim]
    Param y_occ;   // [N, text_dim]
};

struct PromptState {
    int tokens_m = 4, tokens_n = 4, text_dim = 24;
    std::map<int, PromptTokens> per_identity;

    void init(const std::vector<int>& identities, const ModelConfig& cfg, std::uint64_t seed) {
        tokens_m = cfg.tokens_m;
        tokens_n = cfg.tokens_n;
        text_dim = cfg.text_dim;
        per_identity.clear();
        for (int id : identities) {
            Rng rng(derive_seed(seed, 0x9201u, static_cast<std::uint64_t>(id)));
            PromptTokens t;
            const std::string base = "prompt." + std::to_string(id);
            t.x_full = Param{base + ".x_full", Tensor::randn({tokens_m, text_dim}, rng, 0.02)};
            t.x_occ = Param{base + ".x_occ", Tensor::randn({tokens_m, text_dim}, rng, 0.02)};
            t.y_occ = Param{base + ".y_occ", Tensor::randn({tokens_n, text_dim}, rng, 0.02)};
            per_identity.emplace(id, std::move(t));
        }
    }

    PromptTokens& tokens_for(int id) {
        auto it = per_identity.find(id);
        if (it == per_identity.end()) fail("PromptState: unknown identity " + std::to_string(id));
        return it->second;
    }

    void set_trainable(bool on) {
        for (auto& [id, t] : per_identity) {
            t.x_full.trainable = on;
            t.x_occ.trainable = on;
            t.y_occ.trainable = on;
        }
    }

    void collect(std::vector<Param*>& out) {
        for (auto& [id, t] : per_identity) {
            out.push_back(&t.x_full);
            out.push_back(&t.x_occ);
            out.push_back(&t.y_occ);
        }
    }
};

// "A photo of a [X]_1..[X]_M person."           (full)
// "A photo of a [X]_1..[X]_M person is occluded by [Y]_1..[Y]_N."  (occ)
inline Var encode_text(Tape& tape, const TextEncoder& enc, PromptState& prompts, TemplateKind kind,
                       int identity) {
    PromptTokens& toks = prompts.tokens_for(identity);
    Var words = tape.use(const_cast<Param&>(enc.word_embed));
    Var prefix = nn::gather_rows(words, {vocab::a, vocab::photo, vocab::of, vocab::a});
    std::vector<Var> pieces;
    int len = 0;
    if (kind == TemplateKind::full) {
        pieces = {prefix, tape.use(toks.x_full), nn::gather_rows(words, {vocab::person, vocab::period})};
        len = 4 + prompts.tokens_m + 2;
    } else {
        pieces = {prefix, tape.use(toks.x_occ),
                  nn::gather_rows(words, {vocab::person, vocab::is, vocab::occluded, vocab::by}),
                  tape.use(toks.y_occ), nn::gather_rows(words, {vocab::period})};
        len = 4 + prompts.tokens_m + 4 + prompts.tokens_n + 1;
    }
    return enc.forward(tape, pieces, len);
}

}  // namespace dpl::model
