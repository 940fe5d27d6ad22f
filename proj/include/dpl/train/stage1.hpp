#pragma once

// Stage 1: dual prompt learning. Encoders are frozen; the bidirectional
// contrastive pair trains [X]^full on clean images and ([X]^occ, [Y]^occ)
// on freshly occluded copies of the same batch. The two branches share no
// parameters, so their gradients never mix.

#include <map>
#include <string>
#include <vector>

#include "dpl/model/model.hpp"
#include "dpl/nn/optim.hpp"
#include "dpl/rwoa/augment.hpp"
#include "dpl/synth/dataset.hpp"
#include "dpl/train/losses.hpp"
#include "dpl/train/warmup.hpp"

namespace dpl::train {

struct Stage1Config {
    int batch_size = 16;
    int epochs = 30;
    double lr = 5e-3;  // cosine-decayed
    std::uint64_t seed = 1;
    model::TemplateMode templates = model::TemplateMode::both;
    rwoa::AugmentConfig augment;  // occ branch forces ratio 1
    WarmupConfig warmup;

    void check() const {
        require(batch_size >= 2, "Stage1Config: batch_size must be >= 2");
        require(lr > 0.0, "Stage1Config: lr must be positive");
        require(epochs >= 0, "Stage1Config: epochs must be >= 0");
    }
};

struct Stage1Terms {
    double i2t_full = 0.0, t2i_full = 0.0, i2t_occ = 0.0, t2i_occ = 0.0, total = 0.0;
};

struct Stage1Graph {
    nn::Tape tape;
    nn::Var total;
    Stage1Terms terms;
};

inline void assert_encoders_frozen(model::ReidModel& m) {
    for (model::Param* p : m.image_params())
        require(!p->trainable, "stage1: non-frozen encoder detected (" + p->name + ")");
    for (model::Param* p : m.global_params())
        require(!p->trainable, "stage1: non-frozen encoder detected (" + p->name + ")");
    for (model::Param* p : m.text_params())
        require(!p->trainable, "stage1: non-frozen encoder detected (" + p->name + ")");
}

// Builds the stage-1 objective graph for one batch. fv_full / fv_occ are frozen image
// features (constants); text features are encoded once per distinct id.
inline Stage1Graph build_stage1_graph(model::ReidModel& m, model::PromptState& prompts,
                                      const nn::Tensor& fv_full, const nn::Tensor& fv_occ,
                                      const std::vector<int>& labels, model::TemplateMode mode) {
    Stage1Graph g;
    const double tau = m.cfg.tau;
    const bool with_full = mode != model::TemplateMode::occ;
    const bool with_occ = mode != model::TemplateMode::full;

    auto text_rows = [&](model::TemplateKind kind) {
        std::map<int, nn::Var> cache;
        std::vector<nn::Var> rows;
        for (int y : labels) {
            auto it = cache.find(y);
            if (it == cache.end()) {
                nn::Var t = model::encode_text(g.tape, m.text, prompts, kind, y);
                it = cache.emplace(y, nn::reshape(t, {m.cfg.embed_dim})).first;
            }
            rows.push_back(it->second);
        }
        return nn::stack_rows(rows);
    };

    std::vector<nn::Var> parts;
    if (with_full) {
        nn::Var fv = nn::constant(fv_full);
        nn::Var ft = text_rows(model::TemplateKind::full);
        nn::Var a = loss_i2t_g(fv, ft, tau);
        nn::Var b = loss_t2i_g(fv, ft, labels, tau);
        g.terms.i2t_full = a->value.at(0);
        g.terms.t2i_full = b->value.at(0);
        parts.push_back(nn::add(a, b));
    }
    if (with_occ) {
        nn::Var fv = nn::constant(fv_occ);
        nn::Var ft = text_rows(model::TemplateKind::occ);
        nn::Var a = loss_i2t_g(fv, ft, tau);
        nn::Var b = loss_t2i_g(fv, ft, labels, tau);
        g.terms.i2t_occ = a->value.at(0);
        g.terms.t2i_occ = b->value.at(0);
        parts.push_back(nn::add(a, b));
    }
    g.total = parts.size() == 2 ? nn::add(parts[0], parts[1]) : parts[0];
    g.terms.total = g.total->value.at(0);
    return g;
}

// One optimization step; gradients flow into PromptState only.
inline Stage1Terms stage1_step(model::ReidModel& m, model::PromptState& prompts,
                               const nn::Tensor& fv_full, const nn::Tensor& fv_occ,
                               const std::vector<int>& labels, model::TemplateMode mode,
                               double lr) {
    assert_encoders_frozen(m);
    Stage1Graph g = build_stage1_graph(m, prompts, fv_full, fv_occ, labels, mode);
    nn::backward(g.total);
    nn::adam_step(g.tape, {.lr = lr});
    return g.terms;
}

struct Stage1Result {
    model::Checkpoint checkpoint;
    std::vector<Stage1Terms> epoch_log;
};

inline nlohmann::json model_config_to_json(const model::ModelConfig& cfg) {
    return {{"variant", model::variant_name(cfg.variant)},
            {"image_h", cfg.image_h},
            {"image_w", cfg.image_w},
            {"patch", cfg.patch},
            {"channels", cfg.channels},
            {"D", cfg.embed_dim},
            {"text_dim", cfg.text_dim},
            {"M", cfg.tokens_m},
            {"N", cfg.tokens_n},
            {"global_kernel", cfg.global_kernel},
            {"tau", cfg.tau}};
}

inline model::ModelConfig model_config_from_json(const nlohmann::json& j) {
    model::ModelConfig cfg;
    cfg.variant = model::variant_from_name(j.at("variant").get<std::string>());
    cfg.image_h = j.at("image_h").get<int>();
    cfg.image_w = j.at("image_w").get<int>();
    cfg.patch = j.at("patch").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.embed_dim = j.at("D").get<int>();
    cfg.text_dim = j.at("text_dim").get<int>();
    cfg.tokens_m = j.at("M").get<int>();
    cfg.tokens_n = j.at("N").get<int>();
    cfg.global_kernel = j.at("global_kernel").get<int>();
    cfg.tau = j.at("tau").get<double>();
    return cfg;
}

// Frozen clean-image features, row per sample.
inline nn::Tensor encode_features(const model::ReidModel& m, const std::vector<ImageSample>& samples) {
    nn::Tensor out({static_cast<int>(samples.size()), m.cfg.embed_dim});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto e = m.encode_image(samples[i].pixels);
        for (int j = 0; j < m.cfg.embed_dim; ++j) out.at(static_cast<int>(i), j) = e.projected.at(j);
    }
    return out;
}

inline Stage1Result run_stage1(const Stage1Config& cfg, const model::ModelConfig& mcfg,
                               const synth::Dataset& ds, const occlib::LibraryManifest& lib) {
    cfg.check();
    require(!ds.train.empty(), "run_stage1: dataset has no train split");
    const std::vector<int> ids = ds.train_ids();
    require(ids.size() >= 2, "run_stage1: need at least 2 train identities");

    model::ReidModel m = model::ReidModel::create(mcfg, cfg.seed);
    WarmupConfig wcfg = cfg.warmup;
    wcfg.seed = derive_seed(cfg.seed, 0x0a11u);
    warmup_image_encoder(m, ds.train, wcfg, &lib, &cfg.augment);
    m.set_trainable(m.image_params(), false);
    m.set_trainable(m.global_params(), false);

    model::PromptState prompts;
    prompts.init(ids, mcfg, derive_seed(cfg.seed, 0x9096u));
    prompts.set_trainable(true);

    // Weight snapshot guard: frozen weights must be bit-identical afterwards.
    std::vector<double> snapshot;
    for (model::Param* p : m.image_params())
        snapshot.insert(snapshot.end(), p->value.data.begin(), p->value.data.end());
    for (model::Param* p : m.text_params())
        snapshot.insert(snapshot.end(), p->value.data.begin(), p->value.data.end());

    const nn::Tensor clean_feats = encode_features(m, ds.train);
    std::vector<int> labels_all;
    for (const auto& s : ds.train) labels_all.push_back(s.person_id);

    rwoa::AugmentConfig occ_cfg = cfg.augment;
    occ_cfg.occlusion_ratio = 1.0;  // the occ branch always occludes

    Stage1Result result;
    std::vector<int> order(ds.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(derive_seed(cfg.seed, 0x50f1u));

    const bool use_occ_branch = cfg.templates != model::TemplateMode::full;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fresh occluders every epoch; skipped entirely when only the
        // full-body template trains.
        nn::Tensor occ_feats = clean_feats;
        if (use_occ_branch) {
            std::vector<ImageSample> occ_samples;
            occ_samples.reserve(ds.train.size());
            for (std::size_t i = 0; i < ds.train.size(); ++i) {
                Rng rng(derive_seed(cfg.seed, 0xacc0u + static_cast<std::uint64_t>(epoch),
                                    static_cast<std::uint64_t>(i)));
                occ_samples.push_back(rwoa::apply_occlusion(ds.train[i], lib, occ_cfg, rng));
            }
            occ_feats = encode_features(m, occ_samples);
        }

        shuffle_rng.shuffle(order);
        const double lr = nn::cosine_lr(cfg.lr, epoch, cfg.epochs);
        Stage1Terms accum;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            if (end - start < 2) continue;
            const int b = static_cast<int>(end - start);
            nn::Tensor fv_full({b, mcfg.embed_dim}), fv_occ({b, mcfg.embed_dim});
            std::vector<int> labels;
            for (int i = 0; i < b; ++i) {
                const int src = order[start + static_cast<std::size_t>(i)];
                for (int j = 0; j < mcfg.embed_dim; ++j) {
                    fv_full.at(i, j) = clean_feats.at(src, j);
                    fv_occ.at(i, j) = occ_feats.at(src, j);
                }
                labels.push_back(labels_all[static_cast<std::size_t>(src)]);
            }
            Stage1Terms t = stage1_step(m, prompts, fv_full, fv_occ, labels, cfg.templates, lr);
            accum.i2t_full += t.i2t_full;
            accum.t2i_full += t.t2i_full;
            accum.i2t_occ += t.i2t_occ;
            accum.t2i_occ += t.t2i_occ;
            accum.total += t.total;
            ++steps;
        }
        if (steps > 0) {
            accum.i2t_full /= steps;
            accum.t2i_full /= steps;
            accum.i2t_occ /= steps;
            accum.t2i_occ /= steps;
            accum.total /= steps;
        }
        result.epoch_log.push_back(accum);
    }

    // Frozen-weight guard.
    std::size_t pos = 0;
    for (model::Param* p : m.image_params())
        for (double v : p->value.data)
            require(v == snapshot[pos++], "run_stage1: frozen image encoder changed");
    for (model::Param* p : m.text_params())
        for (double v : p->value.data)
            require(v == snapshot[pos++], "run_stage1: frozen text encoder changed");

    // Checkpoint: weights, prompts, and per-identity cached text features.
    model::Checkpoint ck;
    ck.header = {{"kind", "stage1"},
                 {"model", model_config_to_json(mcfg)},
                 {"seed", cfg.seed},
                 {"epochs", cfg.epochs},
                 {"batch_size", cfg.batch_size},
                 {"lr", cfg.lr},
                 {"templates", model::template_mode_name(cfg.templates)},
                 {"train_ids", ids}};
    m.write_tensors(ck);
    std::vector<model::Param*> prompt_params;
    prompts.collect(prompt_params);
    for (model::Param* p : prompt_params) ck.tensors[p->name] = p->value;
    for (int id : ids) {
        nn::Tape tape;
        nn::Var tf = model::encode_text(tape, m.text, prompts, model::TemplateKind::full, id);
        nn::Var to = model::encode_text(tape, m.text, prompts, model::TemplateKind::occ, id);
        ck.tensors["feat.full." + std::to_string(id)] =
            nn::Tensor({mcfg.embed_dim}, tf->value.data);
        ck.tensors["feat.occ." + std::to_string(id)] =
            nn::Tensor({mcfg.embed_dim}, to->value.data);
    }
    result.checkpoint = std::move(ck);
    return result;
}

}  // namespace dpl::train
