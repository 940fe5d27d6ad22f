#pragma once

// Stage 2: with prompts and text encoder frozen, fuse the two cached text
// features per identity through learnable alpha, attach the global-context
// branch via WGFF, and train the image branch, fusion parameters and the
// identity head under ID + triplet + image-to-text cross-entropy losses
// over PK-sampled batches.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dpl/model/model.hpp"
#include "dpl/nn/optim.hpp"
#include "dpl/rwoa/augment.hpp"
#include "dpl/synth/dataset.hpp"
#include "dpl/train/losses.hpp"
#include "dpl/train/stage1.hpp"

namespace dpl::train {

struct Stage2Config {
    int p = 8;  // identities per batch
    int k = 4;  // samples per identity
    int epochs = 20;
    double lr = 2e-3;
    double warmup_from = 2e-5;
    int warmup_epochs = 5;
    std::vector<int> decay_epochs = {12, 17};  // x0.1 at each
    double margin = 0.3;
    double label_smoothing = 0.1;
    rwoa::AugmentConfig augment;  // ratio defaults to 0.5
    bool traditional_augment = true;
    bool use_wgff = true;
    model::TemplateMode templates = model::TemplateMode::both;
    std::uint64_t seed = 1;

    void check() const {
        require(p >= 2 && k >= 2, "Stage2Config: P and K must be >= 2");
        require(margin >= 0.0, "Stage2Config: margin must be >= 0");
        require(label_smoothing >= 0.0 && label_smoothing < 1.0,
                "Stage2Config: label smoothing out of [0,1)");
        require(lr > 0.0 && epochs >= 0, "Stage2Config: bad schedule");
    }
};

// Cached per-class text features from the Stage-1 checkpoint.
struct TextBank {
    std::vector<nn::Tensor> full, occ;  // indexed by class
    model::TemplateMode mode = model::TemplateMode::both;

    int classes() const {
        return static_cast<int>(mode == model::TemplateMode::occ ? occ.size() : full.size());
    }

    // Bank rows as a graph node; alpha participates only in `both` mode.
    nn::Var rows_g(nn::Tape& tape, model::FusionParams& fusion) const {
        const int n = classes();
        require(n >= 2, "TextBank: need at least 2 identities");
        if (mode == model::TemplateMode::full || mode == model::TemplateMode::occ) {
            const auto& src = mode == model::TemplateMode::full ? full : occ;
            const int d = static_cast<int>(src[0].numel());
            nn::Tensor bank({n, d});
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) bank.at(i, j) = src[static_cast<std::size_t>(i)].at(j);
            return nn::constant(std::move(bank));
        }
        nn::Var alpha = nn::sigmoid_v(tape.use(fusion.alpha_raw));
        nn::Var one_minus = nn::sub(nn::constant(nn::Tensor::scalar(1.0)), alpha);
        std::vector<nn::Var> rows;
        rows.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            nn::Var f = nn::constant(full[static_cast<std::size_t>(i)]);
            nn::Var o = nn::constant(occ[static_cast<std::size_t>(i)]);
            rows.push_back(nn::add(nn::scalar_mul(alpha, f), nn::scalar_mul(one_minus, o)));
        }
        return nn::stack_rows(rows);
    }
};

// PK sampling: P distinct identities, K samples each; identities short on
// images sample with replacement. Returns indices into `train`.
inline std::vector<int> pk_sample(const std::vector<ImageSample>& train, int p, int k, Rng& rng) {
    std::map<int, std::vector<int>> by_id;
    for (std::size_t i = 0; i < train.size(); ++i)
        by_id[train[i].person_id].push_back(static_cast<int>(i));
    require(static_cast<int>(by_id.size()) >= p,
            "pk_sample: fewer than P identities (" + std::to_string(by_id.size()) + " < " +
                std::to_string(p) + ")");
    std::vector<int> ids;
    for (const auto& [id, v] : by_id) ids.push_back(id);
    rng.shuffle(ids);
    ids.resize(static_cast<std::size_t>(p));
    std::vector<int> batch;
    for (int id : ids) {
        const auto& pool = by_id[id];
        if (static_cast<int>(pool.size()) >= k) {
            std::vector<int> idx = pool;
            rng.shuffle(idx);
            for (int i = 0; i < k; ++i) batch.push_back(idx[static_cast<std::size_t>(i)]);
        } else {
            for (int i = 0; i < k; ++i)
                batch.push_back(pool[rng.bounded(pool.size())]);
        }
    }
    return batch;
}

// Flip / pad-crop / random-erase, the conventional stage-2 augmentations.
inline Image traditional_augment(const Image& img, Rng& rng) {
    Image out = img;
    if (rng.uniform() < 0.5) out = flip_horizontal(out);
    {
        const int pad = 4;
        const int dy = static_cast<int>(rng.bounded(2 * pad + 1));
        const int dx = static_cast<int>(rng.bounded(2 * pad + 1));
        Image shifted(out.h, out.w, out.c);
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                int sy = std::clamp(y + dy - pad, 0, out.h - 1);  // replicate padding
                int sx = std::clamp(x + dx - pad, 0, out.w - 1);
                for (int ch = 0; ch < out.c; ++ch) shifted.at(y, x, ch) = out.at(sy, sx, ch);
            }
        out = std::move(shifted);
    }
    if (rng.uniform() < 0.5) {
        const double area = rng.uniform(0.02, 0.2) * out.h * out.w;
        const double aspect = rng.uniform(0.3, 3.3);
        int eh = std::max(1, std::min(out.h, static_cast<int>(std::sqrt(area * aspect))));
        int ew = std::max(1, std::min(out.w, static_cast<int>(std::sqrt(area / aspect))));
        const int y0 = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(out.h - eh + 1)));
        const int x0 = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(out.w - ew + 1)));
        for (int y = y0; y < y0 + eh; ++y)
            for (int x = x0; x < x0 + ew; ++x)
                for (int ch = 0; ch < out.c; ++ch) out.at(y, x, ch) = rng.uniform();
    }
    return out;
}

struct Stage2Terms {
    double id = 0.0, tri = 0.0, i2tce = 0.0, total = 0.0;
    double alpha = 0.5, beta = 0.5;
};

struct Stage2Graph {
    nn::Tape tape;
    nn::Var id, tri, i2tce, total;
    Stage2Terms terms;
};

// Builds the stage-2 objective graph for an already-augmented batch.
inline Stage2Graph build_stage2_graph(model::ReidModel& m, const std::vector<Image>& images,
                                      const std::vector<int>& class_labels, const TextBank& bank,
                                      const Stage2Config& cfg) {
    require(!images.empty() && images.size() == class_labels.size(),
            "stage2: batch/label size mismatch");
    Stage2Graph g;
    std::vector<nn::Var> f_v_rows, pooled_rows;
    for (const auto& img : images) {
        model::FusedVars f = m.forward_fused(g.tape, nn::constant(model::to_chw(img)));
        f_v_rows.push_back(nn::reshape(f.f_v, {m.cfg.embed_dim}));
        pooled_rows.push_back(nn::reshape(f.pooled, {m.cfg.channels}));
    }
    nn::Var fv = nn::stack_rows(f_v_rows);
    nn::Var pooled = nn::stack_rows(pooled_rows);
    nn::Var logits = m.head_logits(g.tape, pooled);
    g.id = loss_smoothed_ce_g(logits, class_labels, cfg.label_smoothing);
    g.tri = loss_triplet_g(fv, class_labels, cfg.margin);
    nn::Var bank_rows = bank.rows_g(g.tape, m.fusion);
    g.i2tce = loss_i2tce_g(fv, bank_rows, class_labels, cfg.label_smoothing, m.cfg.tau);
    g.total = nn::add(nn::add(g.id, g.tri), g.i2tce);
    g.terms.id = g.id->value.at(0);
    g.terms.tri = g.tri->value.at(0);
    g.terms.i2tce = g.i2tce->value.at(0);
    g.terms.total = g.total->value.at(0);
    return g;
}

inline Stage2Terms stage2_step(model::ReidModel& m, const std::vector<Image>& images,
                               const std::vector<int>& class_labels, const TextBank& bank,
                               const Stage2Config& cfg, double lr) {
    Stage2Graph g = build_stage2_graph(m, images, class_labels, bank, cfg);
    nn::backward(g.total);
    nn::adam_step(g.tape, {.lr = lr});
    g.terms.alpha = m.fusion.alpha();
    g.terms.beta = m.fusion.beta();
    require(g.terms.alpha > 0.0 && g.terms.alpha < 1.0, "stage2: alpha left (0,1)");
    require(g.terms.beta > 0.0 && g.terms.beta < 1.0, "stage2: beta left (0,1)");
    return g.terms;
}

struct Stage2Result {
    model::Checkpoint checkpoint;
    std::vector<Stage2Terms> epoch_log;
};

inline TextBank load_text_bank(const model::Checkpoint& stage1, const std::vector<int>& ids,
                               model::TemplateMode mode) {
    TextBank bank;
    bank.mode = mode;
    for (int id : ids) {
        const auto f = stage1.tensors.find("feat.full." + std::to_string(id));
        const auto o = stage1.tensors.find("feat.occ." + std::to_string(id));
        require(f != stage1.tensors.end() && o != stage1.tensors.end(),
                "stage2: stage-1 checkpoint lacks cached text features for id " +
                    std::to_string(id));
        bank.full.push_back(f->second);
        bank.occ.push_back(o->second);
    }
    return bank;
}

inline Stage2Result run_stage2(const Stage2Config& cfg, const synth::Dataset& ds,
                               const occlib::LibraryManifest& lib,
                               const model::Checkpoint& stage1_ckpt) {
    cfg.check();
    require(stage1_ckpt.header.value("kind", "") == "stage1",
            "run_stage2: expected a stage-1 checkpoint");
    model::ModelConfig mcfg = model_config_from_json(stage1_ckpt.header.at("model"));
    mcfg.use_wgff = cfg.use_wgff;

    const std::vector<int> ids = stage1_ckpt.header.at("train_ids").get<std::vector<int>>();
    const auto cls = class_index_map(ids);

    model::ReidModel m = model::ReidModel::create(mcfg, cfg.seed);
    m.init_head(static_cast<int>(ids.size()), cfg.seed);
    // Overwrite encoder weights with the stage-1 state (head and fusion stay fresh).
    for (model::Param* p : m.image_params()) {
        auto it = stage1_ckpt.tensors.find(p->name);
        require(it != stage1_ckpt.tensors.end(), "run_stage2: checkpoint missing " + p->name);
        p->value = it->second;
    }
    for (model::Param* p : m.global_params()) {
        auto it = stage1_ckpt.tensors.find(p->name);
        require(it != stage1_ckpt.tensors.end(), "run_stage2: checkpoint missing " + p->name);
        p->value = it->second;
    }
    for (model::Param* p : m.text_params()) {
        auto it = stage1_ckpt.tensors.find(p->name);
        require(it != stage1_ckpt.tensors.end(), "run_stage2: checkpoint missing " + p->name);
        p->value = it->second;
    }

    m.set_trainable(m.image_params(), true);
    m.set_trainable(m.global_params(), true);

    TextBank bank = load_text_bank(stage1_ckpt, ids, cfg.templates);

    std::vector<int> class_of(ds.train.size());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        auto it = cls.find(ds.train[i].person_id);
        require(it != cls.end(), "run_stage2: train sample id not in stage-1 identity set");
        class_of[i] = it->second;
    }

    const int steps_per_epoch =
        std::max(1, static_cast<int>((ds.train.size() + cfg.p * cfg.k - 1) / (cfg.p * cfg.k)));

    Stage2Result result;
    Rng sample_rng(derive_seed(cfg.seed, 0x2b47u));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr =
            nn::warmup_step_lr(cfg.lr, cfg.warmup_from, epoch, cfg.warmup_epochs, cfg.decay_epochs);
        Stage2Terms accum;
        for (int step = 0; step < steps_per_epoch; ++step) {
            const std::vector<int> batch_idx = pk_sample(ds.train, cfg.p, cfg.k, sample_rng);
            std::vector<Image> images;
            std::vector<int> labels;
            for (std::size_t bi = 0; bi < batch_idx.size(); ++bi) {
                const ImageSample& s = ds.train[static_cast<std::size_t>(batch_idx[bi])];
                Rng rng(derive_seed(cfg.seed,
                                    0xa0e0u + static_cast<std::uint64_t>(epoch * steps_per_epoch + step),
                                    static_cast<std::uint64_t>(bi)));
                ImageSample aug = rwoa::augment_sample(s, lib, cfg.augment, rng);
                Image img = cfg.traditional_augment ? traditional_augment(aug.pixels, rng)
                                                    : aug.pixels;
                images.push_back(std::move(img));
                labels.push_back(class_of[static_cast<std::size_t>(batch_idx[bi])]);
            }
            Stage2Terms t = stage2_step(m, images, labels, bank, cfg, lr);
            accum.id += t.id;
            accum.tri += t.tri;
            accum.i2tce += t.i2tce;
            accum.total += t.total;
            accum.alpha = t.alpha;
            accum.beta = t.beta;
        }
        accum.id /= steps_per_epoch;
        accum.tri /= steps_per_epoch;
        accum.i2tce /= steps_per_epoch;
        accum.total /= steps_per_epoch;
        result.epoch_log.push_back(accum);
    }

    model::Checkpoint ck;
    ck.header = {{"kind", "stage2"},
                 {"model", model_config_to_json(mcfg)},
                 {"use_wgff", cfg.use_wgff},
                 {"templates", model::template_mode_name(cfg.templates)},
                 {"seed", cfg.seed},
                 {"epochs", cfg.epochs},
                 {"p", cfg.p},
                 {"k", cfg.k},
                 {"lr", cfg.lr},
                 {"margin", cfg.margin},
                 {"label_smoothing", cfg.label_smoothing},
                 {"occlusion_ratio", cfg.augment.occlusion_ratio},
                 {"train_ids", ids},
                 {"num_classes", static_cast<int>(ids.size())}};
    m.write_tensors(ck);
    // Stage-1 prompt tokens and cached text features ride along untouched.
    for (const auto& [name, t] : stage1_ckpt.tensors)
        if (name.rfind("prompt.", 0) == 0 || name.rfind("feat.", 0) == 0) ck.tensors[name] = t;
    result.checkpoint = std::move(ck);
    return result;
}

// Rebuilds a model (weights + head + fusion) from a stage-2 checkpoint.
inline model::ReidModel model_from_stage2(const model::Checkpoint& ck) {
    require(ck.header.value("kind", "") == "stage2", "model_from_stage2: wrong checkpoint kind");
    model::ModelConfig mcfg = model_config_from_json(ck.header.at("model"));
    mcfg.use_wgff = ck.header.at("use_wgff").get<bool>();
    model::ReidModel m = model::ReidModel::create(mcfg, 0);
    m.init_head(ck.header.at("num_classes").get<int>(), 0);
    m.read_tensors(ck);
    return m;
}

}  // namespace dpl::train
