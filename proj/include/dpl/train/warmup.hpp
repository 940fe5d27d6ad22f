#pragma once

// Stage-0 warmup: briefly trains the CLIP-stand-in image encoder on
// synthetic-identity classification so the frozen features that Stage 1
// aligns prompts against are non-degenerate. The temporary classifier
// head is discarded afterwards.

#include <algorithm>
#include <map>
#include <vector>

#include "dpl/image.hpp"
#include "dpl/model/model.hpp"
#include "dpl/nn/optim.hpp"
#include "dpl/rwoa/augment.hpp"
#include "dpl/train/losses.hpp"

namespace dpl::train {

struct WarmupConfig {
    int epochs = 12;
    int batch_size = 16;
    double lr = 8e-3;
    std::uint64_t seed = 1;
};

inline std::map<int, int> class_index_map(const std::vector<int>& ids) {
    std::map<int, int> m;
    for (int id : ids) m.emplace(id, static_cast<int>(m.size()));
    return m;
}

// Classification warmup over the train split. When a library and augment
// config are supplied, images are occluded at the configured ratio with
// fresh occluders each epoch, standing in for the occluded humans a real
// pretrained encoder has seen.
inline void warmup_image_encoder(model::ReidModel& m, const std::vector<ImageSample>& train,
                                 const WarmupConfig& cfg,
                                 const occlib::LibraryManifest* lib = nullptr,
                                 const rwoa::AugmentConfig* aug = nullptr) {
    require(!train.empty(), "warmup: empty training set");
    std::vector<int> ids;
    for (const auto& s : train) ids.push_back(s.person_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    require(ids.size() >= 2, "warmup: need at least 2 identities");
    const auto cls = class_index_map(ids);

    Rng head_rng(derive_seed(cfg.seed, 0x3ad0u));
    model::Param tmp_w{"warmup.head_w",
                       model::init::xavier({static_cast<int>(ids.size()), m.cfg.channels},
                                           m.cfg.channels, head_rng)};
    model::Param tmp_b{"warmup.head_b", nn::Tensor::zeros({static_cast<int>(ids.size())})};

    m.set_trainable(m.image_params(), true);

    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    const bool occlude = lib != nullptr && aug != nullptr && aug->occlusion_ratio > 0.0 &&
                         !lib->instances.empty();

    Rng shuffle_rng(derive_seed(cfg.seed, 0x0e90u));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            if (end - start < 2) continue;
            nn::Tape tape;
            std::vector<nn::Var> pooled_rows;
            std::vector<int> targets;
            for (std::size_t i = start; i < end; ++i) {
                ImageSample s = train[static_cast<std::size_t>(order[i])];
                if (occlude) {
                    Rng arng(derive_seed(cfg.seed, 0x0cc0u + static_cast<std::uint64_t>(epoch),
                                         static_cast<std::uint64_t>(order[i])));
                    s = rwoa::augment_sample(s, *lib, *aug, arng);
                }
                auto [x4, proj] = m.encode_image_g(tape, nn::constant(model::to_chw(s.pixels)));
                nn::Var pooled = m.cfg.variant == model::Variant::grid
                                     ? nn::reshape(nn::spatial_mean(x4), {1, m.cfg.channels})
                                     : nn::slice_rows(x4, 0, 1);
                pooled_rows.push_back(nn::reshape(pooled, {m.cfg.channels}));
                targets.push_back(cls.at(s.person_id));
            }
            nn::Var feats = nn::stack_rows(pooled_rows);
            nn::Var logits = nn::linear(feats, tape.use(tmp_w), tape.use(tmp_b));
            nn::Var loss = loss_smoothed_ce_g(logits, targets, 0.0);
            nn::backward(loss);
            nn::adam_step(tape, {.lr = cfg.lr});
        }
    }
}

}  // namespace dpl::train
