#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dpl/train/stage1.hpp"
#include "oracle_utils.hpp"

using namespace dpl;
using namespace dpl::train;
using nn::Tensor;

namespace {

synth::Dataset small_dataset(int num_ids = 4, std::uint64_t seed = 11) {
    synth::DatasetConfig cfg;
    cfg.num_ids = num_ids;  // half become train ids
    cfg.cams = 2;
    cfg.samples_per_id_per_cam = 2;
    cfg.seed = seed;
    return synth::build_dataset(cfg);
}

model::ModelConfig small_model() {
    model::ModelConfig cfg;
    cfg.channels = 16;
    cfg.embed_dim = 16;
    cfg.text_dim = 16;
    return cfg;
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Fixture {
    model::ModelConfig mcfg = small_model();
    model::ReidModel m;
    model::PromptState prompts;
    Tensor fv_full, fv_occ;
    std::vector<int> labels = {0, 1, 0, 1};

    Fixture() : m(model::ReidModel::create(small_model(), 3)) {
        m.set_trainable(m.image_params(), false);
        m.set_trainable(m.global_params(), false);
        prompts.init({0, 1}, mcfg, 5);
        prompts.set_trainable(true);
        Rng rng(17);
        fv_full = Tensor({4, mcfg.embed_dim});
        fv_occ = Tensor({4, mcfg.embed_dim});
        for (auto& v : fv_full.data) v = rng.normal();
        for (auto& v : fv_occ.data) v = rng.normal();
    }
};

}  // namespace

TEST_CASE("stage1_step: parameter routing and the frozen-encoder guard") {
    Fixture fx;

    SUBCASE("zero learning rate leaves PromptState unchanged") {
        const Tensor before = fx.prompts.tokens_for(0).x_full.value;
        stage1_step(fx.m, fx.prompts, fx.fv_full, fx.fv_occ, fx.labels,
                    model::TemplateMode::both, 0.0);
        CHECK(fx.prompts.tokens_for(0).x_full.value.data == before.data);
    }
    SUBCASE("unfrozen encoder is rejected") {
        fx.m.set_trainable(fx.m.image_params(), true);
        CHECK_THROWS_WITH_AS(stage1_step(fx.m, fx.prompts, fx.fv_full, fx.fv_occ, fx.labels,
                                         model::TemplateMode::both, 1e-3),
                             doctest::Contains("non-frozen encoder"), std::runtime_error);
    }
    SUBCASE("full-branch terms give identically zero gradient on Y_occ") {
        Stage1Graph g = build_stage1_graph(fx.m, fx.prompts, fx.fv_full, fx.fv_occ, fx.labels,
                                           model::TemplateMode::full);
        nn::backward(g.total);
        const Tensor gy = g.tape.grad_of(fx.prompts.tokens_for(0).y_occ);
        for (double v : gy.data) CHECK(v == 0.0);
        const Tensor gx = g.tape.grad_of(fx.prompts.tokens_for(0).x_full);
        double mag = 0;
        for (double v : gx.data) mag += std::fabs(v);
        CHECK(mag > 0.0);
    }
    SUBCASE("occ branch reaches both X_occ and Y_occ but not X_full") {
        Stage1Graph g = build_stage1_graph(fx.m, fx.prompts, fx.fv_full, fx.fv_occ, fx.labels,
                                           model::TemplateMode::occ);
        nn::backward(g.total);
        auto mag = [&](model::Param& p) {
            double s = 0;
            for (double v : g.tape.grad_of(p).data) s += std::fabs(v);
            return s;
        };
        CHECK(mag(fx.prompts.tokens_for(1).x_occ) > 0.0);
        CHECK(mag(fx.prompts.tokens_for(1).y_occ) > 0.0);
        CHECK(mag(fx.prompts.tokens_for(1).x_full) == 0.0);
    }
    SUBCASE("stage-1 objective equals the sum of its four terms") {
        Stage1Graph g = build_stage1_graph(fx.m, fx.prompts, fx.fv_full, fx.fv_occ, fx.labels,
                                           model::TemplateMode::both);
        CHECK(g.terms.total == doctest::Approx(g.terms.i2t_full + g.terms.t2i_full +
                                               g.terms.i2t_occ + g.terms.t2i_occ)
                                   .epsilon(1e-12));
        CHECK(g.terms.total >= 0.0);
    }
}

TEST_CASE("stage-1 gradient w.r.t. prompt tokens matches finite differences") {
    Fixture fx;
    Stage1Graph g = build_stage1_graph(fx.m, fx.prompts, fx.fv_full, fx.fv_occ, fx.labels,
                                       model::TemplateMode::both);
    nn::backward(g.total);

    auto loss_with = [&](model::Param& p, int coord, double value) {
        const double keep = p.value.data[static_cast<std::size_t>(coord)];
        p.value.data[static_cast<std::size_t>(coord)] = value;
        Stage1Graph g2 = build_stage1_graph(fx.m, fx.prompts, fx.fv_full, fx.fv_occ, fx.labels,
                                            model::TemplateMode::both);
        p.value.data[static_cast<std::size_t>(coord)] = keep;
        return g2.terms.total;
    };

    const double h = 1e-5;
    for (model::Param* p : {&fx.prompts.tokens_for(0).x_full, &fx.prompts.tokens_for(1).x_occ,
                            &fx.prompts.tokens_for(0).y_occ}) {
        const Tensor grad = g.tape.grad_of(*p);
        for (int coord : {0, 3, static_cast<int>(p->value.numel()) - 1}) {
            const double x0 = p->value.data[static_cast<std::size_t>(coord)];
            const double fd = (loss_with(*p, coord, x0 + h) - loss_with(*p, coord, x0 - h)) / (2 * h);
            CHECK(oracle::rel_err(grad.data[static_cast<std::size_t>(coord)], fd) < 1e-4);
        }
    }
}

TEST_CASE("run_stage1: training improves the objective and stays deterministic") {
    auto ds = small_dataset();
    auto lib = occlib::build_synthetic_library(12, 3);
    Stage1Config cfg;
    cfg.epochs = 30;
    cfg.seed = 21;
    cfg.warmup.epochs = 6;

    SUBCASE("2 ids x 4 images: final loss below initial") {
        // Duplicate identities in the batch put a log(4) floor under each
        // softmax term, so this tiny case only shrinks, it cannot halve.
        auto res = run_stage1(cfg, small_model(), ds, lib);
        REQUIRE(res.epoch_log.size() == 30);
        CHECK(res.epoch_log.back().total < res.epoch_log.front().total);
    }
    SUBCASE("desk-scale dataset: loss falls below half of the initial value") {
        synth::DatasetConfig dcfg;
        dcfg.num_ids = 16;  // 8 train identities
        dcfg.cams = 2;
        dcfg.samples_per_id_per_cam = 2;
        dcfg.seed = 7;
        auto desk = synth::build_dataset(dcfg);
        auto res = run_stage1(cfg, small_model(), desk, lib);
        REQUIRE(res.epoch_log.size() == 30);
        CHECK(res.epoch_log.back().total < 0.5 * res.epoch_log.front().total);
    }
    SUBCASE("same seed twice produces byte-identical checkpoints") {
        auto dir = std::filesystem::temp_directory_path() / "dpl_stage1_det";
        std::filesystem::create_directories(dir);
        auto r1 = run_stage1(cfg, small_model(), ds, lib);
        auto r2 = run_stage1(cfg, small_model(), ds, lib);
        r1.checkpoint.save((dir / "a.ckpt").string());
        r2.checkpoint.save((dir / "b.ckpt").string());
        CHECK(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));
    }
    SUBCASE("epochs = 0 keeps the initialization") {
        Stage1Config zero = cfg;
        zero.epochs = 0;
        auto a = run_stage1(zero, small_model(), ds, lib);
        auto b = run_stage1(zero, small_model(), ds, lib);
        CHECK(a.checkpoint.tensors == b.checkpoint.tensors);
        auto trained = run_stage1(cfg, small_model(), ds, lib);
        CHECK(a.checkpoint.tensors.at("prompt.0.x_full").data !=
              trained.checkpoint.tensors.at("prompt.0.x_full").data);
    }
    SUBCASE("frozen encoder weights equal a fresh warmup reconstruction") {
        auto res = run_stage1(cfg, small_model(), ds, lib);
        auto m = model::ReidModel::create(small_model(), cfg.seed);
        WarmupConfig wcfg = cfg.warmup;
        wcfg.seed = derive_seed(cfg.seed, 0x0a11u);
        Stage1Config scfg = cfg;
        warmup_image_encoder(m, ds.train, wcfg, &lib, &scfg.augment);
        for (model::Param* p : m.image_params())
            CHECK(res.checkpoint.tensors.at(p->name).data == p->value.data);
        for (model::Param* p : m.text_params())
            CHECK(res.checkpoint.tensors.at(p->name).data == p->value.data);
    }
    SUBCASE("checkpoint carries cached text features per identity and template") {
        Stage1Config quick = cfg;
        quick.epochs = 2;
        auto res = run_stage1(quick, small_model(), ds, lib);
        for (int id : ds.train_ids()) {
            REQUIRE(res.checkpoint.tensors.count("feat.full." + std::to_string(id)) == 1);
            REQUIRE(res.checkpoint.tensors.count("feat.occ." + std::to_string(id)) == 1);
            CHECK(res.checkpoint.tensors.at("feat.full." + std::to_string(id)).numel() ==
                  small_model().embed_dim);
        }
    }
}
