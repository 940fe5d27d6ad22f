#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dpl/pipeline.hpp"

using namespace dpl;
using namespace dpl::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const char* name, const std::string& body) {
    auto p = fs::temp_directory_path() / name;
    std::ofstream out(p);
    out << body;
    return p;
}

// Smallest config that still trains: used by the pipeline contract tests.
void make_tiny(Config& cfg) {
    cfg.set("synth.num_ids", "6");
    cfg.set("synth.cams", "2");
    cfg.set("synth.samples_per_id_per_cam", "2");
    cfg.set("model.channels", "16");
    cfg.set("model.embed_dim", "16");
    cfg.set("model.text_dim", "16");
    cfg.set("warmup.epochs", "2");
    cfg.set("stage1.epochs", "2");
    cfg.set("stage2.epochs", "2");
    cfg.set("stage2.p", "2");
    cfg.set("stage2.k", "2");
    cfg.set("library.count", "8");
}

}  // namespace

TEST_CASE("load_config: precedence, defaults, unknown keys") {
    SUBCASE("empty file resolves to all defaults") {
        auto p = write_file("dpl_cfg_empty.cfg", "\n# just a comment\n");
        Config cfg = load_config(p.string(), {});
        CHECK(cfg.get_real("augment.ratio") == doctest::Approx(0.5));
        CHECK(cfg.get_int("stage2.p") == 8);
        CHECK(cfg.get_text("model.variant") == "grid");
        CHECK(cfg.get_bool("stage2.wgff"));
    }
    SUBCASE("flag overrides beat the file which beats defaults") {
        auto p = write_file("dpl_cfg_prec.cfg", "augment.ratio = 0.3\nstage1.lr = 1e-2\n");
        Config cfg = load_config(p.string(), {{"augment.ratio", "0.7"}});
        CHECK(cfg.get_real("augment.ratio") == doctest::Approx(0.7));
        CHECK(cfg.get_real("stage1.lr") == doctest::Approx(1e-2));
    }
    SUBCASE("unknown key is rejected by name") {
        auto p = write_file("dpl_cfg_typo.cfg", "augment.ration = 0.3\n");
        try {
            load_config(p.string(), {});
            FAIL("expected throw");
        } catch (const std::exception& e) {
            CHECK(std::string(e.what()).find("ration") != std::string::npos);
        }
    }
    SUBCASE("type mismatch is rejected") {
        auto p = write_file("dpl_cfg_type.cfg", "stage2.p = fast\n");
        CHECK_THROWS(load_config(p.string(), {}));
    }
    SUBCASE("DPL_SEED env var fills the seed when nothing else does") {
        setenv("DPL_SEED", "777", 1);
        Config cfg = load_config("", {});
        CHECK(cfg.get_int("seed") == 777);
        Config pinned = load_config("", {{"seed", "5"}});
        CHECK(pinned.get_int("seed") == 5);
        unsetenv("DPL_SEED");
    }
    SUBCASE("resolved dump lists every key deterministically") {
        Config cfg = load_config("", {});
        const std::string d = cfg.dump();
        for (const auto& [k, spec] : key_registry())
            CHECK(d.find(k + " = ") != std::string::npos);
    }
}

TEST_CASE("run_pipeline: artifacts, determinism, stage-tagged failure") {
    auto runs = fs::temp_directory_path() / "dpl_pipe_test";
    fs::remove_all(runs);

    SUBCASE("happy path writes the full artifact set") {
        Config cfg;
        make_tiny(cfg);
        auto res = run_pipeline(cfg, runs / "a");
        CHECK(fs::exists(runs / "a" / "resolved.cfg"));
        CHECK(fs::exists(runs / "a" / "stage1.ckpt"));
        CHECK(fs::exists(runs / "a" / "stage2.ckpt"));
        CHECK(fs::exists(runs / "a" / "stage1_loss.csv"));
        CHECK(fs::exists(runs / "a" / "stage2_loss.csv"));
        CHECK(fs::exists(runs / "a" / "report.json"));
        CHECK(res.report.map >= 0.0);
        CHECK(res.report.map <= 1.0);
    }
    SUBCASE("single-prompt no-occlusion ablation runs the degenerate path") {
        Config cfg;
        make_tiny(cfg);
        cfg.set("augment.ratio", "0");
        cfg.set("stage2.ratio", "0");
        cfg.set("stage1.template", "full");
        cfg.set("stage2.template", "full");
        auto res = run_pipeline(cfg, runs / "ablate");
        CHECK(fs::exists(runs / "ablate" / "report.json"));
    }
    SUBCASE("missing library path fails before training with a stage tag") {
        Config cfg;
        make_tiny(cfg);
        cfg.set("library.path", "/nonexistent/manifest.json");
        try {
            run_pipeline(cfg, runs / "fail");
            FAIL("expected throw");
        } catch (const std::exception& e) {
            CHECK(std::string(e.what()).find("[build-library]") != std::string::npos);
        }
        CHECK(!fs::exists(runs / "fail" / "stage1.ckpt"));
    }
    SUBCASE("identical seeds give identical reports and checkpoints") {
        Config cfg;
        make_tiny(cfg);
        auto r1 = run_pipeline(cfg, runs / "d1");
        auto r2 = run_pipeline(cfg, runs / "d2");
        CHECK(r1.report.map == r2.report.map);
        CHECK(r1.report.cmc == r2.report.cmc);
        auto bytes = [](const fs::path& p) {
            std::ifstream in(p, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        };
        CHECK(bytes(runs / "d1" / "stage2.ckpt") == bytes(runs / "d2" / "stage2.ckpt"));
        CHECK(bytes(runs / "d1" / "report.json") == bytes(runs / "d2" / "report.json"));
    }
}

TEST_CASE("occlude_eval_samples honors the ratio and stays deterministic") {
    synth::DatasetConfig dcfg;
    dcfg.num_ids = 4;
    dcfg.cams = 2;
    dcfg.samples_per_id_per_cam = 2;
    auto ds = synth::build_dataset(dcfg);
    auto lib = occlib::build_synthetic_library(8, 3);
    rwoa::AugmentConfig acfg;
    acfg.occlusion_ratio = 1.0;
    auto a = occlude_eval_samples(ds.query, lib, acfg, 42);
    auto b = occlude_eval_samples(ds.query, lib, acfg, 42);
    REQUIRE(a.size() == ds.query.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].occluded);
        CHECK(a[i].pixels.v == b[i].pixels.v);
        CHECK(a[i].person_id == ds.query[i].person_id);
    }
    acfg.occlusion_ratio = 0.0;
    auto none = occlude_eval_samples(ds.query, lib, acfg, 42);
    for (std::size_t i = 0; i < none.size(); ++i) CHECK(!none[i].occluded);
}
