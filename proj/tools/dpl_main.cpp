// dplreid: command-line front end for the occluded-ReID pipeline.
// Subcommands mirror the pipeline stages; every run is non-interactive,
// seeded, and exits nonzero on any error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "dpl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dpl;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;

    pipeline::Config resolve(std::map<std::string, std::string> extra = {}) const {
        std::map<std::string, std::string> overrides;
        for (const std::string& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) fail("--set expects key=value, got '" + kv + "'");
            overrides[pipeline::trim(kv.substr(0, eq))] = pipeline::trim(kv.substr(eq + 1));
        }
        for (auto& [k, v] : extra) overrides[k] = v;
        return pipeline::load_config(config_path, overrides);
    }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "key = value config file");
    cmd->add_option("--set", opts.sets, "override a config key (key=value, repeatable)");
}

model::Checkpoint load_stage2_checkpoint(const std::string& path) {
    auto ck = model::Checkpoint::load(path);
    require(ck.header.value("kind", "") == "stage2",
            "expected a stage-2 checkpoint at " + path);
    return ck;
}

std::vector<ImageSample>& split_of(synth::Dataset& ds, const std::string& name) {
    return name == "train" ? ds.train : name == "query" ? ds.query : ds.gallery;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dplreid: dual-prompt occluded person re-identification, desk scale"};
    app.require_subcommand(1);

    // ---------------------------------------------------------------- gen-synth
    auto* gen = app.add_subcommand("gen-synth", "generate the synthetic pedestrian dataset");
    CommonOpts gen_opts;
    add_common(gen, gen_opts);
    std::string gen_out;
    std::string gen_seed;
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->callback([&] {
        std::map<std::string, std::string> extra;
        if (!gen_seed.empty()) extra["seed"] = gen_seed;
        auto cfg = gen_opts.resolve(extra);
        auto ds = synth::build_dataset(pipeline::dataset_config(cfg));
        synth::save_dataset(ds, gen_out);
        std::printf("wrote %zu train / %zu query / %zu gallery images to %s\n", ds.train.size(),
                    ds.query.size(), ds.gallery.size(), gen_out.c_str());
    });

    // ------------------------------------------------------------ build-library
    auto* bl = app.add_subcommand("build-library", "write the synthetic occlusion library");
    std::string bl_out;
    int bl_count = 24, bl_h = 128, bl_w = 64;
    std::uint64_t bl_seed = 1;
    bl->add_option("--out", bl_out, "output library directory")->required();
    bl->add_option("--count", bl_count, "number of instances");
    bl->add_option("--canvas-h", bl_h, "canvas height");
    bl->add_option("--canvas-w", bl_w, "canvas width");
    bl->add_option("--seed", bl_seed, "library seed");
    bl->callback([&] {
        auto lib = occlib::build_synthetic_library(bl_count, bl_seed, bl_h, bl_w);
        occlib::save_manifest(lib, bl_out);
        std::printf("wrote %zu instances (%d strong / %d weak) to %s\n", lib.instances.size(),
                    lib.category_counts[occlib::Category::strong],
                    lib.category_counts[occlib::Category::weak], bl_out.c_str());
    });

    // --------------------------------------------------------- validate-library
    auto* vl = app.add_subcommand("validate-library", "validate every instance in a manifest");
    std::string vl_manifest;
    vl->add_option("manifest", vl_manifest, "path to manifest.json")->required();
    vl->callback([&] {
        auto lib = occlib::load_manifest(vl_manifest);
        int violations = 0;
        for (const auto& inst : lib.instances) {
            for (const auto& v : occlib::validate_instance(inst)) {
                std::printf("%s: %s\n", inst.id.c_str(), v.c_str());
                ++violations;
            }
        }
        std::printf("%zu instances checked, %d violations\n", lib.instances.size(), violations);
        if (violations > 0) throw std::runtime_error("library validation failed");
    });

    // ------------------------------------------------------------------ augment
    auto* aug = app.add_subcommand("augment", "apply occlusion augmentation to a dataset");
    CommonOpts aug_opts;
    add_common(aug, aug_opts);
    std::string aug_in, aug_lib, aug_out, aug_splits = "train";
    std::string aug_ratio, aug_seed, aug_sw;
    bool aug_noclamp = false;
    aug->add_option("--in", aug_in, "input dataset directory")->required();
    aug->add_option("--library", aug_lib, "library manifest path")->required();
    aug->add_option("--out", aug_out, "output directory")->required();
    aug->add_option("--ratio", aug_ratio, "occlusion probability per image");
    aug->add_option("--seed", aug_seed, "augmentation seed");
    aug->add_option("--strong-weight", aug_sw, "strong-category sampling weight");
    aug->add_option("--splits", aug_splits, "comma-separated splits to process (default train)");
    aug->add_flag("--no-clamp", aug_noclamp, "skip clamping aligned output to [0,1]");
    aug->callback([&] {
        std::map<std::string, std::string> extra;
        if (!aug_ratio.empty()) extra["augment.ratio"] = aug_ratio;
        if (!aug_seed.empty()) extra["seed"] = aug_seed;
        if (!aug_sw.empty()) extra["augment.strong_weight"] = aug_sw;
        if (aug_noclamp) extra["augment.clamp"] = "false";
        auto cfg = aug_opts.resolve(extra);
        auto acfg = pipeline::augment_config(cfg);
        const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));

        auto ds = synth::load_dataset(aug_in);
        auto lib = occlib::load_manifest(aug_lib);
        nlohmann::json sidecar = nlohmann::json::array();
        std::stringstream splits(aug_splits);
        std::string split_name_s;
        std::size_t written = 0;
        while (std::getline(splits, split_name_s, ',')) {
            auto& samples = split_of(ds, pipeline::trim(split_name_s));
            fs::create_directories(fs::path(aug_out) / pipeline::trim(split_name_s));
            for (std::size_t i = 0; i < samples.size(); ++i) {
                Rng rng(derive_seed(seed, 0xa06u, static_cast<std::uint64_t>(i)));
                const ImageSample& src = samples[i];
                ImageSample out = src;
                std::string instance_id;
                if (rng.uniform() < acfg.occlusion_ratio) {
                    Rng pick = rng;  // instance choice consumes the same stream
                    out = rwoa::apply_occlusion(src, lib, acfg, rng);
                    instance_id = occlib::sample_instance(lib, pick, acfg.strong_weight).id;
                }
                const std::string rel =
                    pipeline::trim(split_name_s) + "/" + synth::sample_filename(src);
                write_png((fs::path(aug_out) / rel).string(), out.pixels);
                sidecar.push_back({{"file", rel},
                                   {"instance_id", instance_id},
                                   {"seed", derive_seed(seed, 0xa06u, static_cast<std::uint64_t>(i))},
                                   {"aligned", out.occluded}});
                ++written;
            }
        }
        std::ofstream side(fs::path(aug_out) / "augment.json");
        side << sidecar.dump(2) << "\n";
        std::printf("augmented %zu images into %s\n", written, aug_out.c_str());
    });

    // ------------------------------------------------------------- train-stage1
    auto* t1 = app.add_subcommand("train-stage1", "dual prompt learning over frozen encoders");
    CommonOpts t1_opts;
    add_common(t1, t1_opts);
    std::string t1_data, t1_lib, t1_out;
    std::string t1_seed;
    t1->add_option("--data", t1_data, "dataset directory")->required();
    t1->add_option("--library", t1_lib, "library manifest path")->required();
    t1->add_option("--out", t1_out, "output checkpoint path")->required();
    t1->add_option("--seed", t1_seed, "run seed");
    t1->callback([&] {
        std::map<std::string, std::string> extra;
        if (!t1_seed.empty()) extra["seed"] = t1_seed;
        auto cfg = t1_opts.resolve(extra);
        auto ds = synth::load_dataset(t1_data);
        auto lib = occlib::load_manifest(t1_lib);
        auto res = train::run_stage1(pipeline::stage1_config(cfg), pipeline::model_config(cfg), ds, lib);
        res.checkpoint.save(t1_out);
        pipeline::write_csv_stage1(res.epoch_log, fs::path(t1_out).replace_extension(".loss.csv"));
        std::ofstream rc(fs::path(t1_out).replace_extension(".cfg"));
        rc << cfg.dump();
        if (!res.epoch_log.empty())
            std::printf("stage1: loss %.4f -> %.4f over %zu epochs\n", res.epoch_log.front().total,
                        res.epoch_log.back().total, res.epoch_log.size());
        std::printf("checkpoint written to %s\n", t1_out.c_str());
    });

    // ------------------------------------------------------------- train-stage2
    auto* t2 = app.add_subcommand("train-stage2", "train encoders, WGFF and heads");
    CommonOpts t2_opts;
    add_common(t2, t2_opts);
    std::string t2_data, t2_lib, t2_ckpt, t2_out;
    std::string t2_seed, t2_ratio, t2_variant, t2_template;
    bool t2_nowgff = false;
    t2->add_option("--data", t2_data, "dataset directory")->required();
    t2->add_option("--library", t2_lib, "library manifest path")->required();
    t2->add_option("--stage1", t2_ckpt, "stage-1 checkpoint path")->required();
    t2->add_option("--out", t2_out, "output checkpoint path")->required();
    t2->add_option("--seed", t2_seed, "run seed");
    t2->add_option("--ratio", t2_ratio, "stage-2 occlusion ratio");
    t2->add_option("--variant", t2_variant, "expected encoder variant (grid|token)");
    t2->add_option("--template", t2_template, "text bank template (full|occ|both)");
    t2->add_flag("--no-wgff", t2_nowgff, "disable the global branch (ablation)");
    t2->callback([&] {
        std::map<std::string, std::string> extra;
        if (!t2_seed.empty()) extra["seed"] = t2_seed;
        if (!t2_ratio.empty()) extra["stage2.ratio"] = t2_ratio;
        if (!t2_template.empty()) extra["stage2.template"] = t2_template;
        if (t2_nowgff) extra["stage2.wgff"] = "false";
        auto cfg = t2_opts.resolve(extra);
        auto ds = synth::load_dataset(t2_data);
        auto lib = occlib::load_manifest(t2_lib);
        auto s1 = model::Checkpoint::load(t2_ckpt);
        require(s1.header.value("kind", "") == "stage1", "not a stage-1 checkpoint: " + t2_ckpt);
        if (!t2_variant.empty())
            require(s1.header.at("model").at("variant").get<std::string>() == t2_variant,
                    "checkpoint variant does not match --variant " + t2_variant);
        auto res = train::run_stage2(pipeline::stage2_config(cfg), ds, lib, s1);
        res.checkpoint.save(t2_out);
        pipeline::write_csv_stage2(res.epoch_log, fs::path(t2_out).replace_extension(".loss.csv"));
        std::ofstream rc(fs::path(t2_out).replace_extension(".cfg"));
        rc << cfg.dump();
        if (!res.epoch_log.empty())
            std::printf("stage2: loss %.4f -> %.4f (alpha %.4f, beta %.4f)\n",
                        res.epoch_log.front().total, res.epoch_log.back().total,
                        res.epoch_log.back().alpha, res.epoch_log.back().beta);
        std::printf("checkpoint written to %s\n", t2_out.c_str());
    });

    // --------------------------------------------------------------------- eval
    auto* ev = app.add_subcommand("eval", "retrieval evaluation (CMC / mAP)");
    CommonOpts ev_opts;
    add_common(ev, ev_opts);
    std::string ev_ckpt, ev_data, ev_metric = "cosine", ev_report, ev_lib;
    std::string ev_ratio;
    ev->add_option("--checkpoint", ev_ckpt, "stage-2 checkpoint")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--metric", ev_metric, "cosine|euclidean");
    ev->add_option("--report", ev_report, "write report JSON here");
    ev->add_option("--occlusion-ratio", ev_ratio, "occlude query/gallery at this ratio");
    ev->add_option("--library", ev_lib, "library manifest (needed when occluding)");
    ev->callback([&] {
        std::map<std::string, std::string> extra;
        if (!ev_ratio.empty()) extra["eval.occlusion_ratio"] = ev_ratio;
        extra["eval.metric"] = ev_metric;
        auto cfg = ev_opts.resolve(extra);
        auto ds = synth::load_dataset(ev_data);
        auto m = train::model_from_stage2(load_stage2_checkpoint(ev_ckpt));
        std::vector<ImageSample> query = ds.query, gallery = ds.gallery;
        const double ratio = cfg.get_real("eval.occlusion_ratio");
        if (ratio > 0.0) {
            require(!ev_lib.empty(), "--library required when --occlusion-ratio > 0");
            auto lib = occlib::load_manifest(ev_lib);
            rwoa::AugmentConfig acfg = pipeline::augment_config(cfg);
            acfg.occlusion_ratio = ratio;
            const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
            query = pipeline::occlude_eval_samples(ds.query, lib, acfg, derive_seed(seed, 0x901u));
            gallery = pipeline::occlude_eval_samples(ds.gallery, lib, acfg, derive_seed(seed, 0x902u));
        }
        auto rep = reval::compute_cmc_map(reval::extract_embeddings(m, query),
                                          reval::extract_embeddings(m, gallery),
                                          reval::metric_from_name(ev_metric));
        std::printf("mAP %.4f  Rank-1 %.4f", rep.map, rep.cmc.empty() ? 0.0 : rep.cmc[0]);
        if (rep.cmc.size() >= 5) std::printf("  Rank-5 %.4f", rep.cmc[4]);
        if (rep.cmc.size() >= 10) std::printf("  Rank-10 %.4f", rep.cmc[9]);
        std::printf("  (excluded queries: %d)\n", rep.excluded_queries);
        if (!ev_report.empty()) reval::write_report(rep, ev_report);
    });

    // -------------------------------------------------------- export-embeddings
    auto* ex = app.add_subcommand("export-embeddings", "write an n x D float32 embedding blob");
    std::string ex_ckpt, ex_data, ex_split = "query", ex_out;
    ex->add_option("--checkpoint", ex_ckpt, "stage-2 checkpoint")->required();
    ex->add_option("--data", ex_data, "dataset directory")->required();
    ex->add_option("--split", ex_split, "train|query|gallery");
    ex->add_option("--out", ex_out, "output file")->required();
    ex->callback([&] {
        auto ds = synth::load_dataset(ex_data);
        auto m = train::model_from_stage2(load_stage2_checkpoint(ex_ckpt));
        auto e = reval::extract_embeddings(m, split_of(ds, ex_split));
        reval::export_embeddings(e, ex_out);
        std::printf("wrote %d x %d embeddings to %s\n", e.features.dim(0), e.features.dim(1),
                    ex_out.c_str());
    });

    // ------------------------------------------------------------- dump-heatmap
    auto* hm = app.add_subcommand("dump-heatmap", "export feature-norm heatmaps as gray PNGs");
    std::string hm_ckpt, hm_data, hm_split = "query", hm_out;
    int hm_limit = 16;
    hm->add_option("--checkpoint", hm_ckpt, "stage-2 checkpoint")->required();
    hm->add_option("--data", hm_data, "dataset directory")->required();
    hm->add_option("--split", hm_split, "train|query|gallery");
    hm->add_option("--out", hm_out, "output directory")->required();
    hm->add_option("--limit", hm_limit, "max images (0 = all)");
    hm->callback([&] {
        auto ds = synth::load_dataset(hm_data);
        auto m = train::model_from_stage2(load_stage2_checkpoint(hm_ckpt));
        auto& samples = split_of(ds, hm_split);
        fs::create_directories(hm_out);
        std::size_t n = samples.size();
        if (hm_limit > 0) n = std::min(n, static_cast<std::size_t>(hm_limit));
        for (std::size_t i = 0; i < n; ++i) {
            Image map = reval::feature_norm_heatmap(m, samples[i]);
            write_png((fs::path(hm_out) / ("heat_" + synth::sample_filename(samples[i]))).string(),
                      map);
        }
        std::printf("wrote %zu heatmaps to %s\n", n, hm_out.c_str());
    });

    // ------------------------------------------------------------- run-pipeline
    auto* rp = app.add_subcommand("run-pipeline", "gen-synth -> library -> stage1 -> stage2 -> eval");
    CommonOpts rp_opts;
    add_common(rp, rp_opts);
    std::string rp_runs = "runs";
    std::string rp_seed;
    bool rp_quiet = false;
    rp->add_option("--runs-dir", rp_runs, "root directory for run artifacts");
    rp->add_option("--seed", rp_seed, "run seed");
    rp->add_flag("--quiet", rp_quiet, "suppress progress lines");
    rp->callback([&] {
        std::map<std::string, std::string> extra;
        if (!rp_seed.empty()) extra["seed"] = rp_seed;
        auto cfg = rp_opts.resolve(extra);
        const auto now = std::chrono::system_clock::now().time_since_epoch();
        const auto stamp = std::chrono::duration_cast<std::chrono::seconds>(now).count();
        const fs::path run_dir = fs::path(rp_runs) / (std::to_string(stamp) + "-" +
                                                      std::to_string(cfg.get_int("seed")));
        auto res = pipeline::run_pipeline(cfg, run_dir, !rp_quiet);
        std::printf("mAP %.4f  Rank-1 %.4f  artifacts in %s\n", res.report.map,
                    res.report.cmc.empty() ? 0.0 : res.report.cmc[0], run_dir.string().c_str());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
