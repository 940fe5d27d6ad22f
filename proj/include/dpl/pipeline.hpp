#pragma once

// Layered configuration (defaults < file < flag overrides) over a flat
// dotted-key format, plus the end-to-end pipeline: synth data -> occluder
// library -> stage 1 -> stage 2 -> retrieval eval. Unknown keys are
// rejected; the fully resolved config is echoed into every run directory.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dpl/occlib/library.hpp"
#include "dpl/reval/retrieval.hpp"
#include "dpl/rwoa/augment.hpp"
#include "dpl/synth/dataset.hpp"
#include "dpl/train/stage1.hpp"
#include "dpl/train/stage2.hpp"

namespace dpl::pipeline {

enum class KeyType { integer, real, boolean, text };

struct KeySpec {
    KeyType type;
    std::string default_value;
};

inline const std::map<std::string, KeySpec>& key_registry() {
    static const std::map<std::string, KeySpec> reg = {
        {"seed", {KeyType::integer, "1"}},
        {"synth.num_ids", {KeyType::integer, "16"}},
        {"synth.cams", {KeyType::integer, "3"}},
        {"synth.samples_per_id_per_cam", {KeyType::integer, "4"}},
        {"synth.image_h", {KeyType::integer, "64"}},
        {"synth.image_w", {KeyType::integer, "32"}},
        {"synth.query_frac", {KeyType::real, "0.5"}},
        {"library.path", {KeyType::text, ""}},
        {"library.count", {KeyType::integer, "24"}},
        {"library.canvas_h", {KeyType::integer, "128"}},
        {"library.canvas_w", {KeyType::integer, "64"}},
        {"augment.ratio", {KeyType::real, "0.5"}},
        {"augment.feather_frac", {KeyType::real, "0.02"}},
        {"augment.align_eps", {KeyType::real, "1e-6"}},
        {"augment.strong_weight", {KeyType::real, "0.5"}},
        {"augment.clamp", {KeyType::boolean, "true"}},
        {"model.variant", {KeyType::text, "grid"}},
        {"model.patch", {KeyType::integer, "8"}},
        {"model.channels", {KeyType::integer, "24"}},
        {"model.embed_dim", {KeyType::integer, "32"}},
        {"model.text_dim", {KeyType::integer, "24"}},
        {"model.tokens_m", {KeyType::integer, "4"}},
        {"model.tokens_n", {KeyType::integer, "4"}},
        {"model.global_kernel", {KeyType::integer, "7"}},
        {"model.tau", {KeyType::real, "0.07"}},
        {"warmup.epochs", {KeyType::integer, "12"}},
        {"warmup.batch_size", {KeyType::integer, "16"}},
        {"warmup.lr", {KeyType::real, "8e-3"}},
        {"stage1.batch_size", {KeyType::integer, "16"}},
        {"stage1.epochs", {KeyType::integer, "30"}},
        {"stage1.lr", {KeyType::real, "5e-3"}},
        {"stage1.template", {KeyType::text, "both"}},
        {"stage2.p", {KeyType::integer, "8"}},
        {"stage2.k", {KeyType::integer, "4"}},
        {"stage2.epochs", {KeyType::integer, "20"}},
        {"stage2.lr", {KeyType::real, "2e-3"}},
        {"stage2.warmup_from", {KeyType::real, "2e-5"}},
        {"stage2.warmup_epochs", {KeyType::integer, "5"}},
        {"stage2.decay_epochs", {KeyType::text, "12,17"}},
        {"stage2.margin", {KeyType::real, "0.3"}},
        {"stage2.label_smoothing", {KeyType::real, "0.1"}},
        {"stage2.ratio", {KeyType::real, "0.5"}},
        {"stage2.template", {KeyType::text, "both"}},
        {"stage2.wgff", {KeyType::boolean, "true"}},
        {"stage2.traditional_augment", {KeyType::boolean, "true"}},
        {"eval.metric", {KeyType::text, "cosine"}},
        {"eval.occlusion_ratio", {KeyType::real, "0.0"}},
    };
    return reg;
}

class Config {
public:
    Config() {
        for (const auto& [k, spec] : key_registry()) values_[k] = spec.default_value;
    }

    void set(const std::string& key, const std::string& value) {
        auto it = key_registry().find(key);
        if (it == key_registry().end()) fail("unknown config key '" + key + "'");
        validate_type(key, it->second.type, value);
        values_[key] = value;
    }

    std::int64_t get_int(const std::string& key) const { return std::stoll(at(key)); }
    double get_real(const std::string& key) const { return std::stod(at(key)); }
    bool get_bool(const std::string& key) const {
        const std::string& v = at(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        fail("config key '" + key + "' is not a boolean: " + v);
    }
    const std::string& get_text(const std::string& key) const { return at(key); }

    // Full resolved dump, deterministic order; lands in the run log.
    std::string dump() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
        return os.str();
    }

private:
    const std::string& at(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) fail("unknown config key '" + key + "'");
        return it->second;
    }

    static void validate_type(const std::string& key, KeyType t, const std::string& v) {
        try {
            std::size_t used = 0;
            switch (t) {
                case KeyType::integer:
                    (void)std::stoll(v, &used);
                    require(used == v.size(), "trailing characters");
                    break;
                case KeyType::real:
                    (void)std::stod(v, &used);
                    require(used == v.size(), "trailing characters");
                    break;
                case KeyType::boolean:
                    require(v == "true" || v == "false" || v == "0" || v == "1", "not a boolean");
                    break;
                case KeyType::text:
                    break;
            }
        } catch (const std::exception&) {
            fail("config key '" + key + "' has invalid value '" + v + "'");
        }
    }

    std::map<std::string, std::string> values_;
};

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Precedence: flags > file > defaults. DPL_SEED fills `seed` when neither
// the file nor a flag pinned it.
inline Config load_config(const std::string& path, const std::map<std::string, std::string>& overrides) {
    Config cfg;
    bool seed_set = false;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) fail("load_config: cannot open " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                fail("load_config: line " + std::to_string(lineno) + " is not 'key = value'");
            const std::string key = trim(t.substr(0, eq));
            const std::string value = trim(t.substr(eq + 1));
            cfg.set(key, value);
            seed_set |= key == "seed";
        }
    }
    for (const auto& [k, v] : overrides) {
        cfg.set(k, v);
        seed_set |= k == "seed";
    }
    if (!seed_set) {
        if (const char* env = std::getenv("DPL_SEED")) cfg.set("seed", env);
    }
    return cfg;
}

// ------------------------------------------------------- typed config views

inline synth::DatasetConfig dataset_config(const Config& c) {
    synth::DatasetConfig d;
    d.num_ids = static_cast<int>(c.get_int("synth.num_ids"));
    d.cams = static_cast<int>(c.get_int("synth.cams"));
    d.samples_per_id_per_cam = static_cast<int>(c.get_int("synth.samples_per_id_per_cam"));
    d.image_h = static_cast<int>(c.get_int("synth.image_h"));
    d.image_w = static_cast<int>(c.get_int("synth.image_w"));
    d.query_frac = c.get_real("synth.query_frac");
    d.seed = static_cast<std::uint64_t>(c.get_int("seed"));
    return d;
}

inline rwoa::AugmentConfig augment_config(const Config& c) {
    rwoa::AugmentConfig a;
    a.occlusion_ratio = c.get_real("augment.ratio");
    a.feather_radius_frac = c.get_real("augment.feather_frac");
    a.align_epsilon = c.get_real("augment.align_eps");
    a.strong_weight = c.get_real("augment.strong_weight");
    a.clamp_output = c.get_bool("augment.clamp");
    return a;
}

inline model::ModelConfig model_config(const Config& c) {
    model::ModelConfig m;
    m.variant = model::variant_from_name(c.get_text("model.variant"));
    m.image_h = static_cast<int>(c.get_int("synth.image_h"));
    m.image_w = static_cast<int>(c.get_int("synth.image_w"));
    m.patch = static_cast<int>(c.get_int("model.patch"));
    m.channels = static_cast<int>(c.get_int("model.channels"));
    m.embed_dim = static_cast<int>(c.get_int("model.embed_dim"));
    m.text_dim = static_cast<int>(c.get_int("model.text_dim"));
    m.tokens_m = static_cast<int>(c.get_int("model.tokens_m"));
    m.tokens_n = static_cast<int>(c.get_int("model.tokens_n"));
    m.global_kernel = static_cast<int>(c.get_int("model.global_kernel"));
    m.tau = c.get_real("model.tau");
    m.use_wgff = c.get_bool("stage2.wgff");
    return m;
}

inline train::Stage1Config stage1_config(const Config& c) {
    train::Stage1Config s;
    s.batch_size = static_cast<int>(c.get_int("stage1.batch_size"));
    s.epochs = static_cast<int>(c.get_int("stage1.epochs"));
    s.lr = c.get_real("stage1.lr");
    s.seed = static_cast<std::uint64_t>(c.get_int("seed"));
    s.templates = model::template_mode_from_name(c.get_text("stage1.template"));
    s.augment = augment_config(c);
    s.warmup.epochs = static_cast<int>(c.get_int("warmup.epochs"));
    s.warmup.batch_size = static_cast<int>(c.get_int("warmup.batch_size"));
    s.warmup.lr = c.get_real("warmup.lr");
    return s;
}

inline std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) out.push_back(std::stoi(t));
    }
    return out;
}

inline train::Stage2Config stage2_config(const Config& c) {
    train::Stage2Config s;
    s.p = static_cast<int>(c.get_int("stage2.p"));
    s.k = static_cast<int>(c.get_int("stage2.k"));
    s.epochs = static_cast<int>(c.get_int("stage2.epochs"));
    s.lr = c.get_real("stage2.lr");
    s.warmup_from = c.get_real("stage2.warmup_from");
    s.warmup_epochs = static_cast<int>(c.get_int("stage2.warmup_epochs"));
    s.decay_epochs = parse_int_list(c.get_text("stage2.decay_epochs"));
    s.margin = c.get_real("stage2.margin");
    s.label_smoothing = c.get_real("stage2.label_smoothing");
    s.augment = augment_config(c);
    s.augment.occlusion_ratio = c.get_real("stage2.ratio");
    s.traditional_augment = c.get_bool("stage2.traditional_augment");
    s.use_wgff = c.get_bool("stage2.wgff");
    s.templates = model::template_mode_from_name(c.get_text("stage2.template"));
    s.seed = static_cast<std::uint64_t>(c.get_int("seed"));
    return s;
}

// ------------------------------------------------------------ the pipeline

// Bernoulli-occludes an eval split; mirrors training augmentation without
// the train-split precondition.
inline std::vector<ImageSample> occlude_eval_samples(const std::vector<ImageSample>& samples,
                                                     const occlib::LibraryManifest& lib,
                                                     const rwoa::AugmentConfig& cfg,
                                                     std::uint64_t seed) {
    std::vector<ImageSample> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Rng rng(derive_seed(seed, 0xe0a1u, static_cast<std::uint64_t>(i)));
        if (rng.uniform() < cfg.occlusion_ratio)
            out.push_back(rwoa::apply_occlusion(samples[i], lib, cfg, rng));
        else
            out.push_back(samples[i]);
    }
    return out;
}

struct PipelineResult {
    reval::EvalReport report;
    std::filesystem::path run_dir;
};

inline void write_csv_stage1(const std::vector<train::Stage1Terms>& log,
                             const std::filesystem::path& path) {
    std::ofstream out(path);
    out << "epoch,L_i2t_full,L_t2i_full,L_i2t_occ,L_t2i_occ,total\n";
    for (std::size_t e = 0; e < log.size(); ++e)
        out << e << "," << log[e].i2t_full << "," << log[e].t2i_full << "," << log[e].i2t_occ
            << "," << log[e].t2i_occ << "," << log[e].total << "\n";
}

inline void write_csv_stage2(const std::vector<train::Stage2Terms>& log,
                             const std::filesystem::path& path) {
    std::ofstream out(path);
    out << "epoch,L_id,L_tri,L_i2tce,total,alpha,beta\n";
    for (std::size_t e = 0; e < log.size(); ++e)
        out << e << "," << log[e].id << "," << log[e].tri << "," << log[e].i2tce << ","
            << log[e].total << "," << log[e].alpha << "," << log[e].beta << "\n";
}

// gen-synth -> build-library -> train-stage1 -> train-stage2 -> eval.
// Any stage failure surfaces as "[stage] message".
inline PipelineResult run_pipeline(const Config& cfg, const std::filesystem::path& run_dir,
                                   bool verbose = false) {
    namespace fs = std::filesystem;
    fs::create_directories(run_dir);
    {
        std::ofstream out(run_dir / "resolved.cfg");
        out << cfg.dump();
    }
    auto stage = [&](const char* name, auto&& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            fail("[" + std::string(name) + "] " + e.what());
        }
    };

    synth::Dataset ds = stage("gen-synth", [&] { return synth::build_dataset(dataset_config(cfg)); });
    if (verbose)
        std::fprintf(stderr, "gen-synth: %zu train / %zu query / %zu gallery\n", ds.train.size(),
                     ds.query.size(), ds.gallery.size());

    occlib::LibraryManifest lib = stage("build-library", [&] {
        const std::string path = cfg.get_text("library.path");
        if (!path.empty()) return occlib::load_manifest(path);
        auto built = occlib::build_synthetic_library(
            static_cast<int>(cfg.get_int("library.count")),
            static_cast<std::uint64_t>(cfg.get_int("seed")),
            static_cast<int>(cfg.get_int("library.canvas_h")),
            static_cast<int>(cfg.get_int("library.canvas_w")));
        occlib::save_manifest(built, run_dir / "library");
        return built;
    });

    train::Stage1Result s1 = stage("train-stage1", [&] {
        auto r = train::run_stage1(stage1_config(cfg), model_config(cfg), ds, lib);
        r.checkpoint.save((run_dir / "stage1.ckpt").string());
        write_csv_stage1(r.epoch_log, run_dir / "stage1_loss.csv");
        return r;
    });
    if (verbose && !s1.epoch_log.empty())
        std::fprintf(stderr, "stage1: loss %.4f -> %.4f\n", s1.epoch_log.front().total,
                     s1.epoch_log.back().total);

    train::Stage2Result s2 = stage("train-stage2", [&] {
        auto r = train::run_stage2(stage2_config(cfg), ds, lib, s1.checkpoint);
        r.checkpoint.save((run_dir / "stage2.ckpt").string());
        write_csv_stage2(r.epoch_log, run_dir / "stage2_loss.csv");
        return r;
    });
    if (verbose && !s2.epoch_log.empty())
        std::fprintf(stderr, "stage2: loss %.4f -> %.4f (alpha %.3f)\n", s2.epoch_log.front().total,
                     s2.epoch_log.back().total, s2.epoch_log.back().alpha);

    PipelineResult result;
    result.run_dir = run_dir;
    result.report = stage("eval", [&] {
        model::ReidModel m = train::model_from_stage2(s2.checkpoint);
        rwoa::AugmentConfig ecfg = augment_config(cfg);
        ecfg.occlusion_ratio = cfg.get_real("eval.occlusion_ratio");
        const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
        std::vector<ImageSample> query = ds.query, gallery = ds.gallery;
        if (ecfg.occlusion_ratio > 0.0) {
            require(!lib.instances.empty(), "eval occlusion requested but library is empty");
            query = occlude_eval_samples(ds.query, lib, ecfg, derive_seed(seed, 0x901u));
            gallery = occlude_eval_samples(ds.gallery, lib, ecfg, derive_seed(seed, 0x902u));
        }
        auto qe = reval::extract_embeddings(m, query);
        auto ge = reval::extract_embeddings(m, gallery);
        auto rep = reval::compute_cmc_map(qe, ge, reval::metric_from_name(cfg.get_text("eval.metric")));
        reval::write_report(rep, (run_dir / "report.json").string());
        return rep;
    });
    if (verbose)
        std::fprintf(stderr, "eval: mAP %.4f rank1 %.4f\n", result.report.map,
                     result.report.cmc.empty() ? 0.0 : result.report.cmc[0]);
    return result;
}

}  // namespace dpl::pipeline
