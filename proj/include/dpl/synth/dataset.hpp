#pragma once

// Procedural miniature ReID dataset: block-figure "pedestrians" with
// per-identity part colors and a torso stripe pattern, rendered under
// camera-dependent background, brightness and flip. Identities are split
// open-set: train ids never appear in query/gallery.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dpl/common.hpp"
#include "dpl/image.hpp"
#include "dpl/png_io.hpp"

namespace dpl::synth {

struct Rgb {
    double r = 0.0, g = 0.0, b = 0.0;
    auto tie() const { return std::tie(r, g, b); }
    bool operator==(const Rgb& o) const { return tie() == o.tie(); }
};

struct IdentitySpec {
    int person_id = 0;
    Rgb head, torso, legs;
    std::uint64_t pattern_seed = 0;
    double torso_frac = 0.4;  // of body height below the head
    double head_frac = 0.18;

    auto key() const {
        return std::make_tuple(head.r, head.g, head.b, torso.r, torso.g, torso.b, legs.r, legs.g,
                               legs.b, pattern_seed);
    }
};

struct DatasetConfig {
    int num_ids = 16;
    int cams = 3;
    int samples_per_id_per_cam = 4;
    int image_h = 64;
    int image_w = 32;
    double query_frac = 0.5;  // fraction of identities held out for eval
    std::uint64_t seed = 1;

    // Camera perturbation strengths; fixed defaults, overridable in tests.
    double camera_brightness_step = 0.05;

    void check() const {
        require(num_ids >= 2, "DatasetConfig: need at least 2 identities");
        require(cams >= 2, "DatasetConfig: need at least 2 cameras for cross-camera matching");
        require(samples_per_id_per_cam >= 1, "DatasetConfig: need at least 1 sample per id per cam");
        require(image_h == 2 * image_w, "DatasetConfig: image_h must equal 2*image_w");
        require(query_frac > 0.0 && query_frac < 1.0, "DatasetConfig: query_frac must be in (0,1)");
    }
};

namespace detail {
inline double q8(double v) { return std::round(std::min(1.0, std::max(0.0, v)) * 255.0) / 255.0; }
// Colors capped at 0.75 so camera brightness offsets never clip.
inline Rgb rand_color(Rng& rng) {
    return Rgb{q8(rng.uniform(0.05, 0.75)), q8(rng.uniform(0.05, 0.75)), q8(rng.uniform(0.05, 0.75))};
}
}  // namespace detail

// Deterministic in (cfg.seed, person_id); colors are resampled until the
// tuple differs from every lower id, so distinctness is guaranteed.
inline IdentitySpec generate_identity(const DatasetConfig& cfg, int person_id) {
    require(person_id >= 0 && person_id < cfg.num_ids, "generate_identity: person_id out of range");
    auto spec_for = [&](int id) {
        Rng rng(derive_seed(cfg.seed, 0x1d5u, static_cast<std::uint64_t>(id)));
        IdentitySpec s;
        s.person_id = id;
        s.head = detail::rand_color(rng);
        s.torso = detail::rand_color(rng);
        s.legs = detail::rand_color(rng);
        s.pattern_seed = rng.next_u64() % 1024;
        s.torso_frac = rng.uniform(0.34, 0.46);
        s.head_frac = rng.uniform(0.14, 0.2);
        return s;
    };
    IdentitySpec s = spec_for(person_id);
    // Uniqueness against all lower ids (same deterministic stream).
    std::set<decltype(s.key())> seen;
    for (int id = 0; id < person_id; ++id) seen.insert(spec_for(id).key());
    Rng salt(derive_seed(cfg.seed, 0x5a17u, static_cast<std::uint64_t>(person_id)));
    while (seen.count(s.key())) {
        s.torso = detail::rand_color(salt);
        s.pattern_seed = salt.next_u64() % 1024;
    }
    return s;
}

// Draws the block figure. Camera controls background hue, a brightness
// offset and horizontal flip; rng adds small per-sample jitter.
inline ImageSample render_sample(const IdentitySpec& spec, const DatasetConfig& cfg, int camera_id,
                                 Rng& rng) {
    const int h = cfg.image_h, w = cfg.image_w;
    Image img(h, w, 3);

    // Fixed background; camera identity shows as a clean brightness shift
    // plus a horizontal flip on odd cameras.
    const Rgb bg = {0.2, 0.22, 0.24};
    const double brightness = cfg.camera_brightness_step * camera_id;
    const bool flip = (camera_id % 2) == 1;

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(y, x, 0) = bg.r;
            img.at(y, x, 1) = bg.g;
            img.at(y, x, 2) = bg.b;
        }

    // Body layout: margins + head/torso/legs bands.
    const int body_x0 = static_cast<int>(w * 0.25), body_x1 = static_cast<int>(w * 0.75);
    const int body_y0 = static_cast<int>(h * 0.06), body_y1 = static_cast<int>(h * 0.96);
    const int head_y1 = body_y0 + static_cast<int>((body_y1 - body_y0) * spec.head_frac);
    const int torso_y1 = head_y1 + static_cast<int>((body_y1 - body_y0) * spec.torso_frac);
    const int head_x0 = body_x0 + (body_x1 - body_x0) / 4;
    const int head_x1 = body_x1 - (body_x1 - body_x0) / 4;

    const int stripe_period = 2 + static_cast<int>(spec.pattern_seed % 4);
    const int stripe_phase = static_cast<int>((spec.pattern_seed / 4) % stripe_period);

    for (int y = body_y0; y < body_y1; ++y)
        for (int x = body_x0; x < body_x1; ++x) {
            Rgb c;
            if (y < head_y1) {
                if (x < head_x0 || x >= head_x1) continue;
                c = spec.head;
            } else if (y < torso_y1) {
                c = spec.torso;
                if (((y + stripe_phase) / stripe_period) % 2 == 1) {
                    c.r = detail::q8(c.r * 0.6);
                    c.g = detail::q8(c.g * 0.6);
                    c.b = detail::q8(c.b * 0.6);
                }
            } else {
                c = spec.legs;
            }
            img.at(y, x, 0) = c.r;
            img.at(y, x, 1) = c.g;
            img.at(y, x, 2) = c.b;
        }

    if (flip) img = flip_horizontal(img);

    // Camera brightness offset plus faint per-sample noise.
    for (double& v : img.v) v += brightness + rng.uniform(-0.015, 0.015);
    img.quantize8();

    ImageSample s;
    s.pixels = std::move(img);
    s.person_id = spec.person_id;
    s.camera_id = camera_id;
    s.occluded = false;
    return s;
}

struct Dataset {
    DatasetConfig config;
    std::vector<ImageSample> train, query, gallery;

    std::vector<int> train_ids() const {
        std::set<int> ids;
        for (const auto& s : train) ids.insert(s.person_id);
        return {ids.begin(), ids.end()};
    }
};

// Open-set split: the last round(num_ids*query_frac) identities are held
// out for eval. Per eval (id, cam): first sample goes to query, the rest
// to gallery; with a single sample per cam, cam 0 is the query camera.
inline Dataset build_dataset(const DatasetConfig& cfg) {
    cfg.check();
    const int eval_ids = std::max(1, static_cast<int>(std::lround(cfg.num_ids * cfg.query_frac)));
    const int train_ids = cfg.num_ids - eval_ids;
    require(train_ids >= 2, "build_dataset: config leaves fewer than 2 train identities");

    Dataset ds;
    ds.config = cfg;
    for (int id = 0; id < cfg.num_ids; ++id) {
        const IdentitySpec spec = generate_identity(cfg, id);
        const bool is_eval = id >= train_ids;
        for (int cam = 0; cam < cfg.cams; ++cam)
            for (int k = 0; k < cfg.samples_per_id_per_cam; ++k) {
                Rng rng(derive_seed(cfg.seed, 0x9e4du,
                                    (static_cast<std::uint64_t>(id) << 20) ^
                                        (static_cast<std::uint64_t>(cam) << 10) ^
                                        static_cast<std::uint64_t>(k)));
                ImageSample s = render_sample(spec, cfg, cam, rng);
                s.index = k;
                if (!is_eval) {
                    s.split = Split::train;
                    ds.train.push_back(std::move(s));
                } else if (cfg.samples_per_id_per_cam >= 2 ? (k == 0) : (cam == 0)) {
                    s.split = Split::query;
                    ds.query.push_back(std::move(s));
                } else {
                    s.split = Split::gallery;
                    ds.gallery.push_back(std::move(s));
                }
            }
    }

    // Cross-camera matching must be possible for every query.
    for (const auto& q : ds.query) {
        bool ok = false;
        for (const auto& g : ds.gallery)
            if (g.person_id == q.person_id && g.camera_id != q.camera_id) {
                ok = true;
                break;
            }
        require(ok, "build_dataset: query id " + std::to_string(q.person_id) +
                        " has no cross-camera gallery match; config infeasible");
    }
    return ds;
}

// ------------------------------------------------------------------ disk I/O

inline std::string sample_filename(const ImageSample& s) {
    return std::to_string(s.person_id) + "_" + std::to_string(s.camera_id) + "_" +
           std::to_string(s.index) + ".png";
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    nlohmann::json idx;
    idx["config"] = {{"num_ids", ds.config.num_ids},
                     {"cams", ds.config.cams},
                     {"samples_per_id_per_cam", ds.config.samples_per_id_per_cam},
                     {"image_h", ds.config.image_h},
                     {"image_w", ds.config.image_w},
                     {"query_frac", ds.config.query_frac},
                     {"seed", ds.config.seed}};
    idx["samples"] = nlohmann::json::array();
    for (const auto* split : {&ds.train, &ds.query, &ds.gallery}) {
        for (const auto& s : *split) {
            const std::string rel = std::string(split_name(s.split)) + "/" + sample_filename(s);
            std::filesystem::create_directories(dir / split_name(s.split));
            write_png((dir / rel).string(), s.pixels);
            idx["samples"].push_back({{"file", rel},
                                      {"split", split_name(s.split)},
                                      {"person_id", s.person_id},
                                      {"camera_id", s.camera_id},
                                      {"index", s.index}});
        }
    }
    std::ofstream out(dir / "dataset.json");
    if (!out) fail("save_dataset: cannot write index in " + dir.string());
    out << idx.dump(2) << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "dataset.json");
    if (!in) fail("load_dataset: missing dataset.json in " + dir.string());
    nlohmann::json idx;
    try {
        in >> idx;
    } catch (const std::exception& e) {
        fail("load_dataset: invalid dataset.json: " + std::string(e.what()));
    }
    Dataset ds;
    const auto& c = idx.at("config");
    ds.config.num_ids = c.at("num_ids").get<int>();
    ds.config.cams = c.at("cams").get<int>();
    ds.config.samples_per_id_per_cam = c.at("samples_per_id_per_cam").get<int>();
    ds.config.image_h = c.at("image_h").get<int>();
    ds.config.image_w = c.at("image_w").get<int>();
    ds.config.query_frac = c.at("query_frac").get<double>();
    ds.config.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& e : idx.at("samples")) {
        ImageSample s;
        s.split = split_from_name(e.at("split").get<std::string>());
        s.person_id = e.at("person_id").get<int>();
        s.camera_id = e.at("camera_id").get<int>();
        s.index = e.at("index").get<int>();
        s.pixels = read_png((dir / e.at("file").get<std::string>()).string(), 3);
        (s.split == Split::train ? ds.train : s.split == Split::query ? ds.query : ds.gallery)
            .push_back(std::move(s));
    }
    return ds;
}

}  // namespace dpl::synth
