#pragma once

// Occlusion instance library: full-frame RGBA occluder canvases with fixed
// placement anchors, a strict JSON manifest, category-balanced sampling,
// and a procedural builder so the test suite never downloads anything.
//
// Coverage is the fraction of canvas pixels with alpha > 0.5; instances at
// or above 0.4 coverage are "strong", the rest "weak".

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpl/common.hpp"
#include "dpl/image.hpp"
#include "dpl/png_io.hpp"

namespace dpl::occlib {

enum class Category { strong, weak };

inline const char* category_name(Category c) { return c == Category::strong ? "strong" : "weak"; }

inline Category category_from_name(const std::string& s) {
    if (s == "strong") return Category::strong;
    if (s == "weak") return Category::weak;
    fail("unknown occluder category: " + s);
}

constexpr double kStrongCoverageThreshold = 0.4;
constexpr double kCoverageTolerance = 1e-3;

struct Anchor {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
    bool valid() const { return 0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0; }
};

struct OcclusionInstance {
    std::string id;
    Image pixels;  // RGBA canvas, alpha last
    Category category = Category::weak;
    Anchor anchor;
    double coverage = 0.0;
    std::string source;
};

inline double recompute_coverage(const Image& rgba) {
    require(rgba.c == 4, "recompute_coverage: expects RGBA");
    std::size_t opaque = 0;
    for (int y = 0; y < rgba.h; ++y)
        for (int x = 0; x < rgba.w; ++x)
            if (rgba.at(y, x, 3) > 0.5) ++opaque;
    return rgba.pixels() ? static_cast<double>(opaque) / static_cast<double>(rgba.pixels()) : 0.0;
}

// All instance invariants, reported rather than thrown.
inline std::vector<std::string> validate_instance(const OcclusionInstance& inst) {
    std::vector<std::string> violations;
    if (inst.pixels.c != 4) {
        violations.push_back("pixels are not RGBA");
        return violations;
    }
    if (!inst.anchor.valid())
        violations.push_back("anchor rectangle out of order or range");
    bool any_opaque = false;
    bool alpha_in_range = true;
    for (int y = 0; y < inst.pixels.h && alpha_in_range; ++y)
        for (int x = 0; x < inst.pixels.w; ++x) {
            const double a = inst.pixels.at(y, x, 3);
            if (a < 0.0 || a > 1.0) {
                alpha_in_range = false;
                break;
            }
            if (a > 0.0) any_opaque = true;
        }
    if (!alpha_in_range) violations.push_back("alpha outside [0,1]");
    if (alpha_in_range && !any_opaque) violations.push_back("no opaque pixel");
    if (alpha_in_range) {
        const double rec = recompute_coverage(inst.pixels);
        if (std::fabs(rec - inst.coverage) > kCoverageTolerance)
            violations.push_back("coverage mismatch (stored " + std::to_string(inst.coverage) +
                                 ", recomputed " + std::to_string(rec) + ")");
    }
    if (inst.category == Category::strong && inst.coverage < kStrongCoverageThreshold)
        violations.push_back("strong instance with coverage below 0.4");
    if (inst.category == Category::weak && inst.coverage >= kStrongCoverageThreshold)
        violations.push_back("weak instance with coverage at or above 0.4");
    return violations;
}

struct LibraryManifest {
    int version = 1;
    std::vector<OcclusionInstance> instances;
    std::map<Category, int> category_counts;

    void recount() {
        category_counts.clear();
        for (const auto& inst : instances) category_counts[inst.category] += 1;
    }

    const OcclusionInstance* find(const std::string& id) const {
        for (const auto& inst : instances)
            if (inst.id == id) return &inst;
        return nullptr;
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key())) fail("manifest schema violation: unknown key '" + it.key() + "' in " + where);
}

}  // namespace detail

inline LibraryManifest load_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) fail("load_manifest: cannot open " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail("load_manifest: invalid JSON in " + manifest_path.string() + ": " + e.what());
    }
    if (!j.is_object()) fail("load_manifest: top level must be an object");
    detail::check_keys(j, {"version", "instances"}, "manifest");
    if (!j.contains("version") || !j["version"].is_number_integer())
        fail("load_manifest: missing integer 'version'");
    if (!j.contains("instances") || !j["instances"].is_array())
        fail("load_manifest: missing array 'instances'");

    LibraryManifest lib;
    lib.version = j["version"].get<int>();
    const auto base = manifest_path.parent_path();
    std::set<std::string> seen_ids;
    for (const auto& e : j["instances"]) {
        if (!e.is_object()) fail("load_manifest: instance entries must be objects");
        detail::check_keys(e, {"id", "file", "category", "anchor", "coverage", "source"}, "instance");
        for (const char* k : {"id", "file", "category", "anchor", "coverage", "source"})
            if (!e.contains(k)) fail(std::string("load_manifest: instance missing key '") + k + "'");
        OcclusionInstance inst;
        inst.id = e["id"].get<std::string>();
        if (!seen_ids.insert(inst.id).second) fail("load_manifest: duplicate instance id " + inst.id);
        inst.category = category_from_name(e["category"].get<std::string>());
        const auto& a = e["anchor"];
        if (!a.is_array() || a.size() != 4) fail("load_manifest: anchor must be [x0,y0,x1,y1] for id " + inst.id);
        inst.anchor = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>(), a[3].get<double>()};
        inst.coverage = e["coverage"].get<double>();
        inst.source = e["source"].get<std::string>();
        const auto file = base / e["file"].get<std::string>();
        if (!std::filesystem::exists(file))
            fail("load_manifest: instance " + inst.id + " references missing file " + file.string());
        inst.pixels = read_png(file.string(), 4);
        const auto violations = validate_instance(inst);
        if (!violations.empty())
            fail("load_manifest: instance " + inst.id + " invalid: " + violations.front());
        lib.instances.push_back(std::move(inst));
    }
    lib.recount();
    return lib;
}

// Writes manifest.json plus one RGBA PNG per instance under images/.
inline void save_manifest(const LibraryManifest& lib, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    nlohmann::json j;
    j["version"] = lib.version;
    j["instances"] = nlohmann::json::array();
    for (const auto& inst : lib.instances) {
        const std::string rel = "images/" + inst.id + ".png";
        write_png((dir / rel).string(), inst.pixels);
        nlohmann::json e;
        e["id"] = inst.id;
        e["file"] = rel;
        e["category"] = category_name(inst.category);
        e["anchor"] = {inst.anchor.x0, inst.anchor.y0, inst.anchor.x1, inst.anchor.y1};
        e["coverage"] = inst.coverage;
        e["source"] = inst.source;
        j["instances"].push_back(std::move(e));
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) fail("save_manifest: cannot write to " + dir.string());
    out << j.dump(2) << "\n";
}

// Category-balanced draw: Bernoulli(strong_weight) picks the category,
// then a uniform index inside it. An empty category folds into the other.
inline const OcclusionInstance& sample_instance(const LibraryManifest& lib, Rng& rng,
                                                double strong_weight) {
    require(!lib.instances.empty(), "sample_instance: empty library");
    require(strong_weight >= 0.0 && strong_weight <= 1.0, "sample_instance: strong_weight out of [0,1]");
    std::vector<const OcclusionInstance*> strong, weak;
    for (const auto& inst : lib.instances)
        (inst.category == Category::strong ? strong : weak).push_back(&inst);
    const std::vector<const OcclusionInstance*>* pool = nullptr;
    if (strong.empty())
        pool = &weak;
    else if (weak.empty())
        pool = &strong;
    else
        pool = (rng.uniform() < strong_weight) ? &strong : &weak;
    return *(*pool)[rng.bounded(pool->size())];
}

// ----------------------------------------------------------- synthetic library

namespace detail {

inline double q8(double v) { return std::round(std::min(1.0, std::max(0.0, v)) * 255.0) / 255.0; }

// Occluders carry a high-frequency two-tone texture (checker, diagonal
// stripes or speckle) that pedestrian renderings never exhibit, the way
// real cars, fences and barriers differ texturally from clothing.
struct Fill {
    double r1, g1, b1, r2, g2, b2;
    int pattern;  // 0 checker, 1 diagonal, 2 speckle
    int period;
    std::uint64_t salt;

    static Fill random(Rng& rng) {
        Fill f;
        f.r1 = q8(rng.uniform(0.1, 0.9));
        f.g1 = q8(rng.uniform(0.1, 0.9));
        f.b1 = q8(rng.uniform(0.1, 0.9));
        f.r2 = q8(std::fmod(f.r1 + 0.45, 1.0));
        f.g2 = q8(std::fmod(f.g1 + 0.45, 1.0));
        f.b2 = q8(std::fmod(f.b1 + 0.45, 1.0));
        f.pattern = static_cast<int>(rng.bounded(3));
        f.period = 2 + static_cast<int>(rng.bounded(3));
        f.salt = rng.next_u64();
        return f;
    }

    bool second(int y, int x) const {
        switch (pattern) {
            case 0: return ((y / period) + (x / period)) % 2 == 1;
            case 1: return ((y + x) / period) % 2 == 1;
            default: {
                std::uint64_t s = salt ^ (static_cast<std::uint64_t>(y) << 20) ^
                                  static_cast<std::uint64_t>(x);
                return splitmix64(s) % 2 == 1;
            }
        }
    }
};

inline void paint(Image& img, int y, int x, const Fill& f) {
    if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
    const bool alt = f.second(y, x);
    img.at(y, x, 0) = alt ? f.r2 : f.r1;
    img.at(y, x, 1) = alt ? f.g2 : f.g1;
    img.at(y, x, 2) = alt ? f.b2 : f.b1;
    img.at(y, x, 3) = 1.0;
}

inline void paint(Image& img, int y, int x, double r, double g, double b) {
    if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
    img.at(y, x, 0) = r;
    img.at(y, x, 1) = g;
    img.at(y, x, 2) = b;
    img.at(y, x, 3) = 1.0;
}

inline Anchor opaque_bbox(const Image& rgba) {
    int y0 = rgba.h, y1 = -1, x0 = rgba.w, x1 = -1;
    for (int y = 0; y < rgba.h; ++y)
        for (int x = 0; x < rgba.w; ++x)
            if (rgba.at(y, x, 3) > 0.5) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    require(y1 >= 0, "opaque_bbox: canvas has no opaque pixel");
    return Anchor{static_cast<double>(x0) / rgba.w, static_cast<double>(y0) / rgba.h,
                  static_cast<double>(x1 + 1) / rgba.w, static_cast<double>(y1 + 1) / rgba.h};
}

// Car silhouette across the bottom: body slab, cabin, wheels. Strong.
inline Image draw_car(int h, int w, Rng& rng) {
    Image img(h, w, 4);
    const Fill fill = Fill::random(rng);
    const int body_top = static_cast<int>(h * rng.uniform(0.52, 0.58));
    const int cabin_top = body_top - static_cast<int>(h * 0.08);
    const int cabin_x0 = static_cast<int>(w * 0.15), cabin_x1 = static_cast<int>(w * 0.8);
    for (int y = cabin_top; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (y >= body_top || (x >= cabin_x0 && x < cabin_x1)) paint(img, y, x, fill);
    const int wheel_r = std::max(2, h / 12);
    for (int cx : {w / 5, 4 * w / 5}) {
        const int cy = h - wheel_r;
        for (int y = cy - wheel_r; y <= cy + wheel_r; ++y)
            for (int x = cx - wheel_r; x <= cx + wheel_r; ++x)
                if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= wheel_r * wheel_r)
                    paint(img, y, x, 0.05, 0.05, 0.05);
    }
    return img;
}

// Vertical slab (tree trunk / wall edge) on one side. Strong.
inline Image draw_slab(int h, int w, Rng& rng) {
    Image img(h, w, 4);
    const Fill fill = Fill::random(rng);
    const bool left = rng.uniform() < 0.5;
    const int span = static_cast<int>(w * rng.uniform(0.42, 0.55));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (left ? x < span : x >= w - span) paint(img, y, x, fill);
    return img;
}

// Horizontal barrier bar across the legs. Weak.
inline Image draw_bar(int h, int w, Rng& rng) {
    Image img(h, w, 4);
    const Fill fill = Fill::random(rng);
    const int top = static_cast<int>(h * rng.uniform(0.6, 0.75));
    const int thick = std::max(2, static_cast<int>(h * rng.uniform(0.06, 0.12)));
    for (int y = top; y < std::min(h, top + thick); ++y)
        for (int x = 0; x < w; ++x) paint(img, y, x, fill);
    // posts
    const int post_w = std::max(1, w / 16);
    for (int x0 : {w / 6, 5 * w / 6}) {
        for (int y = top; y < h; ++y)
            for (int x = x0; x < std::min(w, x0 + post_w); ++x) paint(img, y, x, fill);
    }
    return img;
}

// Umbrella fan over the head region. Weak.
inline Image draw_umbrella(int h, int w, Rng& rng) {
    Image img(h, w, 4);
    const Fill fill = Fill::random(rng);
    const int cy = static_cast<int>(h * 0.22);
    const int cx = w / 2;
    const int rad = static_cast<int>(w * rng.uniform(0.42, 0.5));
    for (int y = 0; y <= cy; ++y)
        for (int x = 0; x < w; ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= rad * rad) paint(img, y, x, fill);
    for (int y = cy; y < static_cast<int>(h * 0.45); ++y) paint(img, y, cx, 0.2, 0.2, 0.2);
    return img;
}

// Small rounded post (hydrant / bollard) near the feet. Weak.
inline Image draw_post(int h, int w, Rng& rng) {
    Image img(h, w, 4);
    const Fill fill = Fill::random(rng);
    const int top = static_cast<int>(h * 0.72);
    const int cx = static_cast<int>(w * rng.uniform(0.25, 0.75));
    const int half = std::max(2, w / 10);
    for (int y = top; y < h; ++y)
        for (int x = cx - half; x <= cx + half; ++x) paint(img, y, x, fill);
    const int cap_r = half + 1;
    for (int y = top - cap_r; y <= top; ++y)
        for (int x = cx - cap_r; x <= cx + cap_r; ++x)
            if ((y - top) * (y - top) + (x - cx) * (x - cx) <= cap_r * cap_r) paint(img, y, x, fill);
    return img;
}

// Carried box (backpack / signboard) at torso height. Weak.
inline Image draw_box(int h, int w, Rng& rng) {
    Image img(h, w, 4);
    const Fill fill = Fill::random(rng);
    const int y0 = static_cast<int>(h * rng.uniform(0.35, 0.45));
    const int bh = static_cast<int>(h * rng.uniform(0.15, 0.22));
    const bool left = rng.uniform() < 0.5;
    const int bw = static_cast<int>(w * rng.uniform(0.3, 0.45));
    const int x0 = left ? 0 : w - bw;
    for (int y = y0; y < std::min(h, y0 + bh); ++y)
        for (int x = x0; x < std::min(w, x0 + bw); ++x) paint(img, y, x, fill);
    return img;
}

}  // namespace detail

// Procedural library: cycles through occluder archetypes so both categories
// are always populated. Canvas defaults are 2x the dataset image size to
// exercise the resize path.
inline LibraryManifest build_synthetic_library(int count, std::uint64_t seed, int canvas_h = 128,
                                               int canvas_w = 64) {
    require(count >= 1, "build_synthetic_library: count must be positive");
    LibraryManifest lib;
    lib.version = 1;
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        OcclusionInstance inst;
        Image img;
        std::string kind;
        switch (i % 6) {
            case 0: img = detail::draw_car(canvas_h, canvas_w, rng); kind = "car"; break;
            case 1: img = detail::draw_bar(canvas_h, canvas_w, rng); kind = "barrier"; break;
            case 2: img = detail::draw_slab(canvas_h, canvas_w, rng); kind = "wall"; break;
            case 3: img = detail::draw_umbrella(canvas_h, canvas_w, rng); kind = "umbrella"; break;
            case 4: img = detail::draw_post(canvas_h, canvas_w, rng); kind = "hydrant"; break;
            default: img = detail::draw_box(canvas_h, canvas_w, rng); kind = "box"; break;
        }
        img.quantize8();  // keep pixel data exactly representable in 8-bit PNG
        inst.pixels = std::move(img);
        inst.coverage = recompute_coverage(inst.pixels);
        inst.category = inst.coverage >= kStrongCoverageThreshold ? Category::strong : Category::weak;
        inst.anchor = detail::opaque_bbox(inst.pixels);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%03d", kind.c_str(), i);
        inst.id = buf;
        inst.source = "synthetic:" + kind;
        lib.instances.push_back(std::move(inst));
    }
    lib.recount();
    return lib;
}

}  // namespace dpl::occlib
