#pragma once

// Retrieval evaluation: embedding extraction, deterministic ranking, and
// the camera-aware CMC / mAP protocol (gallery entries sharing both id and
// camera with the query are excluded; queries left without any valid match
// are dropped and counted).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpl/image.hpp"
#include "dpl/model/model.hpp"
#include "dpl/png_io.hpp"

namespace dpl::reval {

enum class Metric { cosine, euclidean };

inline Metric metric_from_name(const std::string& s) {
    if (s == "cosine") return Metric::cosine;
    if (s == "euclidean") return Metric::euclidean;
    fail("unknown metric: " + s);
}

struct EmbeddingSet {
    nn::Tensor features;  // [n, D]
    std::vector<int> ids, cams;
};

// Fused (WGFF) projected features, one row per input, in input order.
inline EmbeddingSet extract_embeddings(const model::ReidModel& m,
                                       const std::vector<ImageSample>& samples) {
    EmbeddingSet out;
    out.features = nn::Tensor({static_cast<int>(samples.size()), m.cfg.embed_dim});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto e = m.embed(samples[i].pixels);
        for (int j = 0; j < m.cfg.embed_dim; ++j)
            out.features.at(static_cast<int>(i), j) = e.projected.at(j);
        out.ids.push_back(samples[i].person_id);
        out.cams.push_back(samples[i].camera_id);
    }
    return out;
}

inline double cosine_sim(const nn::Tensor& a, int ra, const nn::Tensor& b, int rb) {
    const int d = a.dim(1);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int j = 0; j < d; ++j) {
        dot += a.at(ra, j) * b.at(rb, j);
        na += a.at(ra, j) * a.at(ra, j);
        nb += b.at(rb, j) * b.at(rb, j);
    }
    require(na > 0.0 && nb > 0.0, "rank_list: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double euclidean_dist(const nn::Tensor& a, int ra, const nn::Tensor& b, int rb) {
    const int d = a.dim(1);
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
        const double diff = a.at(ra, j) - b.at(rb, j);
        s += diff * diff;
    }
    return std::sqrt(s);
}

// Gallery indices by descending similarity (or ascending distance); ties
// break toward the lower index.
inline std::vector<int> rank_list(const nn::Tensor& query_row, const nn::Tensor& gallery,
                                  Metric metric = Metric::cosine) {
    require(query_row.ndim() == 2 && query_row.dim(0) == 1, "rank_list: query must be [1,D]");
    require(gallery.ndim() == 2 && gallery.dim(0) >= 1, "rank_list: empty gallery");
    const int m = gallery.dim(0);
    std::vector<double> score(static_cast<std::size_t>(m));
    for (int g = 0; g < m; ++g)
        score[static_cast<std::size_t>(g)] = metric == Metric::cosine
                                                 ? cosine_sim(query_row, 0, gallery, g)
                                                 : -euclidean_dist(query_row, 0, gallery, g);
    std::vector<int> order(static_cast<std::size_t>(m));
    for (int g = 0; g < m; ++g) order[static_cast<std::size_t>(g)] = g;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (score[static_cast<std::size_t>(a)] != score[static_cast<std::size_t>(b)])
            return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
        return a < b;
    });
    return order;
}

struct EvalReport {
    std::vector<double> cmc;  // cmc[k-1] = Rank-k hit rate
    double map = 0.0;
    std::vector<double> per_query_ap;
    int excluded_queries = 0;

    nlohmann::json to_json() const {
        return {{"map", map},
                {"cmc", cmc},
                {"excluded_queries", excluded_queries},
                {"per_query_ap", per_query_ap}};
    }
};

// Standard protocol: per query, drop same-id same-camera gallery entries,
// rank the rest, CMC@k from the first valid hit, AP as mean precision at
// each relevant position.
inline EvalReport compute_cmc_map(const EmbeddingSet& query, const EmbeddingSet& gallery,
                                  Metric metric = Metric::cosine) {
    require(query.features.ndim() == 2 && gallery.features.ndim() == 2,
            "compute_cmc_map: feature matrices required");
    const int nq = query.features.dim(0), ng = gallery.features.dim(0);
    require(ng >= 1, "compute_cmc_map: empty gallery");

    EvalReport rep;
    rep.cmc.assign(static_cast<std::size_t>(ng), 0.0);
    int counted = 0;
    for (int q = 0; q < nq; ++q) {
        std::vector<int> keep;
        for (int g = 0; g < ng; ++g)
            if (!(gallery.ids[static_cast<std::size_t>(g)] == query.ids[static_cast<std::size_t>(q)] &&
                  gallery.cams[static_cast<std::size_t>(g)] == query.cams[static_cast<std::size_t>(q)]))
                keep.push_back(g);
        bool has_match = false;
        for (int g : keep)
            has_match |= gallery.ids[static_cast<std::size_t>(g)] == query.ids[static_cast<std::size_t>(q)];
        if (!has_match) {
            rep.excluded_queries += 1;
            continue;
        }
        nn::Tensor qrow({1, query.features.dim(1)});
        for (int j = 0; j < query.features.dim(1); ++j) qrow.at(0, j) = query.features.at(q, j);
        nn::Tensor grows({static_cast<int>(keep.size()), gallery.features.dim(1)});
        for (std::size_t r = 0; r < keep.size(); ++r)
            for (int j = 0; j < gallery.features.dim(1); ++j)
                grows.at(static_cast<int>(r), j) = gallery.features.at(keep[r], j);
        const std::vector<int> order = rank_list(qrow, grows, metric);

        int first_hit = -1, hits = 0;
        double ap = 0.0;
        for (std::size_t rank = 0; rank < order.size(); ++rank) {
            const int g = keep[static_cast<std::size_t>(order[rank])];
            if (gallery.ids[static_cast<std::size_t>(g)] == query.ids[static_cast<std::size_t>(q)]) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
                if (first_hit < 0) first_hit = static_cast<int>(rank);
            }
        }
        ap /= hits;
        rep.per_query_ap.push_back(ap);
        for (std::size_t k = static_cast<std::size_t>(first_hit); k < rep.cmc.size(); ++k)
            rep.cmc[k] += 1.0;
        ++counted;
    }
    require(counted > 0, "compute_cmc_map: no query had a valid cross-camera match");
    for (double& v : rep.cmc) v /= counted;
    double sum = 0.0;
    for (double ap : rep.per_query_ap) sum += ap;
    rep.map = sum / counted;
    return rep;
}

inline void write_report(const EvalReport& rep, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("write_report: cannot open " + path);
    out << rep.to_json().dump(2) << "\n";
}

// n x D float32 blob with a JSON header carrying shape, ids and cams.
inline void export_embeddings(const EmbeddingSet& e, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("export_embeddings: cannot open " + path);
    const char magic[8] = {'D', 'P', 'L', 'E', 'M', 'B', '0', '1'};
    out.write(magic, 8);
    nlohmann::json hdr = {{"shape", {e.features.dim(0), e.features.dim(1)}},
                          {"dtype", "float32"},
                          {"ids", e.ids},
                          {"cams", e.cams}};
    const std::string h = hdr.dump();
    const std::uint64_t hlen = h.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    std::vector<float> buf(e.features.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(e.features.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

// Per-cell L2 norm of the fused intermediate feature, normalized to [0,1]
// and upscaled to image size. Stands in for attention visualization.
inline Image feature_norm_heatmap(const model::ReidModel& m, const ImageSample& s) {
    const auto e = m.embed(s.pixels);
    Image map;
    if (m.cfg.variant == model::Variant::grid) {
        const int c = e.intermediate.dim(0), hp = e.intermediate.dim(1), wp = e.intermediate.dim(2);
        map = Image(hp, wp, 1);
        for (int y = 0; y < hp; ++y)
            for (int x = 0; x < wp; ++x) {
                double ssum = 0.0;
                for (int ch = 0; ch < c; ++ch) ssum += e.intermediate.at(ch, y, x) * e.intermediate.at(ch, y, x);
                map.at(y, x, 0) = std::sqrt(ssum);
            }
    } else {
        // token variant: skip the class token, lay cells back on the grid
        const int hp = m.cfg.grid_h(), wp = m.cfg.grid_w(), c = e.intermediate.dim(1);
        map = Image(hp, wp, 1);
        for (int y = 0; y < hp; ++y)
            for (int x = 0; x < wp; ++x) {
                const int row = 1 + y * wp + x;
                double ssum = 0.0;
                for (int ch = 0; ch < c; ++ch) ssum += e.intermediate.at(row, ch) * e.intermediate.at(row, ch);
                map.at(y, x, 0) = std::sqrt(ssum);
            }
    }
    double lo = map.v[0], hi = map.v[0];
    for (double v : map.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo;
    for (double& v : map.v) v = span > 0.0 ? (v - lo) / span : 0.0;
    return resize_nearest(map, s.pixels.h, s.pixels.w);
}

}  // namespace dpl::reval
