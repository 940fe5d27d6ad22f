#pragma once

// Brute-force CMC/mAP oracle: full pairwise scan and an explicit protocol
// walk, sharing no ranking or AP code with the implementation under test.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpl/reval/retrieval.hpp"

namespace oracle {

struct CmcMapResult {
    std::vector<double> cmc;
    double map = 0.0;
    int excluded = 0;
};

inline CmcMapResult cmc_map_bruteforce(const dpl::reval::EmbeddingSet& q,
                                       const dpl::reval::EmbeddingSet& g) {
    const int nq = q.features.dim(0), ng = g.features.dim(0), d = q.features.dim(1);
    CmcMapResult res;
    res.cmc.assign(static_cast<std::size_t>(ng), 0.0);
    int counted = 0;
    double ap_sum = 0.0;
    for (int i = 0; i < nq; ++i) {
        struct Entry {
            double sim;
            int idx;
        };
        std::vector<Entry> entries;
        for (int j = 0; j < ng; ++j) {
            if (g.ids[static_cast<std::size_t>(j)] == q.ids[static_cast<std::size_t>(i)] &&
                g.cams[static_cast<std::size_t>(j)] == q.cams[static_cast<std::size_t>(i)])
                continue;
            double dot = 0, nu = 0, nv = 0;
            for (int k = 0; k < d; ++k) {
                dot += q.features.at(i, k) * g.features.at(j, k);
                nu += q.features.at(i, k) * q.features.at(i, k);
                nv += g.features.at(j, k) * g.features.at(j, k);
            }
            entries.push_back({dot / std::sqrt(nu * nv), j});
        }
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            if (a.sim != b.sim) return a.sim > b.sim;
            return a.idx < b.idx;
        });
        bool any = false;
        for (const auto& e : entries)
            any |= g.ids[static_cast<std::size_t>(e.idx)] == q.ids[static_cast<std::size_t>(i)];
        if (!any) {
            res.excluded += 1;
            continue;
        }
        int hits = 0, first = -1;
        double ap = 0;
        for (std::size_t r = 0; r < entries.size(); ++r)
            if (g.ids[static_cast<std::size_t>(entries[r].idx)] ==
                q.ids[static_cast<std::size_t>(i)]) {
                ++hits;
                ap += static_cast<double>(hits) / (r + 1);
                if (first < 0) first = static_cast<int>(r);
            }
        ap_sum += ap / hits;
        for (std::size_t k = static_cast<std::size_t>(first); k < res.cmc.size(); ++k)
            res.cmc[k] += 1;
        ++counted;
    }
    for (double& v : res.cmc) v /= counted;
    res.map = counted ? ap_sum / counted : 0.0;
    return res;
}

inline dpl::reval::EmbeddingSet random_embedding_set(int n, int d, dpl::Rng& rng, int max_id,
                                                     int cams) {
    dpl::reval::EmbeddingSet e;
    e.features = dpl::nn::Tensor({n, d});
    for (auto& v : e.features.data) v = rng.normal();
    for (int i = 0; i < n; ++i) {
        e.ids.push_back(static_cast<int>(rng.bounded(static_cast<std::uint64_t>(max_id))));
        e.cams.push_back(static_cast<int>(rng.bounded(static_cast<std::uint64_t>(cams))));
    }
    return e;
}

}  // namespace oracle
