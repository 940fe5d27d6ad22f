#pragma once

// Loss zoo for the two training stages: the bidirectional image-text
// contrastive pair, label-smoothed cross entropy, batch-hard triplet, and
// image-to-text cross entropy over the fused identity bank.
//
// Graph builders (suffix _g) operate on autodiff vars; thin tensor-level
// wrappers with the contract signatures sit below them.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpl/model/fusion.hpp"
#include "dpl/nn/autodiff.hpp"

namespace dpl::train {

using model::similarity_matrix;
using nn::Tensor;
using nn::Var;

// Image-to-text contrastive loss. Row i of ft must hold the text feature
// of label y_i, so the positive logit sits on the diagonal.
inline Var loss_i2t_g(const Var& fv, const Var& ft, double tau) {
    require(fv->value.ndim() == 2 && ft->value.ndim() == 2 &&
                fv->value.shape == ft->value.shape,
            "loss_i2t: feature matrices must both be [B,D]");
    const int b = fv->value.dim(0);
    Var lsm = nn::log_softmax_rows(similarity_matrix(fv, ft, tau));
    std::vector<std::pair<int, int>> diag;
    diag.reserve(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) diag.emplace_back(i, i);
    return nn::scale(nn::mean_all(nn::gather_entries(lsm, std::move(diag))), -1.0);
}

// Text-to-image contrastive loss for one identity: softmax over all batch
// images against that identity's text feature, averaged over positives.
inline Var loss_t2i_single_g(const Var& fv, const Var& ft_y, int y,
                             const std::vector<int>& labels, double tau) {
    require(fv->value.dim(0) == static_cast<int>(labels.size()), "loss_t2i: label count mismatch");
    std::vector<std::pair<int, int>> positives;
    for (int p = 0; p < static_cast<int>(labels.size()); ++p)
        if (labels[static_cast<std::size_t>(p)] == y) positives.emplace_back(0, p);
    require(!positives.empty(), "loss_t2i: empty positive set for identity " + std::to_string(y));
    Var row = nn::log_softmax_rows(similarity_matrix(ft_y, fv, tau));  // [1,B]
    return nn::scale(nn::mean_all(nn::gather_entries(row, std::move(positives))), -1.0);
}

// Scalar objective: mean of per-identity terms over the distinct labels in
// the batch. ft rows follow batch order (duplicates allowed).
inline Var loss_t2i_g(const Var& fv, const Var& ft, const std::vector<int>& labels, double tau) {
    const int b = fv->value.dim(0);
    require(b == static_cast<int>(labels.size()), "loss_t2i: label count mismatch");
    Var lsm = nn::log_softmax_rows(similarity_matrix(ft, fv, tau));  // row j: images vs text j
    std::vector<int> first_index;
    std::vector<std::pair<int, int>> entries;
    std::vector<double> weights;
    for (int j = 0; j < b; ++j) {
        bool seen = false;
        for (int k = 0; k < j; ++k) seen |= labels[k] == labels[j];
        if (seen) continue;
        first_index.push_back(j);
        int pos_count = 0;
        for (int p = 0; p < b; ++p) pos_count += labels[p] == labels[j];
        for (int p = 0; p < b; ++p)
            if (labels[p] == labels[j]) {
                entries.emplace_back(j, p);
                weights.push_back(1.0 / pos_count);
            }
    }
    const double inv_ids = 1.0 / static_cast<double>(first_index.size());
    for (double& w : weights) w *= inv_ids;
    Var picked = nn::gather_entries(lsm, std::move(entries));
    Var weighted = nn::mul(picked, nn::constant(Tensor({static_cast<int>(weights.size())}, weights)));
    return nn::scale(nn::sum_all(weighted), -1.0);
}

// Label-smoothed cross entropy over given logits: q = (1-eps)*onehot + eps/N.
inline Var loss_smoothed_ce_g(const Var& logits, const std::vector<int>& targets, double eps) {
    require(logits->value.ndim() == 2, "loss_smoothed_ce: logits must be [B,N]");
    const int b = logits->value.dim(0), n = logits->value.dim(1);
    require(b == static_cast<int>(targets.size()), "loss_smoothed_ce: target count mismatch");
    require(eps >= 0.0 && eps < 1.0, "loss_smoothed_ce: eps out of [0,1)");
    Tensor q({b, n});
    for (int i = 0; i < b; ++i) {
        const int y = targets[static_cast<std::size_t>(i)];
        require(y >= 0 && y < n, "loss_smoothed_ce: invalid class id " + std::to_string(y));
        for (int k = 0; k < n; ++k) q.at(i, k) = (k == y ? 1.0 - eps : 0.0) + eps / n;
    }
    Var weighted = nn::mul(nn::log_softmax_rows(logits), nn::constant(std::move(q)));
    return nn::scale(nn::sum_all(weighted), -1.0 / b);
}

// Batch-hard triplet with Euclidean distances: per anchor the farthest
// positive and nearest negative, hinged at the margin, averaged over
// anchors. Dedicated op; the backward routes through the selected pairs.
inline Var loss_triplet_g(const Var& embeds, const std::vector<int>& labels, double margin) {
    require(embeds->value.ndim() == 2, "loss_triplet: embeds must be [B,D]");
    const int b = embeds->value.dim(0), d = embeds->value.dim(1);
    require(b == static_cast<int>(labels.size()), "loss_triplet: label count mismatch");
    require(margin >= 0.0, "loss_triplet: margin must be >= 0");

    auto dist = [&](const Tensor& x, int i, int j) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) {
            const double diff = x.at(i, k) - x.at(j, k);
            s += diff * diff;
        }
        return std::sqrt(s);
    };

    struct Pick {
        int pos = -1, neg = -1;
        double dp = 0.0, dn = 0.0;
        bool active = false;  // hinge > 0
    };
    std::vector<Pick> picks(static_cast<std::size_t>(b));
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
        double dp = -1.0, dn = -1.0;
        int jp = -1, jn = -1;
        for (int j = 0; j < b; ++j) {
            const double dij = dist(embeds->value, i, j);
            if (labels[j] == labels[i]) {
                if (dij > dp) {
                    dp = dij;
                    jp = j;
                }
            } else if (dn < 0.0 || dij < dn) {
                dn = dij;
                jn = j;
            }
        }
        require(jp >= 0, "loss_triplet: identity without positive in batch");
        require(jn >= 0, "loss_triplet: identity without negative in batch");
        const double hinge = dp - dn + margin;
        picks[static_cast<std::size_t>(i)] = {jp, jn, dp, dn, hinge > 0.0};
        total += std::max(0.0, hinge);
    }
    total /= b;

    return nn::make_op(Tensor::scalar(total), {embeds},
                       [b, d, picks = std::move(picks)](nn::Node& nd) {
        nn::Node& in = *nd.inputs[0];
        in.ensure_grad();
        const double g = nd.grad.data[0] / b;
        for (int i = 0; i < b; ++i) {
            const Pick& pk = picks[static_cast<std::size_t>(i)];
            if (!pk.active) continue;
            // d||x_i - x_j|| / dx = (x_i - x_j)/||.||; skip zero-distance pairs.
            if (pk.dp > 1e-12) {
                for (int k = 0; k < d; ++k) {
                    const double diff = (in.value.at(i, k) - in.value.at(pk.pos, k)) / pk.dp;
                    in.grad.at(i, k) += g * diff;
                    in.grad.at(pk.pos, k) -= g * diff;
                }
            }
            if (pk.dn > 1e-12) {
                for (int k = 0; k < d; ++k) {
                    const double diff = (in.value.at(i, k) - in.value.at(pk.neg, k)) / pk.dn;
                    in.grad.at(i, k) -= g * diff;
                    in.grad.at(pk.neg, k) += g * diff;
                }
            }
        }
    });
}

// Image-to-identity-text cross entropy (smoothed) over a text bank held in
// the graph, so alpha receives gradient through the bank rows.
inline Var loss_i2tce_g(const Var& fv, const Var& bank, const std::vector<int>& targets,
                        double eps, double tau) {
    return loss_smoothed_ce_g(similarity_matrix(fv, bank, tau), targets, eps);
}

// ----------------------------- tensor-level contract wrappers (no grads)

inline double loss_i2t(const Tensor& fv, const Tensor& ft, const std::vector<int>& labels,
                       double tau) {
    require(fv.ndim() == 2 && static_cast<int>(labels.size()) == fv.dim(0),
            "loss_i2t: label count mismatch");
    return loss_i2t_g(nn::constant(fv), nn::constant(ft), tau)->value.at(0);
}

inline double loss_t2i(const Tensor& fv, const Tensor& ft_y, int y, const std::vector<int>& labels,
                       double tau) {
    Tensor row({1, static_cast<int>(ft_y.numel())}, ft_y.data);
    return loss_t2i_single_g(nn::constant(fv), nn::constant(row), y, labels, tau)->value.at(0);
}

inline double loss_id(const Tensor& logits, int y, double eps) {
    Tensor row({1, static_cast<int>(logits.numel())}, logits.data);
    return loss_smoothed_ce_g(nn::constant(row), {y}, eps)->value.at(0);
}

inline double loss_triplet(const Tensor& embeds, const std::vector<int>& labels, double margin) {
    return loss_triplet_g(nn::constant(embeds), labels, margin)->value.at(0);
}

inline double loss_i2tce(const Tensor& f_v, const Tensor& text_bank, int y, double eps, double tau) {
    Tensor row({1, static_cast<int>(f_v.numel())}, f_v.data);
    return loss_i2tce_g(nn::constant(row), nn::constant(text_bank), {y}, eps, tau)->value.at(0);
}

// Convex text-feature fusion for one identity.
inline Tensor fuse_text_features(const Tensor& f_full, const Tensor& f_occ, double alpha) {
    require(f_full.shape == f_occ.shape, "fuse_text_features: shape mismatch");
    require(alpha > 0.0 && alpha < 1.0, "fuse_text_features: alpha must be in (0,1)");
    Tensor out = f_full;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = alpha * f_full.data[i] + (1.0 - alpha) * f_occ.data[i];
    return out;
}

}  // namespace dpl::train
