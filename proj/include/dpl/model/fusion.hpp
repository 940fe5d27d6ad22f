#pragma once

// WGFF fusion rules and the cosine similarity used by every loss.
// Grid features fuse through a sigmoid gate; token features through a
// convex combination with learnable beta. Alpha (text fusion) and beta
// live as unconstrained scalars squashed by the logistic, so the mapped
// values sit in (0,1) by construction.

#include <cmath>

#include "dpl/model/encoders.hpp"

namespace dpl::model {

struct FusionParams {
    Param alpha_raw{"fusion.alpha_raw", Tensor::scalar(0.0)};  // logistic(0)=0.5
    Param beta_raw{"fusion.beta_raw", Tensor::scalar(0.0)};

    // Logistic squash, clamped to the largest representable open interval
    // so float saturation can never report exactly 0 or 1.
    static double squash(double raw) {
        const double s = 1.0 / (1.0 + std::exp(-raw));
        return std::min(1.0 - 1e-12, std::max(1e-12, s));
    }

    double alpha() const { return squash(alpha_raw.value.at(0)); }
    double beta() const { return squash(beta_raw.value.at(0)); }

    void collect(std::vector<Param*>& out) {
        out.push_back(&alpha_raw);
        out.push_back(&beta_raw);
    }
};

// out = f_clip (.) logistic(f_ls), elementwise; both fusion levels use it.
inline Var gated_fuse(const Var& f_clip, const Var& f_ls) {
    check_same_shape(f_clip->value, f_ls->value, "gated_fuse");
    return nn::mul(f_clip, nn::sigmoid_v(f_ls));
}

// out = beta*f_clip + (1-beta)*f_ls with beta a 1-element graph node.
inline Var weighted_fuse(const Var& f_clip, const Var& f_ls, const Var& beta) {
    check_same_shape(f_clip->value, f_ls->value, "weighted_fuse");
    require(beta->value.numel() == 1, "weighted_fuse: beta must be scalar");
    Var one_minus = nn::sub(nn::constant(Tensor::scalar(1.0)), beta);
    return nn::add(nn::scalar_mul(beta, f_clip), nn::scalar_mul(one_minus, f_ls));
}

// Tensor-level conveniences for callers outside a training graph.
inline Tensor gated_fuse(const Tensor& f_clip, const Tensor& f_ls) {
    return gated_fuse(nn::constant(f_clip), nn::constant(f_ls))->value;
}

inline Tensor weighted_fuse(const Tensor& f_clip, const Tensor& f_ls, double beta) {
    return weighted_fuse(nn::constant(f_clip), nn::constant(f_ls),
                         nn::constant(Tensor::scalar(beta)))
        ->value;
}

// Temperature-scaled cosine similarity; rejects zero vectors.
inline double similarity(const Tensor& u, const Tensor& v, double tau) {
    require(u.numel() == v.numel(), "similarity: dimension mismatch");
    require(tau > 0.0, "similarity: tau must be positive");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::int64_t i = 0; i < u.numel(); ++i) {
        dot += u.data[static_cast<std::size_t>(i)] * v.data[static_cast<std::size_t>(i)];
        nu += u.data[static_cast<std::size_t>(i)] * u.data[static_cast<std::size_t>(i)];
        nv += v.data[static_cast<std::size_t>(i)] * v.data[static_cast<std::size_t>(i)];
    }
    require(nu > 0.0 && nv > 0.0, "similarity: zero vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv) * tau);
}

// Graph version over row-stacked features: S[i,j] = cos(u_i, v_j)/tau.
inline Var similarity_matrix(const Var& u_rows, const Var& v_rows, double tau) {
    require(tau > 0.0, "similarity_matrix: tau must be positive");
    Var un = nn::l2_normalize_rows(u_rows);
    Var vn = nn::l2_normalize_rows(v_rows);
    return nn::scale(nn::matmul(un, nn::transpose(vn)), 1.0 / tau);
}

}  // namespace dpl::model
