#pragma once

// Test-side oracles shared across suites. Everything here is deliberately
// independent of the implementation paths it checks: central finite
// differences for gradients, dense 2-d convolution for the separable blur,
// naive softmax loops for the contrastive losses, and an exhaustive
// ranking walk for CMC/mAP.

#include <cmath>
#include <functional>
#include <vector>

#include "dpl/nn/tensor.hpp"

namespace oracle {

// Central finite difference of a scalar functional at x[i].
inline double fd_partial(const std::function<double(const dpl::nn::Tensor&)>& f,
                         dpl::nn::Tensor x, int i, double h = 1e-5) {
    const double orig = x.data[static_cast<std::size_t>(i)];
    x.data[static_cast<std::size_t>(i)] = orig + h;
    const double fp = f(x);
    x.data[static_cast<std::size_t>(i)] = orig - h;
    const double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

// Relative error with an absolute floor for near-zero gradients.
inline double rel_err(double got, double want, double floor = 1e-8) {
    const double denom = std::max({std::fabs(got), std::fabs(want), floor});
    return std::fabs(got - want) / denom;
}

// Dense 2-d convolution of a [h,w] field with an outer-product kernel
// k1d (x) k1d, renormalized by the in-bounds kernel mass at each pixel.
inline std::vector<double> dense_blur_2d(const std::vector<double>& img, int h, int w,
                                         const std::vector<double>& k1d) {
    const int r = static_cast<int>(k1d.size()) / 2;
    std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0, mass = 0.0;
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= h) continue;
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= w) continue;
                    const double kv = k1d[static_cast<std::size_t>(dy + r)] *
                                      k1d[static_cast<std::size_t>(dx + r)];
                    acc += kv * img[static_cast<std::size_t>(yy) * w + xx];
                    mass += kv;
                }
            }
            out[static_cast<std::size_t>(y) * w + x] = acc / mass;
        }
    return out;
}

}  // namespace oracle
