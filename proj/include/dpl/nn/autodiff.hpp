#pragma once

// Reverse-mode autodiff over Tensor. A forward pass builds a graph of
// shared_ptr<Node>; backward() walks it in reverse topological order.
// Ops cover exactly what the encoders, fusion rules and losses need.
//
// Gradients only flow into nodes with requires_grad set, so frozen
// encoder weights enter the graph as constants and stay untouched.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dpl/nn/tensor.hpp"

namespace dpl::nn {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Var> inputs;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor::zeros(value.shape);
    }
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

inline Var leaf(Tensor t, bool requires_grad = true) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = requires_grad;
    return n;
}

inline Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    for (const Var& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(bw);
    return n;
}

// ---------------------------------------------------------------- elementwise

inline Var add(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Node& in = *n.inputs[k];
            if (!in.requires_grad) continue;
            in.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) in.grad.data[i] += n.grad.data[i];
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        Node& ia = *n.inputs[0];
        Node& ib = *n.inputs[1];
        if (ia.requires_grad) {
            ia.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) ia.grad.data[i] += n.grad.data[i];
        }
        if (ib.requires_grad) {
            ib.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) ib.grad.data[i] -= n.grad.data[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        Node& ia = *n.inputs[0];
        Node& ib = *n.inputs[1];
        if (ia.requires_grad) {
            ia.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i)
                ia.grad.data[i] += n.grad.data[i] * ib.value.data[i];
        }
        if (ib.requires_grad) {
            ib.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i)
                ib.grad.data[i] += n.grad.data[i] * ia.value.data[i];
        }
    });
}

inline Var scale(const Var& a, double c) {
    Tensor out = a->value;
    for (double& x : out.data) x *= c;
    return make_op(std::move(out), {a}, [c](Node& n) {
        Node& ia = *n.inputs[0];
        ia.ensure_grad();
        for (std::size_t i = 0; i < n.grad.data.size(); ++i) ia.grad.data[i] += c * n.grad.data[i];
    });
}

inline Var add_const(const Var& a, double c) {
    Tensor out = a->value;
    for (double& x : out.data) x += c;
    return make_op(std::move(out), {a}, [](Node& n) {
        Node& ia = *n.inputs[0];
        ia.ensure_grad();
        for (std::size_t i = 0; i < n.grad.data.size(); ++i) ia.grad.data[i] += n.grad.data[i];
    });
}

// out = s * t where s is a single-element tensor (broadcast scalar).
inline Var scalar_mul(const Var& s, const Var& t) {
    require(s->value.numel() == 1, "scalar_mul: s must be a 1-element tensor");
    const double sv = s->value.data[0];
    Tensor out = t->value;
    for (double& x : out.data) x *= sv;
    return make_op(std::move(out), {s, t}, [](Node& n) {
        Node& is = *n.inputs[0];
        Node& it = *n.inputs[1];
        if (is.requires_grad) {
            is.ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < n.grad.data.size(); ++i)
                acc += n.grad.data[i] * it.value.data[i];
            is.grad.data[0] += acc;
        }
        if (it.requires_grad) {
            it.ensure_grad();
            const double sv = is.value.data[0];
            for (std::size_t i = 0; i < n.grad.data.size(); ++i)
                it.grad.data[i] += sv * n.grad.data[i];
        }
    });
}

inline Var tanh_v(const Var& a) {
    Tensor out = a->value;
    for (double& x : out.data) x = std::tanh(x);
    return make_op(std::move(out), {a}, [](Node& n) {
        Node& ia = *n.inputs[0];
        ia.ensure_grad();
        for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
            double y = n.value.data[i];
            ia.grad.data[i] += n.grad.data[i] * (1.0 - y * y);
        }
    });
}

inline Var sigmoid_v(const Var& a) {
    Tensor out = a->value;
    for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
    return make_op(std::move(out), {a}, [](Node& n) {
        Node& ia = *n.inputs[0];
        ia.ensure_grad();
        for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
            double y = n.value.data[i];
            ia.grad.data[i] += n.grad.data[i] * y * (1.0 - y);
        }
    });
}

// ------------------------------------------------------------------- shaping

inline Var reshape(const Var& a, std::vector<int> shape) {
    require(Tensor::numel_of(shape) == a->value.numel(), "reshape: element count mismatch");
    Tensor out(std::move(shape), a->value.data);
    return make_op(std::move(out), {a}, [](Node& n) {
        Node& ia = *n.inputs[0];
        ia.ensure_grad();
        for (std::size_t i = 0; i < n.grad.data.size(); ++i) ia.grad.data[i] += n.grad.data[i];
    });
}

inline Var slice_rows(const Var& a, int off, int len) {
    require(a->value.ndim() == 2, "slice_rows: expects 2-d input");
    const int m = a->value.dim(0), n = a->value.dim(1);
    require(off >= 0 && len >= 0 && off + len <= m, "slice_rows: out of range");
    Tensor out({len, n});
    std::copy(a->value.data.begin() + static_cast<std::size_t>(off) * n,
              a->value.data.begin() + static_cast<std::size_t>(off + len) * n, out.data.begin());
    return make_op(std::move(out), {a}, [off, n](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        const std::size_t base = static_cast<std::size_t>(off) * n;
        for (std::size_t i = 0; i < nd.grad.data.size(); ++i) ia.grad.data[base + i] += nd.grad.data[i];
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: empty input");
    const int n = parts[0]->value.dim(1);
    int m = 0;
    for (const Var& p : parts) {
        require(p->value.ndim() == 2 && p->value.dim(1) == n, "concat_rows: column mismatch");
        m += p->value.dim(0);
    }
    Tensor out({m, n});
    std::size_t pos = 0;
    for (const Var& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + pos);
        pos += p->value.data.size();
    }
    return make_op(std::move(out), parts, [](Node& nd) {
        std::size_t pos = 0;
        for (const Var& in : nd.inputs) {
            const std::size_t len = in->value.data.size();
            if (in->requires_grad) {
                in->ensure_grad();
                for (std::size_t i = 0; i < len; ++i) in->grad.data[i] += nd.grad.data[pos + i];
            }
            pos += len;
        }
    });
}

// Stack k vectors (shape [n] or [1,n]) into a [k,n] matrix.
inline Var stack_rows(const std::vector<Var>& rows) {
    require(!rows.empty(), "stack_rows: empty input");
    const int n = static_cast<int>(rows[0]->value.numel());
    Tensor out({static_cast<int>(rows.size()), n});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r]->value.numel() == n, "stack_rows: length mismatch");
        std::copy(rows[r]->value.data.begin(), rows[r]->value.data.end(),
                  out.data.begin() + r * static_cast<std::size_t>(n));
    }
    return make_op(std::move(out), rows, [n](Node& nd) {
        for (std::size_t r = 0; r < nd.inputs.size(); ++r) {
            Node& in = *nd.inputs[r];
            if (!in.requires_grad) continue;
            in.ensure_grad();
            const std::size_t base = r * static_cast<std::size_t>(n);
            for (int i = 0; i < n; ++i) in.grad.data[i] += nd.grad.data[base + i];
        }
    });
}

inline Var gather_rows(const Var& a, std::vector<int> idx) {
    require(a->value.ndim() == 2, "gather_rows: expects 2-d input");
    const int n = a->value.dim(1);
    Tensor out({static_cast<int>(idx.size()), n});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        require(idx[r] >= 0 && idx[r] < a->value.dim(0), "gather_rows: index out of range");
        for (int j = 0; j < n; ++j) out.at(static_cast<int>(r), j) = a->value.at(idx[r], j);
    }
    return make_op(std::move(out), {a}, [idx = std::move(idx), n](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (int j = 0; j < n; ++j)
                ia.grad.at(idx[r], j) += nd.grad.at(static_cast<int>(r), j);
    });
}

// Pick scattered entries of a matrix into a vector [k].
inline Var gather_entries(const Var& a, std::vector<std::pair<int, int>> ij) {
    require(a->value.ndim() == 2, "gather_entries: expects 2-d input");
    Tensor out({static_cast<int>(ij.size())});
    for (std::size_t k = 0; k < ij.size(); ++k) out.at(static_cast<int>(k)) = a->value.at(ij[k].first, ij[k].second);
    return make_op(std::move(out), {a}, [ij = std::move(ij)](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        for (std::size_t k = 0; k < ij.size(); ++k)
            ia.grad.at(ij[k].first, ij[k].second) += nd.grad.at(static_cast<int>(k));
    });
}

// ------------------------------------------------------------------- algebra

inline Var matmul(const Var& a, const Var& b) {
    require(a->value.ndim() == 2 && b->value.ndim() == 2 && a->value.dim(1) == b->value.dim(0),
            "matmul: incompatible shapes " + a->value.shape_str() + " x " + b->value.shape_str());
    const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = a->value.at(i, p);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) out.at(i, j) += av * b->value.at(p, j);
        }
    return make_op(std::move(out), {a, b}, [m, k, n](Node& nd) {
        Node& ia = *nd.inputs[0];
        Node& ib = *nd.inputs[1];
        if (ia.requires_grad) {
            ia.ensure_grad();  // dA = g * B^T
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double g = nd.grad.at(i, j);
                    if (g == 0.0) continue;
                    for (int p = 0; p < k; ++p) ia.grad.at(i, p) += g * ib.value.at(p, j);
                }
        }
        if (ib.requires_grad) {
            ib.ensure_grad();  // dB = A^T * g
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    const double av = ia.value.at(i, p);
                    if (av == 0.0) continue;
                    for (int j = 0; j < n; ++j) ib.grad.at(p, j) += av * nd.grad.at(i, j);
                }
        }
    });
}

inline Var transpose(const Var& a) {
    require(a->value.ndim() == 2, "transpose: expects 2-d input");
    const int m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a->value.at(i, j);
    return make_op(std::move(out), {a}, [m, n](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) ia.grad.at(i, j) += nd.grad.at(j, i);
    });
}

// y = x * W^T + b with x:[m,k], W:[n,k], b:[n].
inline Var linear(const Var& x, const Var& w, const Var& b) {
    require(x->value.ndim() == 2 && w->value.ndim() == 2 && x->value.dim(1) == w->value.dim(1),
            "linear: incompatible shapes");
    const int m = x->value.dim(0), k = x->value.dim(1), n = w->value.dim(0);
    require(b->value.numel() == n, "linear: bias size mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = b->value.at(j);
            for (int p = 0; p < k; ++p) acc += x->value.at(i, p) * w->value.at(j, p);
            out.at(i, j) = acc;
        }
    return make_op(std::move(out), {x, w, b}, [m, k, n](Node& nd) {
        Node& ix = *nd.inputs[0];
        Node& iw = *nd.inputs[1];
        Node& ib = *nd.inputs[2];
        if (ix.requires_grad) {
            ix.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double g = nd.grad.at(i, j);
                    if (g == 0.0) continue;
                    for (int p = 0; p < k; ++p) ix.grad.at(i, p) += g * iw.value.at(j, p);
                }
        }
        if (iw.requires_grad) {
            iw.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double g = nd.grad.at(i, j);
                    if (g == 0.0) continue;
                    for (int p = 0; p < k; ++p) iw.grad.at(j, p) += g * ix.value.at(i, p);
                }
        }
        if (ib.requires_grad) {
            ib.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ib.grad.at(j) += nd.grad.at(i, j);
        }
    });
}

// -------------------------------------------------------------------- conv2d

// x:[Cin,H,W], w:[Cout,Cin,kh,kw] flattened as [Cout, Cin*kh*kw], b:[Cout].
// Flat-pointer loops with the in-bounds kernel window hoisted out of the
// inner loop; this is the training hot spot.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int kh, int kw, int stride, int pad) {
    require(x->value.ndim() == 3, "conv2d: input must be [C,H,W]");
    const int cin = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
    require(w->value.ndim() == 2 && w->value.dim(1) == cin * kh * kw, "conv2d: weight shape mismatch");
    const int cout = w->value.dim(0);
    require(b->value.numel() == cout, "conv2d: bias size mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    require(oh > 0 && ow > 0, "conv2d: empty output");
    Tensor out({cout, oh, ow});
    const double* xd = x->value.data.data();
    const double* wdt = w->value.data.data();
    double* od = out.data.data();
    const int wrow = cin * kh * kw;
    for (int oc = 0; oc < cout; ++oc) {
        const double* woc = wdt + static_cast<std::size_t>(oc) * wrow;
        const double bias = b->value.at(oc);
        for (int oy = 0; oy < oh; ++oy) {
            const int iy0 = oy * stride - pad;
            const int ky_lo = std::max(0, -iy0), ky_hi = std::min(kh, h - iy0);
            for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * stride - pad;
                const int kx_lo = std::max(0, -ix0), kx_hi = std::min(kw, wd - ix0);
                double acc = bias;
                for (int ic = 0; ic < cin; ++ic) {
                    const double* xc = xd + (static_cast<std::size_t>(ic) * h + iy0) * wd + ix0;
                    const double* wc = woc + (ic * kh) * kw;
                    for (int ky = ky_lo; ky < ky_hi; ++ky) {
                        const double* xr = xc + static_cast<std::size_t>(ky) * wd;
                        const double* wr = wc + ky * kw;
                        for (int kx = kx_lo; kx < kx_hi; ++kx) acc += xr[kx] * wr[kx];
                    }
                }
                od[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] = acc;
            }
        }
    }
    return make_op(std::move(out), {x, w, b}, [cin, h, wd, cout, kh, kw, stride, pad, oh, ow](Node& nd) {
        Node& ix = *nd.inputs[0];
        Node& iw = *nd.inputs[1];
        Node& ib = *nd.inputs[2];
        const bool need_x = ix.requires_grad, need_w = iw.requires_grad, need_b = ib.requires_grad;
        if (need_x) ix.ensure_grad();
        if (need_w) iw.ensure_grad();
        if (need_b) ib.ensure_grad();
        const int wrow = cin * kh * kw;
        const double* gd = nd.grad.data.data();
        const double* xd = ix.value.data.data();
        const double* wdt = iw.value.data.data();
        double* gx = need_x ? ix.grad.data.data() : nullptr;
        double* gw = need_w ? iw.grad.data.data() : nullptr;
        for (int oc = 0; oc < cout; ++oc) {
            const double* woc = wdt + static_cast<std::size_t>(oc) * wrow;
            double* gwoc = need_w ? gw + static_cast<std::size_t>(oc) * wrow : nullptr;
            double gb_acc = 0.0;
            for (int oy = 0; oy < oh; ++oy) {
                const int iy0 = oy * stride - pad;
                const int ky_lo = std::max(0, -iy0), ky_hi = std::min(kh, h - iy0);
                for (int ox = 0; ox < ow; ++ox) {
                    const double g = gd[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
                    if (g == 0.0) continue;
                    gb_acc += g;
                    const int ix0 = ox * stride - pad;
                    const int kx_lo = std::max(0, -ix0), kx_hi = std::min(kw, wd - ix0);
                    for (int ic = 0; ic < cin; ++ic) {
                        const std::size_t xbase = (static_cast<std::size_t>(ic) * h + iy0) * wd + ix0;
                        const int wbase = (ic * kh) * kw;
                        for (int ky = ky_lo; ky < ky_hi; ++ky) {
                            const std::size_t xrow = xbase + static_cast<std::size_t>(ky) * wd;
                            const int wrow_k = wbase + ky * kw;
                            if (need_x && need_w) {
                                for (int kx = kx_lo; kx < kx_hi; ++kx) {
                                    gx[xrow + kx] += g * woc[wrow_k + kx];
                                    gwoc[wrow_k + kx] += g * xd[xrow + kx];
                                }
                            } else if (need_x) {
                                for (int kx = kx_lo; kx < kx_hi; ++kx)
                                    gx[xrow + kx] += g * woc[wrow_k + kx];
                            } else if (need_w) {
                                for (int kx = kx_lo; kx < kx_hi; ++kx)
                                    gwoc[wrow_k + kx] += g * xd[xrow + kx];
                            }
                        }
                    }
                }
            }
            if (need_b) ib.grad.at(oc) += gb_acc;
        }
    });
}

// -------------------------------------------------------------- reductions

inline Var sum_all(const Var& a) {
    double s = 0.0;
    for (double x : a->value.data) s += x;
    return make_op(Tensor::scalar(s), {a}, [](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        const double g = nd.grad.data[0];
        for (double& x : ia.grad.data) x += g;
    });
}

inline Var mean_all(const Var& a) {
    require(a->value.numel() > 0, "mean_all: empty tensor");
    double s = 0.0;
    for (double x : a->value.data) s += x;
    const double inv = 1.0 / static_cast<double>(a->value.numel());
    return make_op(Tensor::scalar(s * inv), {a}, [inv](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        const double g = nd.grad.data[0] * inv;
        for (double& x : ia.grad.data) x += g;
    });
}

// Column means of a [m,n] matrix -> [1,n].
inline Var mean_over_rows(const Var& a) {
    require(a->value.ndim() == 2, "mean_over_rows: expects 2-d input");
    const int m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({1, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(0, j) += a->value.at(i, j);
    const double inv = 1.0 / m;
    for (int j = 0; j < n; ++j) out.at(0, j) *= inv;
    return make_op(std::move(out), {a}, [m, n, inv](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) ia.grad.at(i, j) += inv * nd.grad.at(0, j);
    });
}

// Global average pool [C,H,W] -> [C].
inline Var spatial_mean(const Var& a) {
    require(a->value.ndim() == 3, "spatial_mean: expects [C,H,W]");
    const int c = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
    Tensor out({c});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int i = 0; i < c; ++i) {
        double s = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) s += a->value.at(i, y, x);
        out.at(i) = s * inv;
    }
    return make_op(std::move(out), {a}, [c, h, w, inv](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        for (int i = 0; i < c; ++i) {
            const double g = nd.grad.at(i) * inv;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) ia.grad.at(i, y, x) += g;
        }
    });
}

// ----------------------------------------------------------- softmax / norms

inline Var log_softmax_rows(const Var& a) {
    require(a->value.ndim() == 2, "log_softmax_rows: expects 2-d input");
    const int m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        double mx = a->value.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, a->value.at(i, j));
        double lse = 0.0;
        for (int j = 0; j < n; ++j) lse += std::exp(a->value.at(i, j) - mx);
        lse = mx + std::log(lse);
        for (int j = 0; j < n; ++j) out.at(i, j) = a->value.at(i, j) - lse;
    }
    return make_op(std::move(out), {a}, [m, n](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        for (int i = 0; i < m; ++i) {
            double gs = 0.0;
            for (int j = 0; j < n; ++j) gs += nd.grad.at(i, j);
            for (int j = 0; j < n; ++j)
                ia.grad.at(i, j) += nd.grad.at(i, j) - std::exp(nd.value.at(i, j)) * gs;
        }
    });
}

inline Var softmax_rows(const Var& a) {
    require(a->value.ndim() == 2, "softmax_rows: expects 2-d input");
    const int m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        double mx = a->value.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, a->value.at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(a->value.at(i, j) - mx);
        for (int j = 0; j < n; ++j) out.at(i, j) = std::exp(a->value.at(i, j) - mx) / z;
    }
    return make_op(std::move(out), {a}, [m, n](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        for (int i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += nd.grad.at(i, j) * nd.value.at(i, j);
            for (int j = 0; j < n; ++j)
                ia.grad.at(i, j) += nd.value.at(i, j) * (nd.grad.at(i, j) - dot);
        }
    });
}

inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    require(x->value.ndim() == 2, "layer_norm_rows: expects 2-d input");
    const int m = x->value.dim(0), n = x->value.dim(1);
    require(gamma->value.numel() == n && beta->value.numel() == n, "layer_norm_rows: param size");
    Tensor out({m, n});
    Tensor xhat({m, n});
    Tensor istd({m});
    for (int i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += x->value.at(i, j);
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = x->value.at(i, j) - mu;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        istd.at(i) = is;
        for (int j = 0; j < n; ++j) {
            xhat.at(i, j) = (x->value.at(i, j) - mu) * is;
            out.at(i, j) = gamma->value.at(j) * xhat.at(i, j) + beta->value.at(j);
        }
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [m, n, xhat = std::move(xhat), istd = std::move(istd)](Node& nd) {
        Node& ix = *nd.inputs[0];
        Node& ig = *nd.inputs[1];
        Node& ib = *nd.inputs[2];
        if (ig.requires_grad) ig.ensure_grad();
        if (ib.requires_grad) ib.ensure_grad();
        if (ix.requires_grad) ix.ensure_grad();
        for (int i = 0; i < m; ++i) {
            double sum_gx = 0.0, sum_gxx = 0.0;
            for (int j = 0; j < n; ++j) {
                const double gy = nd.grad.at(i, j);
                if (ig.requires_grad) ig.grad.at(j) += gy * xhat.at(i, j);
                if (ib.requires_grad) ib.grad.at(j) += gy;
                const double gxh = gy * ig.value.at(j);
                sum_gx += gxh;
                sum_gxx += gxh * xhat.at(i, j);
            }
            if (!ix.requires_grad) continue;
            const double inv_n = 1.0 / n;
            for (int j = 0; j < n; ++j) {
                const double gxh = nd.grad.at(i, j) * ig.value.at(j);
                ix.grad.at(i, j) +=
                    istd.at(i) * (gxh - inv_n * sum_gx - xhat.at(i, j) * inv_n * sum_gxx);
            }
        }
    });
}

// Row-wise L2 normalization; rejects zero rows.
inline Var l2_normalize_rows(const Var& a) {
    require(a->value.ndim() == 2, "l2_normalize_rows: expects 2-d input");
    const int m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({m, n});
    Tensor norms({m});
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += a->value.at(i, j) * a->value.at(i, j);
        const double nm = std::sqrt(s);
        require(nm > 0.0, "l2_normalize_rows: zero vector");
        norms.at(i) = nm;
        for (int j = 0; j < n; ++j) out.at(i, j) = a->value.at(i, j) / nm;
    }
    return make_op(std::move(out), {a}, [m, n, norms = std::move(norms)](Node& nd) {
        Node& ia = *nd.inputs[0];
        ia.ensure_grad();
        for (int i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += nd.grad.at(i, j) * nd.value.at(i, j);
            const double inv = 1.0 / norms.at(i);
            for (int j = 0; j < n; ++j)
                ia.grad.at(i, j) += inv * (nd.grad.at(i, j) - nd.value.at(i, j) * dot);
        }
    });
}

// ------------------------------------------------------------------ backward

inline void topo_sort(const Var& root, std::vector<Node*>& order) {
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    // Iterative DFS; graphs get deep enough (per-pixel chains) that
    // recursion is not safe.
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node* child = node->inputs[idx++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

// Root must be scalar; seeds with 1 and walks the graph once.
inline void backward(const Var& root) {
    require(root->value.numel() == 1, "backward: root must be scalar");
    if (!root->requires_grad) return;
    std::vector<Node*> order;
    topo_sort(root, order);
    root->ensure_grad();
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.data.empty()) n->backward_fn(*n);
    }
}

}  // namespace dpl::nn
