#pragma once

// Named parameters, the per-step binding tape, Adam, and the two learning
// rate schedules used by the trainers.

#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dpl/nn/autodiff.hpp"

namespace dpl::nn {

struct Param {
    std::string name;
    Tensor value;
    bool trainable = true;
    // Adam state, lazily sized.
    Tensor m, v;
    std::int64_t steps = 0;

    void reset_opt_state() {
        m = Tensor();
        v = Tensor();
        steps = 0;
    }
};

// Binds Params to graph leaves for one forward/backward pass. Binding is
// memoized so that a parameter used twice (e.g. beta in both fusion levels)
// accumulates both gradient contributions in a single node.
class Tape {
public:
    Var use(Param& p) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) return it->second;
        Var v = leaf(p.value, p.trainable);
        bound_.emplace(&p, v);
        return v;
    }

    // Gradient of the last backward() w.r.t. p; zeros if p was unused.
    Tensor grad_of(Param& p) const {
        auto it = bound_.find(&p);
        if (it == bound_.end() || it->second->grad.data.empty())
            return Tensor::zeros(p.value.shape);
        return it->second->grad;
    }

    const std::unordered_map<Param*, Var>& bound() const { return bound_; }

private:
    std::unordered_map<Param*, Var> bound_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One Adam update for every trainable parameter that received gradient.
inline void adam_step(Tape& tape, const AdamConfig& cfg) {
    // Deterministic order: sort by parameter name.
    std::map<std::string, std::pair<Param*, const Var*>> ordered;
    for (const auto& [p, v] : tape.bound())
        if (p->trainable && v->requires_grad && !v->grad.data.empty())
            ordered.emplace(p->name, std::make_pair(p, &v));
    for (auto& [name, pv] : ordered) {
        Param& p = *pv.first;
        const Tensor& g = (*pv.second)->grad;
        if (p.m.data.empty()) {
            p.m = Tensor::zeros(p.value.shape);
            p.v = Tensor::zeros(p.value.shape);
        }
        p.steps += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.steps));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.steps));
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            p.m.data[i] = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g.data[i];
            p.v.data[i] = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
            const double mhat = p.m.data[i] / bc1;
            const double vhat = p.v.data[i] / bc2;
            p.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// Cosine decay from base_lr to ~0 over total_epochs.
inline double cosine_lr(double base_lr, int epoch, int total_epochs) {
    if (total_epochs <= 0) return base_lr;
    const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Linear warmup to base_lr, then x0.1 at each listed epoch.
inline double warmup_step_lr(double base_lr, double warmup_from, int epoch, int warmup_epochs,
                             const std::vector<int>& decay_epochs) {
    double lr = base_lr;
    if (warmup_epochs > 0 && epoch < warmup_epochs) {
        const double t = static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
        lr = warmup_from + (base_lr - warmup_from) * t;
    }
    for (int de : decay_epochs)
        if (epoch >= de) lr *= 0.1;
    return lr;
}

}  // namespace dpl::nn
