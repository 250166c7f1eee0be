#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stjgcn/array.hpp"
#include "stjgcn/tape.hpp"

namespace stjgcn {

/// A named trainable array. Lives across training steps; bound onto a fresh
/// tape once per forward pass.
template <typename T>
struct Parameter {
    std::string name;
    std::string group;  // reporting bucket: embeddings, interaction, stjgc, gate, ...
    Array<T> value;
};

/// Memoizing binder: each parameter becomes exactly one leaf per tape, so
/// gradients accumulate in a single place.
template <typename T>
class ParamBind {
public:
    ParamBind(Tape<T>& tape, bool track_grad) : tape_(&tape), track_(track_grad) {}

    Var<T> operator()(Parameter<T>& p) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) return it->second;
        Var<T> v = tape_->leaf(p.value, track_);
        bound_.emplace(&p, v);
        return v;
    }

    /// (parameter, leaf) pairs in binding order.
    std::vector<std::pair<Parameter<T>*, Var<T>>> bindings() const {
        std::vector<std::pair<Parameter<T>*, Var<T>>> out;
        out.reserve(bound_.size());
        for (auto& [p, v] : bound_) out.emplace_back(const_cast<Parameter<T>*>(p), v);
        return out;
    }

private:
    Tape<T>* tape_;
    bool track_;
    std::map<const Parameter<T>*, Var<T>> bound_;
};

/// Adam with bias correction. Moment arrays are kept per parameter; the
/// step counter is shared across the parameter set.
template <typename T>
class Adam {
public:
    explicit Adam(T lr = T(0.001), T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    int64_t steps() const { return t_; }

    /// Apply one update. max_grad_norm > 0 enables global-norm clipping.
    void step(const std::vector<std::pair<Parameter<T>*, const Array<T>*>>& grads,
              T max_grad_norm = T(0)) {
        for (auto& [p, g] : grads) {
            if (g->shape != p->value.shape)
                throw ShapeError("gradient shape " + shape_str(g->shape) +
                                 " != parameter shape " + shape_str(p->value.shape) + " for " +
                                 p->name);
            if (!g->all_finite())
                throw NumericError("non-finite gradient for parameter '" + p->name +
                                   "'; aborting optimizer step");
        }
        T scale = T(1);
        if (max_grad_norm > T(0)) {
            double sq = 0.0;
            for (auto& [p, g] : grads)
                for (T v : g->data) sq += static_cast<double>(v) * static_cast<double>(v);
            double norm = std::sqrt(sq);
            if (norm > static_cast<double>(max_grad_norm))
                scale = static_cast<T>(static_cast<double>(max_grad_norm) / norm);
        }
        ++t_;
        T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (auto& [p, g] : grads) {
            Moments& mo = moments_[p];
            if (mo.m.data.empty()) {
                mo.m = Array<T>(p->value.shape, T(0));
                mo.v = Array<T>(p->value.shape, T(0));
            }
            for (int64_t i = 0; i < p->value.numel(); ++i) {
                T gi = (*g)[i] * scale;
                mo.m[i] = beta1_ * mo.m[i] + (T(1) - beta1_) * gi;
                mo.v[i] = beta2_ * mo.v[i] + (T(1) - beta2_) * gi * gi;
                T mhat = mo.m[i] / bc1;
                T vhat = mo.v[i] / bc2;
                p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    struct Moments {
        Array<T> m, v;
    };
    T lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::map<const Parameter<T>*, Moments> moments_;
};

}  // namespace stjgcn
