#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "stjgcn/array.hpp"

namespace stjgcn {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
    int32_t id = -1;
    Tape<T>* tape = nullptr;

    const Array<T>& value() const { return tape->value(*this); }
    const Array<T>& grad() const { return tape->grad(*this); }
    const Shape& shape() const { return value().shape; }
};

/// Running statistics owned by one batch-norm site. The affine scale/shift
/// are ordinary parameters and live outside.
template <typename T>
struct BNState {
    Array<T> running_mean;
    Array<T> running_var;
    bool initialized = false;
    T momentum = T(0.9);
    T eps = T(1e-5);

    explicit BNState(int64_t channels = 0)
        : running_mean(channels > 0 ? Array<T>({channels}, T(0)) : Array<T>()),
          running_var(channels > 0 ? Array<T>({channels}, T(1)) : Array<T>()) {}
};

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(int64_t m, int64_t k, int64_t n, const T* a, const T* b, T* c) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            T aip = arow[p];
            if (aip == T(0)) continue;
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// C[m,k] += G[m,n] * B[k,n]^T
template <typename T>
void gemm_nt(int64_t m, int64_t k, int64_t n, const T* g, const T* b, T* c) {
    for (int64_t i = 0; i < m; ++i) {
        const T* grow = g + i * n;
        T* crow = c + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T* brow = b + p * n;
            T acc = T(0);
            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * G[m,n]
template <typename T>
void gemm_tn(int64_t m, int64_t k, int64_t n, const T* a, const T* g, T* c) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* grow = g + i * n;
        for (int64_t p = 0; p < k; ++p) {
            T aip = arow[p];
            if (aip == T(0)) continue;
            T* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aip * grow[j];
        }
    }
}

}  // namespace detail

/// Reverse-mode differentiation record. Nodes are appended in execution
/// order, so the record is topologically sorted by construction. A tape is
/// single-owner: one forward build, one backward() call, then it is consumed.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Record an input value. Gradients are tracked iff requires_grad.
    Var<T> leaf(Array<T> value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, {}, nullptr, "leaf");
    }

    Var<T> constant(Array<T> value) { return leaf(std::move(value), false); }

    const Array<T>& value(Var<T> v) const { return nodes_[static_cast<size_t>(v.id)].value; }

    /// Gradient of the most recent backward() w.r.t. v. Zero-filled for
    /// nodes the loss does not reach.
    const Array<T>& grad(Var<T> v) {
        if (!backward_done_) throw std::logic_error("grad() before backward()");
        Node& n = nodes_[static_cast<size_t>(v.id)];
        if (n.grad.data.empty()) n.grad = Array<T>(n.value.shape, T(0));
        return n.grad;
    }

    /// Propagate d(loss)/d(node) for every recorded node. The tape is
    /// consumed afterwards: recording or a second backward() is an error.
    void backward(Var<T> loss) {
        if (consumed_) throw std::logic_error("tape already consumed; rebuild the forward pass");
        if (nodes_.empty()) throw std::logic_error("backward() on an empty tape");
        if (value(loss).numel() != 1)
            throw ShapeError("backward() requires a scalar loss, got " +
                             shape_str(value(loss).shape));
        consumed_ = true;
        grad_ref(loss.id) = Array<T>(value(loss).shape, T(1));
        for (int32_t id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.grad.data.empty() || !n.back) continue;
            n.back(*this, id);
        }
        backward_done_ = true;
    }

    size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // --- used by op implementations ---

    Var<T> push(Array<T> value, bool requires_grad, std::vector<int32_t> ins,
                std::function<void(Tape&, int32_t)> back, const char* op) {
        if (consumed_) throw std::logic_error("tape already consumed; rebuild the forward pass");
        if (!value.all_finite())
            throw NumericError(std::string("non-finite values produced by op '") + op + "'");
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.ins = std::move(ins);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var<T>{static_cast<int32_t>(nodes_.size() - 1), this};
    }

    Array<T>& grad_ref(int32_t id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.data.empty()) n.grad = Array<T>(n.value.shape, T(0));
        return n.grad;
    }

    bool wants_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    bool has_grad(int32_t id) const { return !nodes_[static_cast<size_t>(id)].grad.data.empty(); }

private:
    struct Node {
        Array<T> value;
        Array<T> grad;
        bool requires_grad = false;
        std::vector<int32_t> ins;
        std::function<void(Tape&, int32_t)> back;
    };

    std::deque<Node> nodes_;
    bool consumed_ = false;
    bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Ops. Each checks shapes, computes the forward value, and registers the
// local backward rule when any input tracks gradients.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
bool any_grad(std::initializer_list<Var<T>> vs) {
    for (auto v : vs)
        if (v.tape->wants_grad(v.id)) return true;
    return false;
}

}  // namespace detail

/// Elementwise binary op with trailing-dim broadcasting.
template <typename T, typename FwdF, typename BackF>
Var<T> binary_broadcast(Var<T> a, Var<T> b, FwdF&& f, BackF&& makeback, const char* name) {
    Tape<T>& t = *a.tape;
    const Array<T>& av = t.value(a);
    const Array<T>& bv = t.value(b);
    Shape os = broadcast_shapes(av.shape, bv.shape);
    auto sa = broadcast_strides(av.shape, os);
    auto sb = broadcast_strides(bv.shape, os);
    Array<T> out(os);
    broadcast_walk(os, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
        out[lin] = f(av[oa], bv[ob]);
    });
    bool rg = detail::any_grad<T>({a, b});
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) back = makeback(a, b, os, sa, sb);
    return t.push(std::move(out), rg, {a.id, b.id}, std::move(back), name);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    return binary_broadcast<T>(
        a, b, [](T x, T y) { return x + y; },
        [](Var<T> a, Var<T> b, Shape os, std::vector<int64_t> sa, std::vector<int64_t> sb) {
            return [=](Tape<T>& t, int32_t self) {
                const Array<T>& g = t.grad_ref(self);
                Array<T>* ga = t.wants_grad(a.id) ? &t.grad_ref(a.id) : nullptr;
                Array<T>* gb = t.wants_grad(b.id) ? &t.grad_ref(b.id) : nullptr;
                broadcast_walk(os, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
                    if (ga) (*ga)[oa] += g[lin];
                    if (gb) (*gb)[ob] += g[lin];
                });
            };
        },
        "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    return binary_broadcast<T>(
        a, b, [](T x, T y) { return x - y; },
        [](Var<T> a, Var<T> b, Shape os, std::vector<int64_t> sa, std::vector<int64_t> sb) {
            return [=](Tape<T>& t, int32_t self) {
                const Array<T>& g = t.grad_ref(self);
                Array<T>* ga = t.wants_grad(a.id) ? &t.grad_ref(a.id) : nullptr;
                Array<T>* gb = t.wants_grad(b.id) ? &t.grad_ref(b.id) : nullptr;
                broadcast_walk(os, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
                    if (ga) (*ga)[oa] += g[lin];
                    if (gb) (*gb)[ob] -= g[lin];
                });
            };
        },
        "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    return binary_broadcast<T>(
        a, b, [](T x, T y) { return x * y; },
        [](Var<T> a, Var<T> b, Shape os, std::vector<int64_t> sa, std::vector<int64_t> sb) {
            return [=](Tape<T>& t, int32_t self) {
                const Array<T>& g = t.grad_ref(self);
                const Array<T>& av = t.value(a);
                const Array<T>& bv = t.value(b);
                Array<T>* ga = t.wants_grad(a.id) ? &t.grad_ref(a.id) : nullptr;
                Array<T>* gb = t.wants_grad(b.id) ? &t.grad_ref(b.id) : nullptr;
                broadcast_walk(os, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
                    if (ga) (*ga)[oa] += g[lin] * bv[ob];
                    if (gb) (*gb)[ob] += g[lin] * av[oa];
                });
            };
        },
        "mul");
}

/// Elementwise unary op; dfdx receives (x, y).
template <typename T, typename F, typename DF>
Var<T> unary_op(Var<T> a, F&& f, DF&& dfdx, const char* name) {
    Tape<T>& t = *a.tape;
    const Array<T>& av = t.value(a);
    Array<T> out(av.shape);
    for (int64_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
    bool rg = t.wants_grad(a.id);
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        DF d = dfdx;
        back = [a, d](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            const Array<T>& x = t.value(a);
            const Array<T>& y = t.value(Var<T>{self, &t});
            Array<T>& ga = t.grad_ref(a.id);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * d(x[i], y[i]);
        };
    }
    return t.push(std::move(out), rg, {a.id}, std::move(back), name);
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
    return unary_op(
        a, [c](T x) { return x * c; }, [c](T, T) { return c; }, "scale");
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
    return unary_op(
        a, [c](T x) { return x + c; }, [](T, T) { return T(1); }, "add_scalar");
}

template <typename T>
Var<T> neg(Var<T> a) {
    return scale(a, T(-1));
}

template <typename T>
Var<T> relu(Var<T> a) {
    return unary_op(
        a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); },
        "relu");
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
    return unary_op(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); },
        "sigmoid");
}

template <typename T>
Var<T> tanh_op(Var<T> a) {
    return unary_op(
        a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; }, "tanh");
}

template <typename T>
Var<T> abs_op(Var<T> a) {
    return unary_op(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); }, "abs");
}

template <typename T>
Var<T> sum_all(Var<T> a) {
    Tape<T>& t = *a.tape;
    const Array<T>& av = t.value(a);
    double wide = 0.0;  // reduce in double so float32 losses stay FD-checkable
    for (T v : av.data) wide += static_cast<double>(v);
    T acc = static_cast<T>(wide);
    bool rg = t.wants_grad(a.id);
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        back = [a](Tape<T>& t, int32_t self) {
            T g = t.grad_ref(self)[0];
            Array<T>& ga = t.grad_ref(a.id);
            for (auto& v : ga.data) v += g;
        };
    }
    return t.push(Array<T>::scalar(acc), rg, {a.id}, std::move(back), "sum_all");
}

template <typename T>
Var<T> mean_all(Var<T> a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.value().numel()));
}

template <typename T>
Var<T> reshape(Var<T> a, Shape s) {
    Tape<T>& t = *a.tape;
    const Array<T>& av = t.value(a);
    if (shape_numel(s) != av.numel())
        throw ShapeError("reshape " + shape_str(av.shape) + " -> " + shape_str(s));
    Array<T> out = Array<T>::from(s, av.data);
    bool rg = t.wants_grad(a.id);
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        back = [a](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            Array<T>& ga = t.grad_ref(a.id);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        };
    }
    return t.push(std::move(out), rg, {a.id}, std::move(back), "reshape");
}

/// Matrix product with broadcast over leading batch dimensions.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    const Array<T>& av = t.value(a);
    const Array<T>& bv = t.value(b);
    if (av.rank() < 2 || bv.rank() < 2)
        throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(av.shape) + " x " +
                         shape_str(bv.shape));
    int64_t m = av.shape[av.rank() - 2], ka = av.shape[av.rank() - 1];
    int64_t kb = bv.shape[bv.rank() - 2], n = bv.shape[bv.rank() - 1];
    if (ka != kb)
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(av.shape) + " x " +
                         shape_str(bv.shape));
    Shape abatch(av.shape.begin(), av.shape.end() - 2);
    Shape bbatch(bv.shape.begin(), bv.shape.end() - 2);
    Shape batch = broadcast_shapes(abatch, bbatch);
    Shape os = batch;
    os.push_back(m);
    os.push_back(n);

    // Per-batch element offsets for both operands.
    int64_t nb = shape_numel(batch);
    std::vector<int64_t> offa(static_cast<size_t>(nb)), offb(static_cast<size_t>(nb));
    {
        auto sa = broadcast_strides(abatch, batch);
        auto sb = broadcast_strides(bbatch, batch);
        int64_t blk_a = m * ka, blk_b = kb * n;
        broadcast_walk(batch, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
            offa[static_cast<size_t>(lin)] = oa * blk_a;
            offb[static_cast<size_t>(lin)] = ob * blk_b;
        });
    }

    Array<T> out(os, T(0));
    for (int64_t bi = 0; bi < nb; ++bi)
        detail::gemm_nn(m, ka, n, av.data.data() + offa[static_cast<size_t>(bi)],
                        bv.data.data() + offb[static_cast<size_t>(bi)],
                        out.data.data() + bi * m * n);

    bool rg = detail::any_grad<T>({a, b});
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        back = [a, b, m, ka, n, nb, offa, offb](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            const Array<T>& av = t.value(a);
            const Array<T>& bv = t.value(b);
            Array<T>* ga = t.wants_grad(a.id) ? &t.grad_ref(a.id) : nullptr;
            Array<T>* gb = t.wants_grad(b.id) ? &t.grad_ref(b.id) : nullptr;
            for (int64_t bi = 0; bi < nb; ++bi) {
                const T* gp = g.data.data() + bi * m * n;
                if (ga)
                    detail::gemm_nt(m, ka, n, gp, bv.data.data() + offb[static_cast<size_t>(bi)],
                                    ga->data.data() + offa[static_cast<size_t>(bi)]);
                if (gb)
                    detail::gemm_tn(m, ka, n, av.data.data() + offa[static_cast<size_t>(bi)], gp,
                                    gb->data.data() + offb[static_cast<size_t>(bi)]);
            }
        };
    }
    return t.push(std::move(out), rg, {a.id, b.id}, std::move(back), "matmul");
}

template <typename T>
Var<T> transpose_last2(Var<T> a) {
    Tape<T>& t = *a.tape;
    const Array<T>& av = t.value(a);
    if (av.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(av.shape));
    Shape os = av.shape;
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    int64_t r = av.shape[av.rank() - 2], c = av.shape[av.rank() - 1];
    int64_t nb = av.numel() / (r * c);
    Array<T> out(os);
    for (int64_t bi = 0; bi < nb; ++bi) {
        const T* src = av.data.data() + bi * r * c;
        T* dst = out.data.data() + bi * r * c;
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
    bool rg = t.wants_grad(a.id);
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        back = [a, r, c, nb](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            Array<T>& ga = t.grad_ref(a.id);
            for (int64_t bi = 0; bi < nb; ++bi) {
                const T* gp = g.data.data() + bi * r * c;
                T* dst = ga.data.data() + bi * r * c;
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j) dst[i * c + j] += gp[j * r + i];
            }
        };
    }
    return t.push(std::move(out), rg, {a.id}, std::move(back), "transpose");
}

/// Stack same-shaped tensors along a new leading axis.
template <typename T>
Var<T> stack0(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("stack0 of zero tensors");
    Tape<T>& t = *xs[0].tape;
    const Shape& es = t.value(xs[0]).shape;
    int64_t en = shape_numel(es);
    Shape os;
    os.push_back(static_cast<int64_t>(xs.size()));
    os.insert(os.end(), es.begin(), es.end());
    Array<T> out(os);
    bool rg = false;
    std::vector<int32_t> ins;
    ins.reserve(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        const Array<T>& v = t.value(xs[i]);
        if (v.shape != es)
            throw ShapeError("stack0 shape mismatch: " + shape_str(es) + " vs " +
                             shape_str(v.shape));
        std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<int64_t>(i) * en);
        rg = rg || t.wants_grad(xs[i].id);
        ins.push_back(xs[i].id);
    }
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        auto items = xs;
        back = [items, en](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            for (size_t i = 0; i < items.size(); ++i) {
                if (!t.wants_grad(items[i].id)) continue;
                Array<T>& gi = t.grad_ref(items[i].id);
                const T* gp = g.data.data() + static_cast<int64_t>(i) * en;
                for (int64_t j = 0; j < en; ++j) gi[j] += gp[j];
            }
        };
    }
    return t.push(std::move(out), rg, std::move(ins), std::move(back), "stack0");
}

/// Select index i along axis 0, dropping that axis.
template <typename T>
Var<T> select0(Var<T> a, int64_t i) {
    Tape<T>& t = *a.tape;
    const Array<T>& av = t.value(a);
    if (av.rank() < 1 || i < 0 || i >= av.shape[0])
        throw ShapeError("select0 index " + std::to_string(i) + " out of range for " +
                         shape_str(av.shape));
    Shape os(av.shape.begin() + 1, av.shape.end());
    if (os.empty()) os.push_back(1);
    int64_t en = shape_numel(os);
    Array<T> out(os);
    std::copy(av.data.begin() + i * en, av.data.begin() + (i + 1) * en, out.data.begin());
    bool rg = t.wants_grad(a.id);
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        back = [a, i, en](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            Array<T>& ga = t.grad_ref(a.id);
            T* dst = ga.data.data() + i * en;
            for (int64_t j = 0; j < en; ++j) dst[j] += g[j];
        };
    }
    return t.push(std::move(out), rg, {a.id}, std::move(back), "select0");
}

/// Stack same-shaped tensors along a new trailing axis.
template <typename T>
Var<T> stack_last(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("stack_last of zero tensors");
    Tape<T>& t = *xs[0].tape;
    const Shape& es = t.value(xs[0]).shape;
    int64_t en = shape_numel(es);
    int64_t n = static_cast<int64_t>(xs.size());
    Shape os = es;
    os.push_back(n);
    Array<T> out(os);
    bool rg = false;
    std::vector<int32_t> ins;
    for (int64_t i = 0; i < n; ++i) {
        const Array<T>& v = t.value(xs[static_cast<size_t>(i)]);
        if (v.shape != es)
            throw ShapeError("stack_last shape mismatch: " + shape_str(es) + " vs " +
                             shape_str(v.shape));
        for (int64_t j = 0; j < en; ++j) out[j * n + i] = v[j];
        rg = rg || t.wants_grad(xs[static_cast<size_t>(i)].id);
        ins.push_back(xs[static_cast<size_t>(i)].id);
    }
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        auto items = xs;
        back = [items, en, n](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            for (int64_t i = 0; i < n; ++i) {
                if (!t.wants_grad(items[static_cast<size_t>(i)].id)) continue;
                Array<T>& gi = t.grad_ref(items[static_cast<size_t>(i)].id);
                for (int64_t j = 0; j < en; ++j) gi[j] += g[j * n + i];
            }
        };
    }
    return t.push(std::move(out), rg, std::move(ins), std::move(back), "stack_last");
}

/// Select index i along the last axis, dropping that axis.
template <typename T>
Var<T> select_last(Var<T> a, int64_t i) {
    Tape<T>& t = *a.tape;
    const Array<T>& av = t.value(a);
    int64_t n = av.shape.back();
    if (i < 0 || i >= n)
        throw ShapeError("select_last index " + std::to_string(i) + " out of range for " +
                         shape_str(av.shape));
    Shape os(av.shape.begin(), av.shape.end() - 1);
    if (os.empty()) os.push_back(1);
    int64_t en = shape_numel(os);
    Array<T> out(os);
    for (int64_t j = 0; j < en; ++j) out[j] = av[j * n + i];
    bool rg = t.wants_grad(a.id);
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        back = [a, i, en, n](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            Array<T>& ga = t.grad_ref(a.id);
            for (int64_t j = 0; j < en; ++j) ga[j * n + i] += g[j];
        };
    }
    return t.push(std::move(out), rg, {a.id}, std::move(back), "select_last");
}

/// Concatenate along the existing last axis.
template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_last of zero tensors");
    Tape<T>& t = *xs[0].tape;
    Shape lead(t.value(xs[0]).shape.begin(), t.value(xs[0]).shape.end() - 1);
    int64_t rows = shape_numel(lead);
    int64_t total = 0;
    bool rg = false;
    std::vector<int32_t> ins;
    std::vector<int64_t> widths;
    for (auto& x : xs) {
        const Array<T>& v = t.value(x);
        Shape l(v.shape.begin(), v.shape.end() - 1);
        if (l != lead)
            throw ShapeError("concat_last leading-dim mismatch: " + shape_str(t.value(xs[0]).shape) +
                             " vs " + shape_str(v.shape));
        widths.push_back(v.shape.back());
        total += v.shape.back();
        rg = rg || t.wants_grad(x.id);
        ins.push_back(x.id);
    }
    Shape os = lead;
    os.push_back(total);
    Array<T> out(os);
    int64_t off = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const Array<T>& v = t.value(xs[i]);
        int64_t w = widths[i];
        for (int64_t r = 0; r < rows; ++r)
            std::copy(v.data.begin() + r * w, v.data.begin() + (r + 1) * w,
                      out.data.begin() + r * total + off);
        off += w;
    }
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        auto items = xs;
        back = [items, widths, rows, total](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            int64_t off = 0;
            for (size_t i = 0; i < items.size(); ++i) {
                int64_t w = widths[i];
                if (t.wants_grad(items[i].id)) {
                    Array<T>& gi = t.grad_ref(items[i].id);
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < w; ++j) gi[r * w + j] += g[r * total + off + j];
                }
                off += w;
            }
        };
    }
    return t.push(std::move(out), rg, std::move(ins), std::move(back), "concat_last");
}

/// Softmax along the last axis restricted to entries where mask != 0.
/// Masked entries are exactly zero in the output; rows with no unmasked
/// entry are all-zero.
template <typename T>
Var<T> masked_softmax(Var<T> x, const Mask& mask) {
    Tape<T>& t = *x.tape;
    const Array<T>& xv = t.value(x);
    if (mask.shape != xv.shape)
        throw ShapeError("masked_softmax mask shape " + shape_str(mask.shape) +
                         " != input shape " + shape_str(xv.shape));
    int64_t n = xv.shape.back();
    int64_t rows = xv.numel() / n;
    Array<T> out(xv.shape, T(0));
    for (int64_t r = 0; r < rows; ++r) {
        const T* xp = xv.data.data() + r * n;
        const uint8_t* mp = mask.data.data() + r * n;
        T* op = out.data.data() + r * n;
        T mx = T(0);
        bool any = false;
        for (int64_t j = 0; j < n; ++j)
            if (mp[j] && (!any || xp[j] > mx)) mx = xp[j], any = true;
        if (!any) continue;
        T s = T(0);
        for (int64_t j = 0; j < n; ++j)
            if (mp[j]) {
                op[j] = std::exp(xp[j] - mx);
                s += op[j];
            }
        for (int64_t j = 0; j < n; ++j) op[j] /= s;
    }
    bool rg = t.wants_grad(x.id);
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        back = [x, n, rows](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            const Array<T>& y = t.value(Var<T>{self, &t});
            Array<T>& gx = t.grad_ref(x.id);
            for (int64_t r = 0; r < rows; ++r) {
                const T* gp = g.data.data() + r * n;
                const T* yp = y.data.data() + r * n;
                T dot = T(0);
                for (int64_t j = 0; j < n; ++j) dot += gp[j] * yp[j];
                T* gxp = gx.data.data() + r * n;
                for (int64_t j = 0; j < n; ++j) gxp[j] += yp[j] * (gp[j] - dot);
            }
        };
    }
    return t.push(std::move(out), rg, {x.id}, std::move(back), "masked_softmax");
}

/// Batch normalization over all axes except the last (channel) axis.
/// Training mode uses batch statistics and updates the running estimates;
/// inference mode uses the running estimates and requires them initialized.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BNState<T>& state, bool training) {
    Tape<T>& t = *x.tape;
    const Array<T>& xv = t.value(x);
    int64_t ch = xv.shape.back();
    int64_t rows = xv.numel() / ch;
    const Array<T>& gv = t.value(gamma);
    const Array<T>& bv = t.value(beta);
    if (gv.numel() != ch || bv.numel() != ch)
        throw ShapeError("batch_norm scale/shift length must equal channel count " +
                         std::to_string(ch));
    if (state.running_mean.numel() != ch) {
        state.running_mean = Array<T>({ch}, T(0));
        state.running_var = Array<T>({ch}, T(1));
        state.initialized = false;
    }

    Array<T> mean({ch}, T(0)), var({ch}, T(0));
    if (training) {
        if (rows < 2)
            throw NumericError("batch_norm training mode needs at least 2 rows per channel, got " +
                               std::to_string(rows));
        std::vector<double> msum(static_cast<size_t>(ch), 0.0), vsum(static_cast<size_t>(ch), 0.0);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < ch; ++c) msum[static_cast<size_t>(c)] += xv[r * ch + c];
        for (int64_t c = 0; c < ch; ++c)
            mean[c] = static_cast<T>(msum[static_cast<size_t>(c)] / static_cast<double>(rows));
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < ch; ++c) {
                double d = static_cast<double>(xv[r * ch + c]) - static_cast<double>(mean[c]);
                vsum[static_cast<size_t>(c)] += d * d;
            }
        for (int64_t c = 0; c < ch; ++c)
            var[c] = static_cast<T>(vsum[static_cast<size_t>(c)] / static_cast<double>(rows));
        for (int64_t c = 0; c < ch; ++c) {
            state.running_mean[c] = state.momentum * state.running_mean[c] +
                                    (T(1) - state.momentum) * mean[c];
            state.running_var[c] = state.momentum * state.running_var[c] +
                                   (T(1) - state.momentum) * var[c];
        }
        state.initialized = true;
    } else {
        if (!state.initialized)
            throw NumericError("batch_norm inference before any training update");
        mean = state.running_mean;
        var = state.running_var;
    }

    Array<T> istd({ch});
    for (int64_t c = 0; c < ch; ++c) istd[c] = T(1) / std::sqrt(var[c] + state.eps);
    Array<T> xhat(xv.shape);
    Array<T> out(xv.shape);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < ch; ++c) {
            T xh = (xv[r * ch + c] - mean[c]) * istd[c];
            xhat[r * ch + c] = xh;
            out[r * ch + c] = gv[c] * xh + bv[c];
        }

    bool rg = detail::any_grad<T>({x, gamma, beta});
    std::function<void(Tape<T>&, int32_t)> back;
    if (rg) {
        back = [x, gamma, beta, xhat, istd, rows, ch, training](Tape<T>& t, int32_t self) {
            const Array<T>& g = t.grad_ref(self);
            const Array<T>& gv = t.value(gamma);
            if (t.wants_grad(gamma.id)) {
                Array<T>& gg = t.grad_ref(gamma.id);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < ch; ++c) gg[c] += g[r * ch + c] * xhat[r * ch + c];
            }
            if (t.wants_grad(beta.id)) {
                Array<T>& gb = t.grad_ref(beta.id);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < ch; ++c) gb[c] += g[r * ch + c];
            }
            if (t.wants_grad(x.id)) {
                Array<T>& gx = t.grad_ref(x.id);
                if (training) {
                    // dL/dx through the batch statistics.
                    Array<T> sum_g({ch}, T(0)), sum_gx({ch}, T(0));
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t c = 0; c < ch; ++c) {
                            sum_g[c] += g[r * ch + c];
                            sum_gx[c] += g[r * ch + c] * xhat[r * ch + c];
                        }
                    T inv_rows = T(1) / static_cast<T>(rows);
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t c = 0; c < ch; ++c) {
                            T gy = g[r * ch + c];
                            gx[r * ch + c] += gv[c] * istd[c] *
                                              (gy - sum_g[c] * inv_rows -
                                               xhat[r * ch + c] * sum_gx[c] * inv_rows);
                        }
                } else {
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t c = 0; c < ch; ++c)
                            gx[r * ch + c] += g[r * ch + c] * gv[c] * istd[c];
                }
            }
        };
    }
    return t.push(std::move(out), rg, {x.id, gamma.id, beta.id}, std::move(back), "batch_norm");
}

}  // namespace stjgcn
