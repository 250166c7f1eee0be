#pragma once

#include <cstdint>
#include <string>

#include "stjgcn/array.hpp"
#include "stjgcn/tape.hpp"

namespace stjgcn {

/// Entries with |truth| below this are excluded from every MAPE-style term.
inline constexpr double kMapeMaskThreshold = 1e-3;

/// Combined MAE + beta * MAPE(%) training loss over de-normalized values:
///   (1/Q) sum_i ( mean_nodes |d| + beta * 100 * mean_masked(|d| / truth) )
/// averaged over the batch. pred and truth are (Q, B, N); truth is constant.
/// If every target of a horizon/window is masked its MAPE term contributes
/// zero; *all_masked reports whether that happened anywhere.
template <typename T>
Var<T> combined_loss(Tape<T>& tape, Var<T> pred, const Array<T>& truth, double beta,
                     bool* all_masked = nullptr) {
    const Array<T>& pv = pred.value();
    if (pv.shape != truth.shape)
        throw ShapeError("loss shapes disagree: prediction " + shape_str(pv.shape) +
                         " vs truth " + shape_str(truth.shape));
    if (pv.rank() != 3) throw ShapeError("loss expects (Q,B,N), got " + shape_str(pv.shape));
    if (beta < 0) throw std::runtime_error("beta must be >= 0");
    const int64_t q = pv.shape[0], b = pv.shape[1], n = pv.shape[2];

    Array<T> w(truth.shape, T(0));
    bool saw_all_masked = false;
    for (int64_t i = 0; i < q; ++i)
        for (int64_t j = 0; j < b; ++j) {
            int64_t cnt = 0;
            for (int64_t k = 0; k < n; ++k)
                if (std::abs(static_cast<double>(truth.at3(i, j, k))) >= kMapeMaskThreshold) ++cnt;
            if (cnt == 0) saw_all_masked = true;
            for (int64_t k = 0; k < n; ++k) {
                T tv = truth.at3(i, j, k);
                double wm = 1.0 / static_cast<double>(q * b * n);
                double wp = 0.0;
                if (cnt > 0 && std::abs(static_cast<double>(tv)) >= kMapeMaskThreshold)
                    wp = beta * 100.0 /
                         (static_cast<double>(tv) * static_cast<double>(q * b * cnt));
                w.at3(i, j, k) = static_cast<T>(wm + wp);
            }
        }
    if (all_masked) *all_masked = saw_all_masked;
    Var<T> diff = sub(pred, tape.constant(truth));
    return sum_all(mul(abs_op(diff), tape.constant(std::move(w))));
}

struct EvalMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;  // percent
};

/// MAE / RMSE / MAPE over de-normalized values. MAPE masks near-zero
/// targets and is reported as a percentage.
template <typename T>
EvalMetrics evaluate(const Array<T>& pred, const Array<T>& truth) {
    if (pred.shape != truth.shape)
        throw ShapeError("evaluate shapes disagree: " + shape_str(pred.shape) + " vs " +
                         shape_str(truth.shape));
    EvalMetrics m;
    double se = 0.0, ape = 0.0;
    int64_t nm = 0;
    const int64_t n = pred.numel();
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(pred[i]) - static_cast<double>(truth[i]);
        m.mae += std::abs(d);
        se += d * d;
        if (std::abs(static_cast<double>(truth[i])) >= kMapeMaskThreshold) {
            ape += std::abs(d) / static_cast<double>(truth[i]);
            ++nm;
        }
    }
    m.mae /= static_cast<double>(n);
    m.rmse = std::sqrt(se / static_cast<double>(n));
    m.mape = nm > 0 ? ape / static_cast<double>(nm) * 100.0 : 0.0;
    return m;
}

/// Per-horizon metrics for (Q, ...) prediction/truth blocks.
template <typename T>
std::vector<EvalMetrics> evaluate_per_horizon(const Array<T>& pred, const Array<T>& truth) {
    if (pred.shape != truth.shape || pred.rank() < 2)
        throw ShapeError("per-horizon evaluate expects matching (Q,...) blocks");
    int64_t q = pred.shape[0];
    int64_t block = pred.numel() / q;
    Shape sub(pred.shape.begin() + 1, pred.shape.end());
    std::vector<EvalMetrics> out;
    out.reserve(static_cast<size_t>(q));
    for (int64_t i = 0; i < q; ++i) {
        Array<T> p(sub), t(sub);
        std::copy(pred.data.begin() + i * block, pred.data.begin() + (i + 1) * block,
                  p.data.begin());
        std::copy(truth.data.begin() + i * block, truth.data.begin() + (i + 1) * block,
                  t.data.begin());
        out.push_back(evaluate(p, t));
    }
    return out;
}

}  // namespace stjgcn
