#pragma once

#include <span>
#include <string>
#include <vector>

#include "stjgcn/dataset.hpp"
#include "stjgcn/metrics.hpp"
#include "stjgcn/model.hpp"
#include "stjgcn/windows.hpp"
#include "stjgcn/zscore.hpp"

namespace stjgcn {

/// Model-ready view of a dataset: normalized inputs at working precision,
/// raw channel-0 targets, and per-index calendar features.
template <typename T>
struct SeriesData {
    Array<T> normalized;        // (T, N, C)
    Array<double> raw_target;   // (T, N), channel 0 in original units
    std::vector<std::pair<int64_t, int64_t>> feats;  // (slot, day-of-week) per index

    static SeriesData prepare(const TrafficDataset& ds, const ZScoreStats& stats) {
        SeriesData s;
        Array<double> norm = stats.apply(ds.readings);
        s.normalized = Array<T>(norm.shape);
        for (int64_t i = 0; i < norm.numel(); ++i) s.normalized[i] = static_cast<T>(norm[i]);
        s.raw_target = Array<double>({ds.steps(), ds.nodes()});
        for (int64_t t = 0; t < ds.steps(); ++t)
            for (int64_t i = 0; i < ds.nodes(); ++i)
                s.raw_target.at2(t, i) = ds.readings.at3(t, i, 0);
        Calendar cal = ds.calendar();
        s.feats.reserve(static_cast<size_t>(ds.steps()));
        for (int64_t t = 0; t < ds.steps(); ++t)
            s.feats.emplace_back(cal.slot(t), cal.day_of_week(t));
        return s;
    }

    int64_t nodes() const { return normalized.shape[1]; }
    int64_t channels() const { return normalized.shape[2]; }
};

template <typename T>
BatchInput<T> make_batch(const SeriesData<T>& s, std::span<const int64_t> starts, int64_t window) {
    const int64_t b = static_cast<int64_t>(starts.size());
    const int64_t n = s.nodes(), c = s.channels();
    BatchInput<T> in;
    in.x = Array<T>({b, window, n, c});
    for (int64_t w = 0; w < b; ++w) {
        int64_t s0 = starts[static_cast<size_t>(w)];
        std::copy(s.normalized.data.begin() + s0 * n * c,
                  s.normalized.data.begin() + (s0 + window) * n * c,
                  in.x.data.begin() + w * window * n * c);
        std::vector<std::pair<int64_t, int64_t>> feats;
        feats.reserve(static_cast<size_t>(window));
        for (int64_t p = 0; p < window; ++p) feats.push_back(s.feats[static_cast<size_t>(s0 + p)]);
        in.time_feats.push_back(std::move(feats));
    }
    return in;
}

/// Raw-unit targets (Q, B, N) for the given windows.
template <typename T>
Array<T> make_targets(const SeriesData<T>& s, std::span<const int64_t> starts, int64_t window,
                      int64_t horizons) {
    const int64_t b = static_cast<int64_t>(starts.size());
    const int64_t n = s.nodes();
    Array<T> t({horizons, b, n});
    for (int64_t q = 0; q < horizons; ++q)
        for (int64_t w = 0; w < b; ++w)
            for (int64_t i = 0; i < n; ++i)
                t.at3(q, w, i) =
                    static_cast<T>(s.raw_target.at2(starts[static_cast<size_t>(w)] + window + q, i));
    return t;
}

/// De-normalize channel-0 predictions: x = v * std + mean.
template <typename T>
Var<T> denormalize_predictions(Var<T> pred, const ZScoreStats& stats) {
    return add_scalar(scale(pred, static_cast<T>(stats.stddev[0])),
                      static_cast<T>(stats.mean[0]));
}

struct TrainOptions {
    int64_t epochs = 200;
    int64_t batch_size = 64;
    double lr = 0.001;
    double beta = 1.0;
    double grad_clip = 0.0;
    uint64_t seed = 1;
};

struct EpochRecord {
    int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mae = 0.0;
    double val_rmse = 0.0;
    double val_mape = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int64_t best_epoch = -1;
    double best_val_loss = 0.0;
};

struct SplitEval {
    EvalMetrics overall;
    std::vector<EvalMetrics> per_horizon;
    double loss = 0.0;
    Array<double> pred;   // (Q, W, N) de-normalized
    Array<double> truth;  // (Q, W, N)
};

/// Inference over a window list, in batches, collecting de-normalized
/// predictions, targets, metrics, and the combined loss.
template <typename T>
SplitEval evaluate_split(Model<T>& model, const SeriesData<T>& s,
                         const std::vector<int64_t>& starts, const ZScoreStats& stats,
                         double beta, int64_t batch_size, bool training_mode = false) {
    const int64_t q = model.cfg.horizons, n = model.cfg.nodes;
    const int64_t total = static_cast<int64_t>(starts.size());
    SplitEval ev;
    ev.pred = Array<double>({q, total, n});
    ev.truth = Array<double>({q, total, n});
    double loss_acc = 0.0;
    for (int64_t at = 0; at < total; at += batch_size) {
        int64_t b = std::min<int64_t>(batch_size, total - at);
        std::span<const int64_t> chunk(starts.data() + at, static_cast<size_t>(b));
        BatchInput<T> in = make_batch(s, chunk, model.cfg.window);
        Array<T> truth = make_targets(s, chunk, model.cfg.window, q);
        Tape<T> tape;
        ParamBind<T> bind(tape, false);
        Var<T> pred = denormalize_predictions(model.forward(tape, bind, in, training_mode), stats);
        Var<T> loss = combined_loss(tape, pred, truth, beta);
        loss_acc += static_cast<double>(loss.value()[0]) * static_cast<double>(b);
        const Array<T>& pv = pred.value();
        for (int64_t i = 0; i < q; ++i)
            for (int64_t w = 0; w < b; ++w)
                for (int64_t j = 0; j < n; ++j) {
                    ev.pred.at3(i, at + w, j) = static_cast<double>(pv.at3(i, w, j));
                    ev.truth.at3(i, at + w, j) = static_cast<double>(truth.at3(i, w, j));
                }
    }
    ev.loss = loss_acc / static_cast<double>(total);
    ev.overall = evaluate(ev.pred, ev.truth);
    ev.per_horizon = evaluate_per_horizon(ev.pred, ev.truth);
    return ev;
}

/// Forecast that repeats the last observed value for every horizon.
template <typename T>
SplitEval persistence_baseline(const SeriesData<T>& s, const std::vector<int64_t>& starts,
                               int64_t window, int64_t horizons) {
    const int64_t n = s.nodes();
    const int64_t total = static_cast<int64_t>(starts.size());
    SplitEval ev;
    ev.pred = Array<double>({horizons, total, n});
    ev.truth = Array<double>({horizons, total, n});
    for (int64_t q = 0; q < horizons; ++q)
        for (int64_t w = 0; w < total; ++w)
            for (int64_t i = 0; i < n; ++i) {
                int64_t s0 = starts[static_cast<size_t>(w)];
                ev.pred.at3(q, w, i) = s.raw_target.at2(s0 + window - 1, i);
                ev.truth.at3(q, w, i) = s.raw_target.at2(s0 + window + q, i);
            }
    ev.overall = evaluate(ev.pred, ev.truth);
    ev.per_horizon = evaluate_per_horizon(ev.pred, ev.truth);
    return ev;
}

/// Mini-batch Adam over shuffled training windows; evaluates the validation
/// set each epoch and restores the best-validation parameters at the end.
template <typename T>
TrainResult train_model(Model<T>& model, const SeriesData<T>& s, const WindowSplits& splits,
                        const ZScoreStats& stats, const TrainOptions& opt) {
    TrainResult result;
    if (opt.epochs == 0) return result;
    if (splits.val.empty())
        throw std::runtime_error("validation split holds no windows; cannot select a best model");

    Rng shuffler(opt.seed);
    Adam<T> adam(static_cast<T>(opt.lr));

    struct Snapshot {
        std::vector<Array<T>> params;
        std::vector<std::tuple<Array<T>, Array<T>, bool>> bn;
    };
    auto take_snapshot = [&]() {
        Snapshot snap;
        for (auto* p : model.parameters()) snap.params.push_back(p->value);
        for (auto* bn : model.bn_layers())
            snap.bn.emplace_back(bn->state.running_mean, bn->state.running_var,
                                 bn->state.initialized);
        return snap;
    };
    auto restore_snapshot = [&](const Snapshot& snap) {
        auto& ps = model.parameters();
        for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = snap.params[i];
        auto bns = model.bn_layers();
        for (size_t i = 0; i < bns.size(); ++i) {
            bns[i]->state.running_mean = std::get<0>(snap.bn[i]);
            bns[i]->state.running_var = std::get<1>(snap.bn[i]);
            bns[i]->state.initialized = std::get<2>(snap.bn[i]);
        }
    };
    Snapshot best;

    std::vector<int64_t> order = splits.train;
    for (int64_t epoch = 0; epoch < opt.epochs; ++epoch) {
        shuffler.shuffle(order);
        double train_loss_acc = 0.0;
        int64_t seen = 0;
        for (int64_t at = 0; at < static_cast<int64_t>(order.size()); at += opt.batch_size) {
            int64_t b = std::min<int64_t>(opt.batch_size, static_cast<int64_t>(order.size()) - at);
            std::span<const int64_t> chunk(order.data() + at, static_cast<size_t>(b));
            try {
                BatchInput<T> in = make_batch(s, chunk, model.cfg.window);
                Array<T> truth = make_targets(s, chunk, model.cfg.window, model.cfg.horizons);
                Tape<T> tape;
                ParamBind<T> bind(tape, true);
                Var<T> pred =
                    denormalize_predictions(model.forward(tape, bind, in, true), stats);
                Var<T> loss = combined_loss(tape, pred, truth, opt.beta);
                tape.backward(loss);
                std::vector<std::pair<Parameter<T>*, const Array<T>*>> grads;
                for (auto& [p, v] : bind.bindings()) grads.emplace_back(p, &tape.grad(v));
                adam.step(grads, static_cast<T>(opt.grad_clip));
                train_loss_acc += static_cast<double>(loss.value()[0]) * static_cast<double>(b);
                seen += b;
            } catch (const NumericError& e) {
                throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(at / opt.batch_size) + ": " +
                                         e.what());
            }
        }

        SplitEval val = evaluate_split(model, s, splits.val, stats, opt.beta, opt.batch_size);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_loss_acc / static_cast<double>(seen);
        rec.val_loss = val.loss;
        rec.val_mae = val.overall.mae;
        rec.val_rmse = val.overall.rmse;
        rec.val_mape = val.overall.mape;
        result.history.push_back(rec);

        if (result.best_epoch < 0 || val.loss < result.best_val_loss) {
            result.best_epoch = epoch;
            result.best_val_loss = val.loss;
            best = take_snapshot();
        }
    }
    restore_snapshot(best);
    return result;
}

/// History CSV: epoch,train_loss,val_loss,val_mae,val_rmse,val_mape.
std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace stjgcn
