#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stjgcn/graph.hpp"
#include "stjgcn/metrics.hpp"
#include "stjgcn/model.hpp"

namespace stjgcn {

struct GradCheckOptions {
    int64_t nodes = 4;
    int64_t window = 8;
    int64_t hidden = 8;
    int64_t kernel = 2;
    int64_t horizons = 2;
    int64_t batch = 3;
    int64_t channels = 2;
    uint64_t seed = 1;
    double step = 1e-5;
    double tolerance = 1e-4;
    int64_t samples_per_param = 8;
    double beta = 0.5;
};

struct GroupCheck {
    std::string group;
    double max_rel_err = 0.0;
    int64_t entries_checked = 0;
};

struct GradCheckReport {
    std::vector<GroupCheck> groups;
    double tolerance = 0.0;
    bool passed = false;
    std::string worst_group;
    double worst_err = 0.0;
};

namespace detail {

inline double gc_rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline DistanceGraph gc_ring_graph(int64_t nodes, Rng& rng) {
    std::vector<DistanceEdge> edges;
    for (int64_t i = 0; i < nodes; ++i) {
        int64_t j = (i + 1) % nodes;
        double d = rng.uniform(0.5, 2.0);
        edges.push_back({i, j, d});
        edges.push_back({j, i, d * rng.uniform(0.9, 1.1)});
    }
    return DistanceGraph::make(nodes, edges);
}

}  // namespace detail

/// Finite-difference check of d(loss)/d(theta) for every parameter group of
/// a deliberately tiny model. Analytic gradients come from the requested
/// precision T; the finite-difference reference always runs in double on a
/// value-synced twin, so the check measures the fidelity of T's backward
/// pass rather than float32 forward noise. `tamper` (test hook) may corrupt
/// the analytic gradients of a group before comparison to prove the check
/// can fail.
template <typename T>
GradCheckReport gradcheck_model(
    const GradCheckOptions& opt,
    const std::function<void(const std::string&, Array<T>&)>& tamper = nullptr) {
    if (opt.nodes > 5 || opt.hidden > 8 || opt.window > 8)
        throw std::runtime_error("gradcheck is restricted to tiny models (N<=5, d<=8, P<=8)");

    Rng rng(opt.seed);
    auto graph = detail::gc_ring_graph(opt.nodes, rng);

    ModelConfig cfg;
    cfg.nodes = opt.nodes;
    cfg.channels = opt.channels;
    cfg.hidden = opt.hidden;
    cfg.kernel = opt.kernel;
    cfg.window = opt.window;
    cfg.horizons = opt.horizons;
    cfg.slots = 16;
    // Scores of the randomized embeddings cluster near zero; the threshold
    // sits off that cluster so finite-difference steps do not flip masks.
    cfg.delta_adt = 0.25;
    cfg.gamma = plan_dilations(opt.window, opt.kernel).gamma;
    auto stjg = build_predefined_offsets(graph, cfg.required_time_diffs(), 0.05);

    Model<T> model(cfg, stjg, rng);
    // Spread the embedding scores so both the masked and unmasked softmax
    // paths carry gradient.
    rng.fill_normal(model.embed.spatial.value, 0.0, 1.0);
    rng.fill_normal(model.embed.tod.value, 0.0, 1.0);
    rng.fill_normal(model.embed.dow.value, 0.0, 1.0);

    BatchInput<T> in;
    in.x = Array<T>({opt.batch, opt.window, opt.nodes, opt.channels});
    rng.fill_uniform(in.x, 0.0, 1.0);
    for (int64_t w = 0; w < opt.batch; ++w) {
        std::vector<std::pair<int64_t, int64_t>> feats;
        int64_t start = 5 * w;
        for (int64_t p = 0; p < opt.window; ++p) {
            int64_t idx = start + p;
            feats.emplace_back(idx % cfg.slots, (idx / cfg.slots) % 7);
        }
        in.time_feats.push_back(std::move(feats));
    }
    Array<T> truth({opt.horizons, opt.batch, opt.nodes});
    rng.fill_uniform(truth, 5.0, 15.0);

    // Analytic gradients at precision T.
    Tape<T> tape;
    ParamBind<T> bind(tape, true);
    Var<T> pred = model.forward(tape, bind, in, true);
    Var<T> loss = combined_loss(tape, pred, truth, opt.beta);
    tape.backward(loss);

    // Double twin sharing the exact parameter point and inputs.
    Rng rng_twin(opt.seed);
    auto graph_twin = detail::gc_ring_graph(opt.nodes, rng_twin);
    Model<double> twin(cfg, build_predefined_offsets(graph_twin, cfg.required_time_diffs(), 0.05),
                       rng_twin);
    auto& mp = model.parameters();
    auto& tp = twin.parameters();
    for (size_t i = 0; i < mp.size(); ++i)
        for (int64_t j = 0; j < mp[i]->value.numel(); ++j)
            tp[i]->value[j] = static_cast<double>(mp[i]->value[j]);
    BatchInput<double> in_twin;
    in_twin.x = Array<double>(in.x.shape);
    for (int64_t i = 0; i < in.x.numel(); ++i) in_twin.x[i] = static_cast<double>(in.x[i]);
    in_twin.time_feats = in.time_feats;
    Array<double> truth_twin(truth.shape);
    for (int64_t i = 0; i < truth.numel(); ++i) truth_twin[i] = static_cast<double>(truth[i]);

    auto ref_loss = [&]() {
        Tape<double> t2;
        ParamBind<double> b2(t2, false);
        Var<double> p2 = twin.forward(t2, b2, in_twin, true);
        return combined_loss(t2, p2, truth_twin, opt.beta).value()[0];
    };

    std::map<std::string, std::vector<std::pair<size_t, Array<T>>>> by_group;
    std::map<const Parameter<T>*, size_t> index_of;
    for (size_t i = 0; i < mp.size(); ++i) index_of[mp[i]] = i;
    for (auto& [p, v] : bind.bindings()) {
        Array<T> g = tape.grad(v);
        by_group[p->group].emplace_back(index_of.at(p), std::move(g));
    }
    if (tamper)
        for (auto& [group, items] : by_group)
            for (auto& [idx, g] : items) tamper(group, g);

    GradCheckReport report;
    report.tolerance = opt.tolerance;
    for (auto& [group, items] : by_group) {
        GroupCheck gc;
        gc.group = group;
        for (auto& [idx, g] : items) {
            Parameter<double>* p = tp[idx];
            int64_t n = p->value.numel();
            int64_t samples = std::min<int64_t>(n, opt.samples_per_param);
            for (int64_t s = 0; s < samples; ++s) {
                int64_t i = samples == n ? s : (s * n) / samples;
                double saved = p->value[i];
                p->value[i] = saved + opt.step;
                double fp = ref_loss();
                p->value[i] = saved - opt.step;
                double fm = ref_loss();
                p->value[i] = saved;
                double fd = (fp - fm) / (2.0 * opt.step);
                double err = detail::gc_rel_err(static_cast<double>(g[i]), fd);
                if (err > gc.max_rel_err) gc.max_rel_err = err;
                ++gc.entries_checked;
            }
        }
        if (gc.max_rel_err > report.worst_err) {
            report.worst_err = gc.max_rel_err;
            report.worst_group = gc.group;
        }
        report.groups.push_back(std::move(gc));
    }
    report.passed = report.worst_err <= opt.tolerance;
    return report;
}

}  // namespace stjgcn
