#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "stjgcn/array.hpp"

namespace stjgcn {

struct DistanceEdge {
    int64_t from = 0;
    int64_t to = 0;
    double dist = 0.0;
};

/// Directed road-network distance graph. sigma is the population standard
/// deviation of the listed distances; if every distance is equal it is
/// degenerate and a caller-supplied override is required to build graphs.
struct DistanceGraph {
    int64_t node_count = 0;
    std::vector<DistanceEdge> edges;
    double sigma = 0.0;
    bool sigma_degenerate = false;

    static double population_std(const std::vector<DistanceEdge>& edges) {
        if (edges.empty()) return 0.0;
        double mean = 0.0;
        for (auto& e : edges) mean += e.dist;
        mean /= static_cast<double>(edges.size());
        double acc = 0.0;
        for (auto& e : edges) acc += (e.dist - mean) * (e.dist - mean);
        return std::sqrt(acc / static_cast<double>(edges.size()));
    }

    static DistanceGraph make(int64_t node_count, std::vector<DistanceEdge> edges) {
        DistanceGraph g;
        g.node_count = node_count;
        g.edges = std::move(edges);
        for (auto& e : g.edges) {
            if (e.from < 0 || e.from >= node_count || e.to < 0 || e.to >= node_count)
                throw std::runtime_error("edge references node outside [0," +
                                         std::to_string(node_count) + ")");
            if (e.dist < 0.0) throw std::runtime_error("negative distance on edge");
        }
        g.sigma = population_std(g.edges);
        g.sigma_degenerate = g.sigma == 0.0;
        return g;
    }
};

enum class Direction { Forward, Backward };

/// Degree-normalized directed adjacency:
///   forward:  D_O^{-1/2} A   D_O^{-1/2}   with D_O the out-degree (row sums)
///   backward: D_I^{-1/2} A^T D_I^{-1/2}   with D_I the in-degree (column sums)
/// Zero degrees are replaced by 1 before the inverse square root, which
/// leaves the corresponding rows/columns zero instead of dividing by zero.
inline Array<double> normalize_directed(const Array<double>& a, Direction dir) {
    if (a.rank() != 2 || a.shape[0] != a.shape[1])
        throw ShapeError("normalize_directed expects a square matrix, got " + shape_str(a.shape));
    int64_t n = a.shape[0];
    for (double v : a.data)
        if (v < 0.0) throw NumericError("normalize_directed: negative adjacency entry");

    Array<double> deg({n}, 0.0);
    if (dir == Direction::Forward) {
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) deg[i] += a.at2(i, j);
    } else {
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) deg[j] += a.at2(i, j);
    }
    Array<double> dinv({n});
    for (int64_t i = 0; i < n; ++i) dinv[i] = 1.0 / std::sqrt(deg[i] > 0.0 ? deg[i] : 1.0);

    Array<double> out({n, n}, 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double v = dir == Direction::Forward ? a.at2(i, j) : a.at2(j, i);
            out.at2(i, j) = dinv[i] * v * dinv[j];
        }
    return out;
}

/// One pre-defined STJG adjacency for a fixed time difference, with both
/// normalizations.
struct StjgKernel {
    Array<double> raw;  // thresholded Gaussian-kernel weights, entries in [0,1]
    Array<double> fw;
    Array<double> bw;
};

/// The stack of pre-defined STJG adjacency matrices, indexed by the time
/// difference between the two ends of an edge. Time-invariant: a function
/// of the time difference only, never of an absolute time step.
struct PredefinedStjg {
    int64_t node_count = 0;
    double delta_pdf = 0.0;
    double sigma = 0.0;
    std::map<int64_t, StjgKernel> by_offset;

    const StjgKernel& at(int64_t time_diff) const {
        auto it = by_offset.find(time_diff);
        if (it == by_offset.end())
            throw std::runtime_error("pre-defined STJG not materialized for time difference " +
                                     std::to_string(time_diff));
        return it->second;
    }
};

/// Raw adjacency between time steps t-k and t:
///   A^(k)[i][j] = exp(-((k+1) * dist(i,j))^2 / sigma^2), thresholded at
/// delta_pdf. dist(i,i) = 0, so the diagonal is 1 for every k; node pairs
/// without a listed edge get weight 0.
inline Array<double> stjg_raw_adjacency(const DistanceGraph& g, int64_t time_diff, double delta_pdf,
                                        double sigma) {
    int64_t n = g.node_count;
    constexpr double kMissing = std::numeric_limits<double>::infinity();
    Array<double> dist({n, n}, kMissing);
    for (int64_t i = 0; i < n; ++i) dist.at2(i, i) = 0.0;
    for (auto& e : g.edges) dist.at2(e.from, e.to) = e.dist;

    Array<double> a({n, n}, 0.0);
    double scale = static_cast<double>(time_diff + 1);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double d = dist.at2(i, j);
            if (!std::isfinite(d)) continue;
            double w = std::exp(-(scale * d) * (scale * d) / (sigma * sigma));
            if (w >= delta_pdf) a.at2(i, j) = w;
        }
    return a;
}

/// Materialize the pre-defined STJG for an explicit set of time differences.
inline PredefinedStjg build_predefined_offsets(const DistanceGraph& g,
                                               const std::vector<int64_t>& time_diffs,
                                               double delta_pdf,
                                               std::optional<double> sigma_override = {}) {
    if (delta_pdf < 0.0 || delta_pdf >= 1.0)
        throw std::runtime_error("delta_pdf must lie in [0,1), got " + std::to_string(delta_pdf));
    double sigma = sigma_override.value_or(g.sigma);
    if (sigma <= 0.0)
        throw std::runtime_error(
            "distance standard deviation is degenerate (all distances equal); "
            "pass an explicit sigma override");
    PredefinedStjg s;
    s.node_count = g.node_count;
    s.delta_pdf = delta_pdf;
    s.sigma = sigma;
    for (int64_t k : time_diffs) {
        if (s.by_offset.count(k)) continue;
        StjgKernel e;
        e.raw = stjg_raw_adjacency(g, k, delta_pdf, sigma);
        e.fw = normalize_directed(e.raw, Direction::Forward);
        e.bw = normalize_directed(e.raw, Direction::Backward);
        s.by_offset.emplace(k, std::move(e));
    }
    return s;
}

/// Materialize time differences 0 .. K-1 (kernel size K).
inline PredefinedStjg build_predefined(const DistanceGraph& g, int64_t kernel_size,
                                       double delta_pdf,
                                       std::optional<double> sigma_override = {}) {
    if (kernel_size < 1) throw std::runtime_error("kernel size must be >= 1");
    std::vector<int64_t> ks(static_cast<size_t>(kernel_size));
    for (int64_t k = 0; k < kernel_size; ++k) ks[static_cast<size_t>(k)] = k;
    return build_predefined_offsets(g, ks, delta_pdf, sigma_override);
}

}  // namespace stjgcn
