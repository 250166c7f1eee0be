#include "stjgcn/synthetic.hpp"

#include <cmath>
#include <set>

#include "stjgcn/rng.hpp"

namespace stjgcn {

SyntheticData generate_synthetic(int64_t nodes, int64_t steps, int64_t interval_minutes,
                                 uint64_t seed, double noise_amplitude) {
    if (nodes < 2) throw std::runtime_error("synthetic data needs at least 2 nodes");
    if (steps < 1 || interval_minutes <= 0 || 1440 % interval_minutes != 0)
        throw std::runtime_error("bad synthetic dimensions");
    Rng rng(seed);

    // Ring with a few chords.
    std::vector<DistanceEdge> edges;
    std::set<std::pair<int64_t, int64_t>> seen;
    auto add_edge = [&](int64_t a, int64_t b, double d) {
        if (a == b || !seen.insert({a, b}).second) return;
        edges.push_back({a, b, d});
    };
    for (int64_t i = 0; i < nodes; ++i) {
        int64_t j = (i + 1) % nodes;
        double d = rng.uniform(1.0, 3.0);
        add_edge(i, j, d);
        add_edge(j, i, d * rng.uniform(0.9, 1.1));
    }
    int64_t chords = std::max<int64_t>(1, nodes / 4);
    for (int64_t c = 0; c < chords; ++c) {
        int64_t a = rng.integer(0, nodes - 1);
        int64_t b = rng.integer(0, nodes - 1);
        double d = rng.uniform(2.0, 5.0);
        add_edge(a, b, d);
        add_edge(b, a, d);
    }
    auto graph = DistanceGraph::make(nodes, std::move(edges));

    // Row-normalized Gaussian edge weights drive the diffusion coupling.
    Array<double> w({nodes, nodes}, 0.0);
    for (auto& e : graph.edges)
        w.at2(e.from, e.to) = std::exp(-(e.dist * e.dist) / (graph.sigma * graph.sigma));
    for (int64_t i = 0; i < nodes; ++i) {
        double row = 0.0;
        for (int64_t j = 0; j < nodes; ++j) row += w.at2(i, j);
        if (row > 0)
            for (int64_t j = 0; j < nodes; ++j) w.at2(i, j) /= row;
    }

    const int64_t slots = 1440 / interval_minutes;
    std::vector<double> base(static_cast<size_t>(nodes)), amp(static_cast<size_t>(nodes)),
        phase(static_cast<size_t>(nodes));
    for (int64_t i = 0; i < nodes; ++i) {
        base[static_cast<size_t>(i)] = rng.uniform(90.0, 140.0);
        amp[static_cast<size_t>(i)] = rng.uniform(25.0, 45.0);
        phase[static_cast<size_t>(i)] = rng.uniform(0.0, 6.283185307179586);
    }
    auto seasonal = [&](int64_t i, int64_t t) {
        double frac = static_cast<double>(t % slots) / static_cast<double>(slots);
        return base[static_cast<size_t>(i)] +
               amp[static_cast<size_t>(i)] *
                   std::sin(6.283185307179586 * frac + phase[static_cast<size_t>(i)]);
    };

    TrafficDataset ds;
    ds.readings = Array<double>({steps, nodes, 1});
    ds.start_epoch_seconds = parse_iso_timestamp("2018-01-01T00:00");
    ds.interval_minutes = interval_minutes;

    const double coupling = 0.45;
    std::vector<double> prev_dev(static_cast<size_t>(nodes), 0.0);
    for (int64_t t = 0; t < steps; ++t) {
        std::vector<double> dev(static_cast<size_t>(nodes));
        for (int64_t i = 0; i < nodes; ++i) {
            double diffused = 0.0;
            for (int64_t j = 0; j < nodes; ++j) diffused += w.at2(i, j) * prev_dev[static_cast<size_t>(j)];
            double d = coupling * diffused +
                       (noise_amplitude > 0 ? rng.normal(0.0, noise_amplitude) : 0.0);
            dev[static_cast<size_t>(i)] = d;
            ds.readings.at3(t, i, 0) = seasonal(i, t) + d;
        }
        prev_dev = std::move(dev);
    }
    ds.default_names();
    return {std::move(ds), std::move(graph)};
}

}  // namespace stjgcn
