#pragma once

#include "stjgcn/dataset.hpp"
#include "stjgcn/graph.hpp"

namespace stjgcn {

/// Desk-scale synthetic traffic: a ring-plus-chords road graph and readings
/// made of a daily sinusoid per node, graph-diffusion coupling of the
/// previous step's deviations along edges, and seeded noise. Deterministic
/// per seed; noise_amplitude 0 gives an exactly 24h-periodic signal.
struct SyntheticData {
    TrafficDataset dataset;
    DistanceGraph graph;
};

SyntheticData generate_synthetic(int64_t nodes, int64_t steps, int64_t interval_minutes,
                                 uint64_t seed, double noise_amplitude = 2.0);

}  // namespace stjgcn
