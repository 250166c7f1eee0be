#pragma once

#include <string>
#include <vector>

#include "stjgcn/array.hpp"
#include "stjgcn/calendar.hpp"
#include "stjgcn/graph.hpp"

namespace stjgcn {

/// A dense multivariate sensor series: readings (T, N, C) on a fixed
/// sampling grid. Channel/node names are display conveniences; neither
/// persisted format stores them.
struct TrafficDataset {
    Array<double> readings;  // (T, N, C)
    int64_t start_epoch_seconds = 0;
    int64_t interval_minutes = 5;
    std::vector<std::string> channel_names;
    std::vector<std::string> node_ids;

    int64_t steps() const { return readings.shape[0]; }
    int64_t nodes() const { return readings.shape[1]; }
    int64_t channels() const { return readings.shape[2]; }

    Calendar calendar() const { return Calendar{start_epoch_seconds, interval_minutes}; }

    void validate() const;
    void default_names();
};

/// Shortest round-trip decimal form of a double (locale-free).
std::string format_double(double v);

/// Loads either encoding; binary is detected by its magic bytes.
TrafficDataset load_traffic(const std::string& path);

void save_traffic_csv(const TrafficDataset& ds, const std::string& path);
void save_traffic_binary(const TrafficDataset& ds, const std::string& path);

/// Distance edge list: CSV with header `from,to,cost`, integer node ids.
/// expected_nodes > 0 pins the node count; otherwise it is max(id)+1.
DistanceGraph load_distances(const std::string& path, int64_t expected_nodes = -1);

void save_distances_csv(const DistanceGraph& g, const std::string& path);

}  // namespace stjgcn
