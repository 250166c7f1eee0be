#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stjgcn/array.hpp"

namespace stjgcn {

/// Chronological split fractions. The test share is whatever remains.
struct SplitSpec {
    double train = 0.6;
    double val = 0.2;

    void validate() const {
        if (train <= 0.0 || val <= 0.0 || train + val >= 1.0)
            throw std::runtime_error("split fractions must be positive and leave a test share");
    }
};

/// Sliding windows (P inputs, Q targets, stride 1) partitioned by the
/// chronological series split. A window is identified by its input start
/// index; no window crosses a split boundary.
struct WindowSplits {
    int64_t window = 0;    // P
    int64_t horizons = 0;  // Q
    std::vector<int64_t> train, val, test;
};

inline WindowSplits split_windows(int64_t series_len, int64_t window, int64_t horizons,
                                  const SplitSpec& spec) {
    spec.validate();
    if (window < 1 || horizons < 1) throw std::runtime_error("P and Q must be >= 1");
    if (series_len < window + horizons)
        throw std::runtime_error("series of length " + std::to_string(series_len) +
                                 " cannot hold one (P=" + std::to_string(window) +
                                 ", Q=" + std::to_string(horizons) + ") window");
    const int64_t t1 = static_cast<int64_t>(spec.train * static_cast<double>(series_len));
    const int64_t t2 =
        static_cast<int64_t>((spec.train + spec.val) * static_cast<double>(series_len));
    WindowSplits out;
    out.window = window;
    out.horizons = horizons;
    auto enumerate = [&](int64_t lo, int64_t hi, std::vector<int64_t>& dst) {
        for (int64_t s = lo; s + window + horizons <= hi; ++s) dst.push_back(s);
    };
    enumerate(0, t1, out.train);
    enumerate(t1, t2, out.val);
    enumerate(t2, series_len, out.test);
    if (out.train.empty())
        throw std::runtime_error("training split too small to hold one window");
    return out;
}

}  // namespace stjgcn
