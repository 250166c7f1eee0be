#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "stjgcn/array.hpp"

namespace stjgcn {

/// Seeded RNG with hand-rolled distributions so that identical seeds give
/// bit-identical streams on every standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Box-Muller.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return mean + stddev * r * std::cos(a);
    }

    int64_t integer(int64_t lo, int64_t hi_inclusive) {
        uint64_t span = static_cast<uint64_t>(hi_inclusive - lo) + 1;
        return lo + static_cast<int64_t>(eng_() % span);
    }

    /// Fisher-Yates.
    template <typename Vec>
    void shuffle(Vec& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(eng_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

    template <typename T>
    void fill_uniform(Array<T>& a, double lo, double hi) {
        for (auto& v : a.data) v = static_cast<T>(uniform(lo, hi));
    }

    template <typename T>
    void fill_normal(Array<T>& a, double mean, double stddev) {
        for (auto& v : a.data) v = static_cast<T>(normal(mean, stddev));
    }

    /// Glorot/Xavier uniform for a (fan_in x fan_out) weight matrix.
    template <typename T>
    void fill_glorot(Array<T>& a, int64_t fan_in, int64_t fan_out) {
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        fill_uniform(a, -limit, limit);
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace stjgcn
