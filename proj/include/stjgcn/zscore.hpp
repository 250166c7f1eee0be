#pragma once

#include <vector>

#include "stjgcn/array.hpp"

namespace stjgcn {

/// Per-channel standardization statistics, fitted on the training rows only
/// and applied to every split. Uses the population standard deviation; a
/// degenerate channel gets a 1e-8 guard so the transform stays invertible.
struct ZScoreStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    static ZScoreStats fit(const Array<double>& series, int64_t t_begin, int64_t t_end) {
        if (series.rank() != 3)
            throw ShapeError("zscore expects a (T,N,C) series, got " + shape_str(series.shape));
        if (t_end <= t_begin) throw std::runtime_error("zscore fit on an empty training split");
        const int64_t n = series.shape[1], c = series.shape[2];
        ZScoreStats s;
        s.mean.assign(static_cast<size_t>(c), 0.0);
        s.stddev.assign(static_cast<size_t>(c), 0.0);
        const int64_t rows = (t_end - t_begin) * n;
        for (int64_t t = t_begin; t < t_end; ++t)
            for (int64_t i = 0; i < n; ++i)
                for (int64_t ch = 0; ch < c; ++ch)
                    s.mean[static_cast<size_t>(ch)] += series.at3(t, i, ch);
        for (int64_t ch = 0; ch < c; ++ch) s.mean[static_cast<size_t>(ch)] /= static_cast<double>(rows);
        for (int64_t t = t_begin; t < t_end; ++t)
            for (int64_t i = 0; i < n; ++i)
                for (int64_t ch = 0; ch < c; ++ch) {
                    double d = series.at3(t, i, ch) - s.mean[static_cast<size_t>(ch)];
                    s.stddev[static_cast<size_t>(ch)] += d * d;
                }
        for (int64_t ch = 0; ch < c; ++ch) {
            s.stddev[static_cast<size_t>(ch)] =
                std::sqrt(s.stddev[static_cast<size_t>(ch)] / static_cast<double>(rows));
            if (s.stddev[static_cast<size_t>(ch)] == 0.0) s.stddev[static_cast<size_t>(ch)] = 1e-8;
        }
        return s;
    }

    int64_t channels() const { return static_cast<int64_t>(mean.size()); }

    Array<double> apply(const Array<double>& series) const {
        check(series);
        Array<double> out = series;
        const int64_t c = series.shape[2];
        for (int64_t i = 0; i < out.numel(); ++i) {
            int64_t ch = i % c;
            out[i] = (out[i] - mean[static_cast<size_t>(ch)]) / stddev[static_cast<size_t>(ch)];
        }
        return out;
    }

    Array<double> invert(const Array<double>& normalized) const {
        check(normalized);
        Array<double> out = normalized;
        const int64_t c = normalized.shape[2];
        for (int64_t i = 0; i < out.numel(); ++i) {
            int64_t ch = i % c;
            out[i] = out[i] * stddev[static_cast<size_t>(ch)] + mean[static_cast<size_t>(ch)];
        }
        return out;
    }

private:
    void check(const Array<double>& series) const {
        if (series.rank() != 3 || series.shape[2] != channels())
            throw ShapeError("zscore transform expects (T,N," + std::to_string(channels()) +
                             "), got " + shape_str(series.shape));
    }
};

}  // namespace stjgcn
