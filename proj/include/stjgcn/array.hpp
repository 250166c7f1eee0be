#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stjgcn {

using Shape = std::vector<int64_t>;

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

/// Dense row-major n-dimensional array. Plain storage, no autodiff;
/// the Tape in tape.hpp layers differentiation on top of these.
template <typename T>
struct Array {
    Shape shape;
    std::vector<T> data;

    Array() = default;

    explicit Array(Shape s, T fill = T(0))
        : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {
        for (int64_t e : shape)
            if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    }

    static Array from(Shape s, std::vector<T> values) {
        Array a;
        a.shape = std::move(s);
        if (shape_numel(a.shape) != static_cast<int64_t>(values.size()))
            throw ShapeError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(a.shape));
        a.data = std::move(values);
        return a;
    }

    static Array scalar(T v) { return from({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-d / 3-d accessors for the common cases.
    T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    const T& at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T& at3(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    const T& at3(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

using Mask = Array<uint8_t>;

/// Row-major strides of a shape.
inline std::vector<int64_t> row_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = acc;
        acc *= s[static_cast<size_t>(i)];
    }
    return st;
}

/// Numpy-style trailing-aligned broadcast of two shapes.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[r - 1 - i] = std::max(da, db);
    }
    return out;
}

/// Strides of `in` viewed as shape `out` (0 where broadcast). `in` must
/// broadcast to `out`.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    auto st = row_strides(in);
    std::vector<int64_t> res(out.size(), 0);
    for (size_t i = 0; i < out.size(); ++i) {
        size_t ri = out.size() - 1 - i;
        if (i < in.size()) {
            size_t ii = in.size() - 1 - i;
            if (in[ii] == out[ri]) res[ri] = st[ii];
            else if (in[ii] == 1) res[ri] = 0;
            else throw ShapeError("cannot broadcast " + shape_str(in) + " to " + shape_str(out));
        }
    }
    return res;
}

/// Odometer walk over `out_shape`, calling f(out_linear, offset_a, offset_b).
template <typename F>
void broadcast_walk(const Shape& out_shape, const std::vector<int64_t>& sa,
                    const std::vector<int64_t>& sb, F&& f) {
    int64_t n = shape_numel(out_shape);
    size_t r = out_shape.size();
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
        f(lin, oa, ob);
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out_shape[d]) break;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

}  // namespace stjgcn
