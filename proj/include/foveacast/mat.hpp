#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "foveacast/error.hpp"

namespace foveacast {

// Dense row-major matrix. float in production, double in test mode (gradient
// checks are unreliable in 32-bit).
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}
    Mat(int r, int c, std::vector<T> d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(r) * c)
            throw ShapeMismatch("Mat init: data length " + std::to_string(data.size()) +
                                " vs " + std::to_string(r) + "x" + std::to_string(c));
    }

    T& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void add_(const Mat& o) {
        require_same_shape(o, "add_");
        for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    }

    void axpy_(T a, const Mat& o) {
        require_same_shape(o, "axpy_");
        for (size_t i = 0; i < data.size(); ++i) data[i] += a * o.data[i];
    }

    void scale_(T a) {
        for (auto& v : data) v *= a;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void require_same_shape(const Mat& o, const char* where) const {
        if (!same_shape(o))
            throw ShapeMismatch(std::string(where) + ": " + shape_str() + " vs " + o.shape_str());
    }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    static Mat zeros(int r, int c) { return Mat(r, c); }

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    // Uniform(-range, range) fill, consuming the given engine.
    static Mat uniform(int r, int c, T range, std::mt19937_64& rng) {
        Mat m(r, c);
        std::uniform_real_distribution<double> dist(-static_cast<double>(range),
                                                    static_cast<double>(range));
        for (auto& v : m.data) v = static_cast<T>(dist(rng));
        return m;
    }
};

#ifdef NDEBUG
#define FOVEACAST_DEBUG_FINITE(m, where) ((void)0)
#else
#define FOVEACAST_DEBUG_FINITE(m, where)                        \
    do {                                                        \
        if (!(m).all_finite()) throw ::foveacast::NonFinite(where); \
    } while (0)
#endif

namespace detail {
template <typename T>
using EMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ECMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
}  // namespace detail

// c = a * b
template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.rows)
        throw ShapeMismatch("matmul: " + a.shape_str() + " * " + b.shape_str());
    Mat<T> c(a.rows, b.cols);
    detail::EMap<T>(c.data.data(), c.rows, c.cols) =
        detail::ECMap<T>(a.data.data(), a.rows, a.cols) *
        detail::ECMap<T>(b.data.data(), b.rows, b.cols);
    return c;
}

// c = a * b^T
template <typename T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.cols)
        throw ShapeMismatch("matmul_nt: " + a.shape_str() + " * " + b.shape_str() + "^T");
    Mat<T> c(a.rows, b.rows);
    detail::EMap<T>(c.data.data(), c.rows, c.cols) =
        detail::ECMap<T>(a.data.data(), a.rows, a.cols) *
        detail::ECMap<T>(b.data.data(), b.rows, b.cols).transpose();
    return c;
}

// c += a^T * b (gradient accumulation form)
template <typename T>
void matmul_tn_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    if (a.rows != b.rows)
        throw ShapeMismatch("matmul_tn: " + a.shape_str() + "^T * " + b.shape_str());
    if (c.rows != a.cols || c.cols != b.cols)
        throw ShapeMismatch("matmul_tn out: " + c.shape_str());
    detail::EMap<T>(c.data.data(), c.rows, c.cols) +=
        detail::ECMap<T>(a.data.data(), a.rows, a.cols).transpose() *
        detail::ECMap<T>(b.data.data(), b.rows, b.cols);
}

// c += a * b
template <typename T>
void matmul_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    if (a.cols != b.rows)
        throw ShapeMismatch("matmul_acc: " + a.shape_str() + " * " + b.shape_str());
    if (c.rows != a.rows || c.cols != b.cols)
        throw ShapeMismatch("matmul_acc out: " + c.shape_str());
    detail::EMap<T>(c.data.data(), c.rows, c.cols) +=
        detail::ECMap<T>(a.data.data(), a.rows, a.cols) *
        detail::ECMap<T>(b.data.data(), b.rows, b.cols);
}

enum class ActKind { relu, sigmoid, tanh };

template <typename T>
T sigmoid_scalar(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Elementwise activation. The returned matrix is also the backward cache for
// sigmoid/tanh (derivative is a function of the output); relu derivative uses
// the input sign, so callers keep x alive where needed.
template <typename T>
Mat<T> activate(ActKind kind, const Mat<T>& x) {
    Mat<T> y(x.rows, x.cols);
    switch (kind) {
        case ActKind::relu:
            for (size_t i = 0; i < x.data.size(); ++i)
                y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
            break;
        case ActKind::sigmoid:
            for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = sigmoid_scalar(x.data[i]);
            break;
        case ActKind::tanh:
            for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = std::tanh(x.data[i]);
            break;
    }
    FOVEACAST_DEBUG_FINITE(y, "activate");
    return y;
}

// dx given upstream dy, the pre-activation input x and the activation output y.
template <typename T>
Mat<T> activate_backward(ActKind kind, const Mat<T>& dy, const Mat<T>& x, const Mat<T>& y) {
    dy.require_same_shape(y, "activate_backward");
    Mat<T> dx(dy.rows, dy.cols);
    switch (kind) {
        case ActKind::relu:
            for (size_t i = 0; i < dy.data.size(); ++i)
                dx.data[i] = x.data[i] > T(0) ? dy.data[i] : T(0);
            break;
        case ActKind::sigmoid:
            for (size_t i = 0; i < dy.data.size(); ++i)
                dx.data[i] = dy.data[i] * y.data[i] * (T(1) - y.data[i]);
            break;
        case ActKind::tanh:
            for (size_t i = 0; i < dy.data.size(); ++i)
                dx.data[i] = dy.data[i] * (T(1) - y.data[i] * y.data[i]);
            break;
    }
    return dx;
}

}  // namespace foveacast
