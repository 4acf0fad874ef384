#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "foveacast/mat.hpp"

namespace foveacast {

// Learnable tensor with gradient and Adam moment buffers. All four buffers
// stay shape-equal; grad/m/v start at zero.
template <typename T>
struct Param {
    Mat<T> value;
    Mat<T> grad;
    Mat<T> m;
    Mat<T> v;
    int64_t step_count = 0;

    Param() = default;
    explicit Param(Mat<T> init)
        : value(std::move(init)),
          grad(value.rows, value.cols),
          m(value.rows, value.cols),
          v(value.rows, value.cols) {}

    int rows() const { return value.rows; }
    int cols() const { return value.cols; }
    void zero_grad() { grad.zero(); }
};

template <typename T>
struct NamedParam {
    std::string name;
    Param<T>* param;
};

template <typename T>
using ParamRegistry = std::vector<NamedParam<T>>;

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Classic Adam with bias correction. Weight decay enters the gradient (L2
// style) before the moment updates; the gradient buffer is zeroed afterward.
template <typename T>
void adam_step(Param<T>& p, const AdamConfig& cfg) {
    p.step_count += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(p.step_count));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(p.step_count));
    for (size_t i = 0; i < p.value.data.size(); ++i) {
        const double g =
            static_cast<double>(p.grad.data[i]) + cfg.weight_decay * static_cast<double>(p.value.data[i]);
        const double m = b1 * static_cast<double>(p.m.data[i]) + (1.0 - b1) * g;
        const double v = b2 * static_cast<double>(p.v.data[i]) + (1.0 - b2) * g * g;
        p.m.data[i] = static_cast<T>(m);
        p.v.data[i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p.value.data[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    p.zero_grad();
}

// Weight init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), zero biases. LSTM
// forget-gate biases are raised to 1.0 separately.
template <typename T>
Mat<T> init_weight(int out_dim, int in_dim, std::mt19937_64& rng) {
    const T range = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_dim)));
    return Mat<T>::uniform(out_dim, in_dim, range, rng);
}

// y = x W^T + b, rows are batch entries. Caches x for backward.
template <typename T>
struct Linear {
    Param<T> w;  // out x in
    Param<T> b;  // 1 x out
    Mat<T> cached_x;
    bool has_cache = false;

    Linear() = default;
    Linear(int in_dim, int out_dim, std::mt19937_64& rng)
        : w(init_weight<T>(out_dim, in_dim, rng)), b(Mat<T>(1, out_dim)) {}

    int in_dim() const { return w.cols(); }
    int out_dim() const { return w.rows(); }

    Mat<T> forward(const Mat<T>& x) {
        if (x.cols != w.cols())
            throw ShapeMismatch("linear forward: x " + x.shape_str() + " vs W " +
                                w.value.shape_str());
        Mat<T> y = matmul_nt(x, w.value);
        for (int r = 0; r < y.rows; ++r)
            for (int c = 0; c < y.cols; ++c) y(r, c) += b.value(0, c);
        cached_x = x;
        has_cache = true;
        FOVEACAST_DEBUG_FINITE(y, "linear forward");
        return y;
    }

    // Accumulates parameter grads, returns dL/dx.
    Mat<T> backward(const Mat<T>& dy) {
        if (!has_cache) throw MissingForwardCache("linear");
        if (dy.rows != cached_x.rows || dy.cols != w.rows())
            throw ShapeMismatch("linear backward: dy " + dy.shape_str());
        matmul_tn_acc(dy, cached_x, w.grad);
        for (int r = 0; r < dy.rows; ++r)
            for (int c = 0; c < dy.cols; ++c) b.grad(0, c) += dy(r, c);
        return matmul(dy, w.value);
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        reg.push_back({prefix + ".w", &w});
        reg.push_back({prefix + ".b", &b});
    }
};

// Two-layer perceptron with ReLU hidden and optional sigmoid output; the shape
// used by the fusion gates (128->64->1) and prediction heads (256->128->2).
template <typename T>
struct Mlp2 {
    Linear<T> l1;
    Linear<T> l2;
    bool sigmoid_out = true;
    Mat<T> cached_pre1, cached_h, cached_y;

    Mlp2() = default;
    Mlp2(int in_dim, int hidden_dim, int out_dim, bool sigmoid_out_, std::mt19937_64& rng)
        : l1(in_dim, hidden_dim, rng), l2(hidden_dim, out_dim, rng), sigmoid_out(sigmoid_out_) {}

    Mat<T> forward(const Mat<T>& x) {
        cached_pre1 = l1.forward(x);
        cached_h = activate(ActKind::relu, cached_pre1);
        Mat<T> pre2 = l2.forward(cached_h);
        cached_y = sigmoid_out ? activate(ActKind::sigmoid, pre2) : std::move(pre2);
        return cached_y;
    }

    Mat<T> backward(const Mat<T>& dy) {
        Mat<T> dpre2 = sigmoid_out ? activate_backward(ActKind::sigmoid, dy, cached_y, cached_y)
                                   : dy;
        Mat<T> dh = l2.backward(dpre2);
        Mat<T> dpre1 = activate_backward(ActKind::relu, dh, cached_pre1, cached_h);
        return l1.backward(dpre1);
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        l1.register_params(reg, prefix + ".l1");
        l2.register_params(reg, prefix + ".l2");
    }
};

// One LSTM layer. Gate block order in the stacked 4H dimension is fixed as
// [input, forget, cell, output]; checkpoints rely on this layout.
template <typename T>
struct LstmLayer {
    Param<T> w_ih;  // 4H x D_in
    Param<T> w_hh;  // 4H x H
    Param<T> b;     // 1 x 4H
    int hidden = 0;
    int in_dim = 0;

    struct StepCache {
        Mat<T> x, h_prev, c_prev;
        Mat<T> gi, gf, gg, go;  // post-activation gates
        Mat<T> c_new, tanh_c;
    };
    std::vector<StepCache> cache;

    LstmLayer() = default;
    LstmLayer(int in_dim_, int hidden_, std::mt19937_64& rng)
        : w_ih(init_weight<T>(4 * hidden_, in_dim_, rng)),
          w_hh(init_weight<T>(4 * hidden_, hidden_, rng)),
          b(Mat<T>(1, 4 * hidden_)),
          hidden(hidden_),
          in_dim(in_dim_) {
        // Forget-gate bias starts at 1 so early training keeps cell memory.
        for (int i = hidden; i < 2 * hidden; ++i) b.value(0, i) = T(1);
    }

    // One cell step; pushes the step cache used by backward.
    void step(const Mat<T>& x, const Mat<T>& h_prev, const Mat<T>& c_prev, Mat<T>& h_out,
              Mat<T>& c_out) {
        if (x.cols != in_dim || h_prev.cols != hidden || c_prev.cols != hidden)
            throw ShapeMismatch("lstm step: x " + x.shape_str());
        const int B = x.rows;
        const int H = hidden;
        Mat<T> pre = matmul_nt(x, w_ih.value);
        {
            Mat<T> hh = matmul_nt(h_prev, w_hh.value);
            pre.add_(hh);
            for (int r = 0; r < B; ++r)
                for (int c = 0; c < 4 * H; ++c) pre(r, c) += b.value(0, c);
        }
        StepCache sc;
        sc.x = x;
        sc.h_prev = h_prev;
        sc.c_prev = c_prev;
        sc.gi = Mat<T>(B, H);
        sc.gf = Mat<T>(B, H);
        sc.gg = Mat<T>(B, H);
        sc.go = Mat<T>(B, H);
        sc.c_new = Mat<T>(B, H);
        sc.tanh_c = Mat<T>(B, H);
        h_out = Mat<T>(B, H);
        for (int r = 0; r < B; ++r) {
            for (int c = 0; c < H; ++c) {
                const T i = sigmoid_scalar(pre(r, c));
                const T f = sigmoid_scalar(pre(r, H + c));
                const T g = std::tanh(pre(r, 2 * H + c));
                const T o = sigmoid_scalar(pre(r, 3 * H + c));
                const T cn = f * c_prev(r, c) + i * g;
                const T tc = std::tanh(cn);
                sc.gi(r, c) = i;
                sc.gf(r, c) = f;
                sc.gg(r, c) = g;
                sc.go(r, c) = o;
                sc.c_new(r, c) = cn;
                sc.tanh_c(r, c) = tc;
                h_out(r, c) = o * tc;
            }
        }
        c_out = sc.c_new;
        cache.push_back(std::move(sc));
    }

    // Backward through one cached step (pops nothing; index selects the step).
    // dh/dc are gradients flowing into h_out/c_out; outputs are written to
    // dh_prev/dc_prev, and dx is returned when need_dx.
    Mat<T> step_backward(int idx, const Mat<T>& dh, const Mat<T>& dc, Mat<T>& dh_prev,
                         Mat<T>& dc_prev, bool need_dx) {
        const StepCache& sc = cache.at(static_cast<size_t>(idx));
        const int B = dh.rows;
        const int H = hidden;
        Mat<T> dpre(B, 4 * H);
        for (int r = 0; r < B; ++r) {
            for (int c = 0; c < H; ++c) {
                const T i = sc.gi(r, c), f = sc.gf(r, c), g = sc.gg(r, c), o = sc.go(r, c);
                const T tc = sc.tanh_c(r, c);
                const T do_ = dh(r, c) * tc;
                const T dct = dc(r, c) + dh(r, c) * o * (T(1) - tc * tc);
                const T di = dct * g;
                const T df = dct * sc.c_prev(r, c);
                const T dg = dct * i;
                dc_prev(r, c) = dct * f;
                dpre(r, c) = di * i * (T(1) - i);
                dpre(r, H + c) = df * f * (T(1) - f);
                dpre(r, 2 * H + c) = dg * (T(1) - g * g);
                dpre(r, 3 * H + c) = do_ * o * (T(1) - o);
            }
        }
        matmul_tn_acc(dpre, sc.x, w_ih.grad);
        matmul_tn_acc(dpre, sc.h_prev, w_hh.grad);
        for (int r = 0; r < B; ++r)
            for (int c = 0; c < 4 * H; ++c) b.grad(0, c) += dpre(r, c);
        dh_prev = matmul(dpre, w_hh.value);
        if (need_dx) return matmul(dpre, w_ih.value);
        return Mat<T>();
    }

    void clear_cache() { cache.clear(); }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        reg.push_back({prefix + ".w_ih", &w_ih});
        reg.push_back({prefix + ".w_hh", &w_hh});
        reg.push_back({prefix + ".b", &b});
    }
};

// Two-layer LSTM over a sequence, zero initial state. forward() returns the
// final hidden state of layer 2 and caches everything for BPTT.
template <typename T>
struct LstmStack {
    LstmLayer<T> layer1;
    LstmLayer<T> layer2;
    int seq_len = 0;
    int batch = 0;

    LstmStack() = default;
    LstmStack(int in_dim, int hidden, std::mt19937_64& rng)
        : layer1(in_dim, hidden, rng), layer2(hidden, hidden, rng) {}

    int hidden() const { return layer1.hidden; }

    Mat<T> forward(const std::vector<Mat<T>>& xs) {
        if (xs.empty()) throw EmptySequence("lstm_seq_forward");
        layer1.clear_cache();
        layer2.clear_cache();
        seq_len = static_cast<int>(xs.size());
        batch = xs[0].rows;
        const int H = hidden();
        Mat<T> h1(batch, H), c1(batch, H), h2(batch, H), c2(batch, H);
        for (const Mat<T>& x : xs) {
            Mat<T> h1n, c1n, h2n, c2n;
            layer1.step(x, h1, c1, h1n, c1n);
            layer2.step(h1n, h2, c2, h2n, c2n);
            h1 = std::move(h1n);
            c1 = std::move(c1n);
            h2 = std::move(h2n);
            c2 = std::move(c2n);
        }
        return h2;
    }

    // BPTT from the gradient on the final layer-2 hidden state. Gradients
    // w.r.t. the input sequence are returned when need_dx (used by tests and
    // by nothing on the hot path).
    std::vector<Mat<T>> backward(const Mat<T>& d_final, bool need_dx = false) {
        if (seq_len == 0) throw MissingForwardCache("lstm stack");
        const int H = hidden();
        std::vector<Mat<T>> dxs;
        if (need_dx) dxs.resize(static_cast<size_t>(seq_len));
        // Layer 2 first: external gradient only at the last step.
        std::vector<Mat<T>> dh1(static_cast<size_t>(seq_len));
        {
            Mat<T> dh(batch, H), dc(batch, H);
            dh = d_final;
            for (int t = seq_len - 1; t >= 0; --t) {
                Mat<T> dh_prev(batch, H), dc_prev(batch, H);
                dh1[static_cast<size_t>(t)] =
                    layer2.step_backward(t, dh, dc, dh_prev, dc_prev, true);
                dh = std::move(dh_prev);
                dc = std::move(dc_prev);
            }
        }
        // Layer 1: per-step external gradients from layer 2.
        {
            Mat<T> dh(batch, H), dc(batch, H);
            for (int t = seq_len - 1; t >= 0; --t) {
                dh.add_(dh1[static_cast<size_t>(t)]);
                Mat<T> dh_prev(batch, H), dc_prev(batch, H);
                Mat<T> dx = layer1.step_backward(t, dh, dc, dh_prev, dc_prev, need_dx);
                if (need_dx) dxs[static_cast<size_t>(t)] = std::move(dx);
                dh = std::move(dh_prev);
                dc = std::move(dc_prev);
            }
        }
        layer1.clear_cache();
        layer2.clear_cache();
        seq_len = 0;
        return dxs;
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        layer1.register_params(reg, prefix + ".0");
        layer2.register_params(reg, prefix + ".1");
    }
};

// Mean over batch rows of the squared Euclidean norm of (pred - target).
template <typename T>
double mse_loss(const Mat<T>& pred, const Mat<T>& target) {
    pred.require_same_shape(target, "mse_loss");
    if (pred.rows == 0) throw EmptyInput("mse_loss");
    double acc = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        acc += d * d;
    }
    return acc / pred.rows;
}

// d(mse_loss)/d(pred), scaled by upstream factor.
template <typename T>
Mat<T> mse_loss_backward(const Mat<T>& pred, const Mat<T>& target, double upstream = 1.0) {
    pred.require_same_shape(target, "mse_loss_backward");
    Mat<T> d(pred.rows, pred.cols);
    const double s = 2.0 * upstream / pred.rows;
    for (size_t i = 0; i < pred.data.size(); ++i)
        d.data[i] = static_cast<T>(s * (static_cast<double>(pred.data[i]) -
                                        static_cast<double>(target.data[i])));
    return d;
}

}  // namespace foveacast
