#pragma once

#include <vector>

#include "foveacast/nn.hpp"

namespace foveacast {

// 3x3 stride-2 convolution with padding 1 over square NCHW images flattened
// into Mat rows. Desk-scale direct loops; no im2col.
template <typename T>
struct ConvLayer {
    Param<T> w;  // C_out x (C_in*3*3)
    Param<T> b;  // 1 x C_out
    int c_in = 0, c_out = 0;

    Mat<T> cached_x;  // B x (C_in*R*R)
    Mat<T> cached_pre;
    int in_res = 0, out_res = 0;

    ConvLayer() = default;
    ConvLayer(int c_in_, int c_out_, std::mt19937_64& rng)
        : w(init_weight<T>(c_out_, c_in_ * 9, rng)), b(Mat<T>(1, c_out_)), c_in(c_in_), c_out(c_out_) {}

    static int out_size(int r) { return (r - 1) / 2 + 1; }

    Mat<T> forward(const Mat<T>& x, int res) {
        in_res = res;
        out_res = out_size(res);
        const int B = x.rows;
        if (x.cols != c_in * res * res)
            throw ShapeMismatch("conv forward: x " + x.shape_str());
        Mat<T> pre(B, c_out * out_res * out_res);
        for (int bi = 0; bi < B; ++bi) {
            for (int co = 0; co < c_out; ++co) {
                for (int oy = 0; oy < out_res; ++oy) {
                    for (int ox = 0; ox < out_res; ++ox) {
                        T acc = b.value(0, co);
                        for (int ci = 0; ci < c_in; ++ci) {
                            for (int ky = 0; ky < 3; ++ky) {
                                const int iy = oy * 2 + ky - 1;
                                if (iy < 0 || iy >= res) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int ix = ox * 2 + kx - 1;
                                    if (ix < 0 || ix >= res) continue;
                                    acc += w.value(co, (ci * 3 + ky) * 3 + kx) *
                                           x(bi, (ci * res + iy) * res + ix);
                                }
                            }
                        }
                        pre(bi, (co * out_res + oy) * out_res + ox) = acc;
                    }
                }
            }
        }
        cached_x = x;
        cached_pre = pre;
        return activate(ActKind::relu, pre);
    }

    Mat<T> backward(const Mat<T>& dy) {
        const int B = dy.rows;
        Mat<T> dpre = activate_backward(ActKind::relu, dy, cached_pre, cached_pre);
        Mat<T> dx(B, c_in * in_res * in_res);
        for (int bi = 0; bi < B; ++bi) {
            for (int co = 0; co < c_out; ++co) {
                for (int oy = 0; oy < out_res; ++oy) {
                    for (int ox = 0; ox < out_res; ++ox) {
                        const T g = dpre(bi, (co * out_res + oy) * out_res + ox);
                        if (g == T(0)) continue;
                        b.grad(0, co) += g;
                        for (int ci = 0; ci < c_in; ++ci) {
                            for (int ky = 0; ky < 3; ++ky) {
                                const int iy = oy * 2 + ky - 1;
                                if (iy < 0 || iy >= in_res) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int ix = ox * 2 + kx - 1;
                                    if (ix < 0 || ix >= in_res) continue;
                                    const int wi = (ci * 3 + ky) * 3 + kx;
                                    const int xi = (ci * in_res + iy) * in_res + ix;
                                    w.grad(co, wi) += g * cached_x(bi, xi);
                                    dx(bi, xi) += g * w.value(co, wi);
                                }
                            }
                        }
                    }
                }
            }
        }
        return dx;
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        reg.push_back({prefix + ".w", &w});
        reg.push_back({prefix + ".b", &b});
    }
};

// Three stride-2 conv layers (channels 1->8->16->32) followed by adaptive
// average pooling to 4x4 per channel, flattened to a 512 vector that feeds the
// shared scene projection head.
template <typename T>
struct SceneConvEncoder {
    static constexpr int kChannels[4] = {1, 8, 16, 32};
    static constexpr int kPool = 4;  // 32 channels * 4*4 = 512

    ConvLayer<T> conv1, conv2, conv3;
    int resolution = 64;

    int pool_in_res = 0;
    Mat<T> cached_pool_in;

    SceneConvEncoder() = default;
    SceneConvEncoder(int resolution_, std::mt19937_64& rng)
        : conv1(kChannels[0], kChannels[1], rng),
          conv2(kChannels[1], kChannels[2], rng),
          conv3(kChannels[2], kChannels[3], rng),
          resolution(resolution_) {}

    int out_dim() const { return kChannels[3] * kPool * kPool; }

    Mat<T> forward(const Mat<T>& images) {
        Mat<T> h1 = conv1.forward(images, resolution);
        Mat<T> h2 = conv2.forward(h1, conv1.out_res);
        Mat<T> h3 = conv3.forward(h2, conv2.out_res);
        pool_in_res = conv3.out_res;
        cached_pool_in = h3;
        return adaptive_avg_pool(h3, kChannels[3], pool_in_res, kPool);
    }

    Mat<T> backward(const Mat<T>& d_out) {
        Mat<T> dh3 =
            adaptive_avg_pool_backward(d_out, kChannels[3], pool_in_res, kPool, cached_pool_in.rows);
        Mat<T> dh2 = conv3.backward(dh3);
        Mat<T> dh1 = conv2.backward(dh2);
        return conv1.backward(dh1);
    }

    // Window [floor(i*I/O), ceil((i+1)*I/O)) per output cell; handles output
    // larger than input by replication.
    static Mat<T> adaptive_avg_pool(const Mat<T>& x, int channels, int in_res, int out_res) {
        const int B = x.rows;
        Mat<T> y(B, channels * out_res * out_res);
        for (int bi = 0; bi < B; ++bi) {
            for (int c = 0; c < channels; ++c) {
                for (int oy = 0; oy < out_res; ++oy) {
                    const int y0 = oy * in_res / out_res;
                    const int y1 = ((oy + 1) * in_res + out_res - 1) / out_res;
                    for (int ox = 0; ox < out_res; ++ox) {
                        const int x0 = ox * in_res / out_res;
                        const int x1 = ((ox + 1) * in_res + out_res - 1) / out_res;
                        T acc = T(0);
                        for (int iy = y0; iy < y1; ++iy)
                            for (int ix = x0; ix < x1; ++ix)
                                acc += x(bi, (c * in_res + iy) * in_res + ix);
                        y(bi, (c * out_res + oy) * out_res + ox) =
                            acc / static_cast<T>((y1 - y0) * (x1 - x0));
                    }
                }
            }
        }
        return y;
    }

    static Mat<T> adaptive_avg_pool_backward(const Mat<T>& dy, int channels, int in_res,
                                             int out_res, int batch) {
        Mat<T> dx(batch, channels * in_res * in_res);
        for (int bi = 0; bi < batch; ++bi) {
            for (int c = 0; c < channels; ++c) {
                for (int oy = 0; oy < out_res; ++oy) {
                    const int y0 = oy * in_res / out_res;
                    const int y1 = ((oy + 1) * in_res + out_res - 1) / out_res;
                    for (int ox = 0; ox < out_res; ++ox) {
                        const int x0 = ox * in_res / out_res;
                        const int x1 = ((ox + 1) * in_res + out_res - 1) / out_res;
                        const T g = dy(bi, (c * out_res + oy) * out_res + ox) /
                                    static_cast<T>((y1 - y0) * (x1 - x0));
                        for (int iy = y0; iy < y1; ++iy)
                            for (int ix = x0; ix < x1; ++ix)
                                dx(bi, (c * in_res + iy) * in_res + ix) += g;
                    }
                }
            }
        }
        return dx;
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        conv1.register_params(reg, prefix + ".conv1");
        conv2.register_params(reg, prefix + ".conv2");
        conv3.register_params(reg, prefix + ".conv3");
    }
};

}  // namespace foveacast
