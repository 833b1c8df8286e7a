#pragma once

#include <cmath>

#include "lsspi/nn/layers.hpp"

// Convolution stack for the image codec. Feature maps are stored as
// [channels x H*W] matrices with row-major pixel index p = y*W + x.

namespace lsspi::nn {

struct FeatureMap {
    Mat data;  // [ch x H*W]
    int h = 0, w = 0;

    int ch() const { return static_cast<int>(data.rows()); }
};

struct Conv2dCache {
    Mat col;  // im2col matrix
    int in_h = 0, in_w = 0;
};

struct Conv2d {
    Param W;  // [out_ch x in_ch*k*k]
    Param b;  // [out_ch x 1]
    int in_ch = 0, out_ch = 0, k = 3, stride = 1, pad = 1;

    void init(const std::string& prefix, int in_channels, int out_channels, int kernel,
              int stride_, int pad_, Rng& rng, bool zero = false) {
        in_ch = in_channels;
        out_ch = out_channels;
        k = kernel;
        stride = stride_;
        pad = pad_;
        W.init(prefix + ".W", out_ch, in_ch * k * k);
        b.init(prefix + ".b", out_ch, 1);
        if (!zero) {
            const double fan_in = static_cast<double>(in_ch) * k * k;
            rng.fill_normal(W.v, std::sqrt(2.0 / fan_in));
        }
    }

    void collect(ParamList& out) {
        out.push_back(&W);
        out.push_back(&b);
    }

    int out_dim(int in_dim) const { return (in_dim + 2 * pad - k) / stride + 1; }

    Mat im2col(const FeatureMap& x, int oh, int ow) const {
        Mat col = Mat::Zero(static_cast<Eigen::Index>(in_ch) * k * k,
                            static_cast<Eigen::Index>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const Eigen::Index oc = static_cast<Eigen::Index>(oy) * ow + ox;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= x.h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= x.w) continue;
                        const Eigen::Index ip = static_cast<Eigen::Index>(iy) * x.w + ix;
                        for (int ci = 0; ci < in_ch; ++ci)
                            col((static_cast<Eigen::Index>(ci) * k + ky) * k + kx, oc) =
                                x.data(ci, ip);
                    }
                }
            }
        return col;
    }

    FeatureMap forward(const FeatureMap& x, Conv2dCache* c) const {
        require(x.ch() == in_ch, "Conv2d: channel mismatch");
        const int oh = out_dim(x.h), ow = out_dim(x.w);
        Mat col = im2col(x, oh, ow);
        FeatureMap y;
        y.h = oh;
        y.w = ow;
        y.data = (W.v * col).colwise() + b.v.col(0);
        if (c) {
            c->col = std::move(col);
            c->in_h = x.h;
            c->in_w = x.w;
        }
        return y;
    }

    FeatureMap backward(const FeatureMap& dY, const Conv2dCache& c) {
        W.g.noalias() += dY.data * c.col.transpose();
        b.g += dY.data.rowwise().sum();
        const Mat dcol = W.v.transpose() * dY.data;
        FeatureMap dX;
        dX.h = c.in_h;
        dX.w = c.in_w;
        dX.data = Mat::Zero(in_ch, static_cast<Eigen::Index>(c.in_h) * c.in_w);
        const int oh = dY.h, ow = dY.w;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const Eigen::Index oc = static_cast<Eigen::Index>(oy) * ow + ox;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= c.in_h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= c.in_w) continue;
                        const Eigen::Index ip = static_cast<Eigen::Index>(iy) * c.in_w + ix;
                        for (int ci = 0; ci < in_ch; ++ci)
                            dX.data(ci, ip) +=
                                dcol((static_cast<Eigen::Index>(ci) * k + ky) * k + kx, oc);
                    }
                }
            }
        return dX;
    }
};

/// Nearest-neighbor x2 upsampling.
struct Upsample2 {
    static FeatureMap forward(const FeatureMap& x) {
        FeatureMap y;
        y.h = x.h * 2;
        y.w = x.w * 2;
        y.data.resize(x.ch(), static_cast<Eigen::Index>(y.h) * y.w);
        for (int iy = 0; iy < y.h; ++iy)
            for (int ix = 0; ix < y.w; ++ix)
                y.data.col(static_cast<Eigen::Index>(iy) * y.w + ix) =
                    x.data.col(static_cast<Eigen::Index>(iy / 2) * x.w + ix / 2);
        return y;
    }

    static FeatureMap backward(const FeatureMap& dY) {
        FeatureMap dX;
        dX.h = dY.h / 2;
        dX.w = dY.w / 2;
        dX.data = Mat::Zero(dY.ch(), static_cast<Eigen::Index>(dX.h) * dX.w);
        for (int iy = 0; iy < dY.h; ++iy)
            for (int ix = 0; ix < dY.w; ++ix)
                dX.data.col(static_cast<Eigen::Index>(iy / 2) * dX.w + ix / 2) +=
                    dY.data.col(static_cast<Eigen::Index>(iy) * dY.w + ix);
        return dX;
    }
};

struct SiluFmCache {
    Mat X;
};

struct SiluFm {
    static FeatureMap forward(const FeatureMap& x, SiluFmCache* c) {
        if (c) c->X = x.data;
        FeatureMap y = x;
        y.data = x.data.unaryExpr(&silu_scalar);
        return y;
    }
    static FeatureMap backward(const FeatureMap& dY, const SiluFmCache& c) {
        FeatureMap dX = dY;
        dX.data = dY.data.cwiseProduct(c.X.unaryExpr(&silu_grad_scalar));
        return dX;
    }
};

struct SigmoidFmCache {
    Mat Y;
};

struct SigmoidFm {
    static FeatureMap forward(const FeatureMap& x, SigmoidFmCache* c) {
        FeatureMap y = x;
        y.data = x.data.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
        if (c) c->Y = y.data;
        return y;
    }
    static FeatureMap backward(const FeatureMap& dY, const SigmoidFmCache& c) {
        FeatureMap dX = dY;
        dX.data = dY.data.cwiseProduct(
            c.Y.cwiseProduct(Mat::Ones(c.Y.rows(), c.Y.cols()) - c.Y));
        return dX;
    }
};

}  // namespace lsspi::nn
