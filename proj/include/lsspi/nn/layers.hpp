#pragma once

#include <cmath>
#include <utility>

#include "lsspi/core/rng.hpp"
#include "lsspi/nn/param.hpp"

// Dense layers with explicit forward, backward and forward-mode (JVP)
// passes. Activations are [tokens x features] matrices. backward()
// accumulates parameter gradients and returns the input gradient;
// forward_jvp() propagates (value, tangent) treating parameters as
// constants and can fill the same cache that backward consumes.

namespace lsspi::nn {

using MatPair = std::pair<Mat, Mat>;

inline Mat rowwise_mul(const Mat& x, const Eigen::RowVectorXd& v) {
    return x.array().rowwise() * v.array();
}

inline Mat rowwise_add(const Mat& x, const Eigen::RowVectorXd& v) {
    return x.array().rowwise() + v.array();
}

// ---------------------------------------------------------------- Linear

struct LinearCache {
    Mat X;
};

struct Linear {
    Param W;  // [out x in]
    Param b;  // [out x 1]

    void init(const std::string& prefix, int in, int out, Rng& rng, bool zero = false) {
        W.init(prefix + ".W", out, in);
        b.init(prefix + ".b", out, 1);
        if (!zero) {
            const double std_dev = std::sqrt(2.0 / (in + out));
            rng.fill_normal(W.v, std_dev);
        }
    }

    void collect(ParamList& out) {
        out.push_back(&W);
        out.push_back(&b);
    }

    Mat forward(const Mat& X, LinearCache* c) const {
        if (c) c->X = X;
        return rowwise_add(X * W.v.transpose(), b.v.transpose());
    }

    Mat backward(const Mat& dY, const LinearCache& c) {
        W.g.noalias() += dY.transpose() * c.X;
        b.g += dY.colwise().sum().transpose();
        return dY * W.v;
    }

    Mat jvp(const Mat& dX) const { return dX * W.v.transpose(); }

    MatPair forward_jvp(const Mat& X, const Mat& dX, LinearCache* c) const {
        return {forward(X, c), jvp(dX)};
    }
};

// ------------------------------------------------------------ activations

inline double gelu_scalar(double x) { return 0.5 * x * std::erfc(-x * M_SQRT1_2); }
inline double gelu_grad_scalar(double x) {
    const double phi = 0.5 * std::erfc(-x * M_SQRT1_2);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return phi + x * pdf;
}

struct GeluCache {
    Mat X;
};

struct Gelu {
    static Mat forward(const Mat& X, GeluCache* c) {
        if (c) c->X = X;
        return X.unaryExpr(&gelu_scalar);
    }
    static Mat backward(const Mat& dY, const GeluCache& c) {
        return dY.cwiseProduct(c.X.unaryExpr(&gelu_grad_scalar));
    }
    static MatPair forward_jvp(const Mat& X, const Mat& dX, GeluCache* c) {
        if (c) c->X = X;
        return {X.unaryExpr(&gelu_scalar), dX.cwiseProduct(X.unaryExpr(&gelu_grad_scalar))};
    }
};

inline double silu_scalar(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad_scalar(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

struct SiluCache {
    Mat X;
};

struct Silu {
    static Mat forward(const Mat& X, SiluCache* c) {
        if (c) c->X = X;
        return X.unaryExpr(&silu_scalar);
    }
    static Mat backward(const Mat& dY, const SiluCache& c) {
        return dY.cwiseProduct(c.X.unaryExpr(&silu_grad_scalar));
    }
    static MatPair forward_jvp(const Mat& X, const Mat& dX, SiluCache* c) {
        if (c) c->X = X;
        return {X.unaryExpr(&silu_scalar), dX.cwiseProduct(X.unaryExpr(&silu_grad_scalar))};
    }
};

// -------------------------------------------------------------- LayerNorm

struct LayerNormCache {
    Mat xhat;
    Vec inv_std;
};

struct LayerNorm {
    Param gamma, beta;
    bool affine = true;
    double eps = 1e-5;

    void init(const std::string& prefix, int dim, bool with_affine = true) {
        affine = with_affine;
        if (affine) {
            gamma.init(prefix + ".gamma", dim, 1);
            gamma.v.setOnes();
            beta.init(prefix + ".beta", dim, 1);
        }
    }

    void collect(ParamList& out) {
        if (affine) {
            out.push_back(&gamma);
            out.push_back(&beta);
        }
    }

    Mat forward(const Mat& X, LayerNormCache* c) const {
        const Eigen::Index n = X.rows(), D = X.cols();
        Mat xhat(n, D);
        Vec inv_std(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mu = X.row(i).mean();
            const double var = (X.row(i).array() - mu).square().mean();
            const double is = 1.0 / std::sqrt(var + eps);
            xhat.row(i) = (X.row(i).array() - mu) * is;
            inv_std[i] = is;
        }
        if (c) {
            c->xhat = xhat;
            c->inv_std = inv_std;
        }
        if (!affine) return xhat;
        return rowwise_add(rowwise_mul(xhat, gamma.v.transpose()), beta.v.transpose());
    }

    Mat backward(const Mat& dY, const LayerNormCache& c) {
        const Eigen::Index n = dY.rows(), D = dY.cols();
        Mat dxhat = affine ? rowwise_mul(dY, gamma.v.transpose()) : dY;
        if (affine) {
            gamma.g += dY.cwiseProduct(c.xhat).colwise().sum().transpose();
            beta.g += dY.colwise().sum().transpose();
        }
        Mat dX(n, D);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double m1 = dxhat.row(i).mean();
            const double m2 = dxhat.row(i).cwiseProduct(c.xhat.row(i)).mean();
            dX.row(i) =
                c.inv_std[i] * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
        }
        return dX;
    }

    MatPair forward_jvp(const Mat& X, const Mat& dX, LayerNormCache* c) const {
        const Eigen::Index n = X.rows(), D = X.cols();
        Mat xhat(n, D), dxhat(n, D);
        Vec inv_std(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mu = X.row(i).mean();
            const Eigen::RowVectorXd ctr = X.row(i).array() - mu;
            const double var = ctr.squaredNorm() / static_cast<double>(D);
            const double is = 1.0 / std::sqrt(var + eps);
            const double dmu = dX.row(i).mean();
            const Eigen::RowVectorXd dc = dX.row(i).array() - dmu;
            const double dvar = 2.0 * ctr.cwiseProduct(dc).mean();
            const double dis = -0.5 * is * is * is * dvar;
            xhat.row(i) = ctr * is;
            dxhat.row(i) = dc * is + ctr * dis;
            inv_std[i] = is;
        }
        if (c) {
            c->xhat = xhat;
            c->inv_std = inv_std;
        }
        if (!affine) return {xhat, dxhat};
        return {rowwise_add(rowwise_mul(xhat, gamma.v.transpose()), beta.v.transpose()),
                rowwise_mul(dxhat, gamma.v.transpose())};
    }
};

// ---------------------------------------------------------- self-attention

struct AttentionCache {
    LinearCache qkv_cache, proj_cache;
    Mat QKV;
    std::vector<Mat> P;  // per-head attention weights
};

struct SelfAttention {
    Linear qkv, proj;
    int dim = 0, heads = 1;

    void init(const std::string& prefix, int D, int n_heads, Rng& rng) {
        require(D % n_heads == 0, "SelfAttention: dim must divide heads");
        dim = D;
        heads = n_heads;
        qkv.init(prefix + ".qkv", D, 3 * D, rng);
        proj.init(prefix + ".proj", D, D, rng);
    }

    void collect(ParamList& out) {
        qkv.collect(out);
        proj.collect(out);
    }

    static Mat softmax_rows(const Mat& S) {
        Mat P(S.rows(), S.cols());
        for (Eigen::Index i = 0; i < S.rows(); ++i) {
            const double mx = S.row(i).maxCoeff();
            Eigen::RowVectorXd e = (S.row(i).array() - mx).exp();
            P.row(i) = e / e.sum();
        }
        return P;
    }

    Mat forward(const Mat& X, AttentionCache* c) const {
        const Eigen::Index n = X.rows();
        const int dh = dim / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Mat QKV = qkv.forward(X, c ? &c->qkv_cache : nullptr);
        Mat O(n, dim);
        if (c) c->P.assign(heads, Mat());
        for (int h = 0; h < heads; ++h) {
            const auto Q = QKV.middleCols(h * dh, dh);
            const auto K = QKV.middleCols(dim + h * dh, dh);
            const auto V = QKV.middleCols(2 * dim + h * dh, dh);
            Mat P = softmax_rows(Q * K.transpose() * scale);
            O.middleCols(h * dh, dh) = P * V;
            if (c) c->P[h] = std::move(P);
        }
        if (c) c->QKV = std::move(QKV);
        return proj.forward(O, c ? &c->proj_cache : nullptr);
    }

    Mat backward(const Mat& dY, const AttentionCache& c) {
        const Eigen::Index n = dY.rows();
        const int dh = dim / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Mat dO = proj.backward(dY, c.proj_cache);
        Mat dQKV = Mat::Zero(n, 3 * dim);
        for (int h = 0; h < heads; ++h) {
            const auto Q = c.QKV.middleCols(h * dh, dh);
            const auto K = c.QKV.middleCols(dim + h * dh, dh);
            const auto V = c.QKV.middleCols(2 * dim + h * dh, dh);
            const Mat& P = c.P[h];
            const auto dOh = dO.middleCols(h * dh, dh);
            Mat dP = dOh * V.transpose();
            dQKV.middleCols(2 * dim + h * dh, dh) = P.transpose() * dOh;
            // softmax backward: dS = P .* (dP - rowsum(dP .* P))
            Mat dS(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double dot = dP.row(i).dot(P.row(i));
                dS.row(i) = P.row(i).cwiseProduct(dP.row(i).array() - dot);
            }
            dQKV.middleCols(h * dh, dh) = dS * K * scale;
            dQKV.middleCols(dim + h * dh, dh) = dS.transpose() * Q * scale;
        }
        return qkv.backward(dQKV, c.qkv_cache);
    }

    MatPair forward_jvp(const Mat& X, const Mat& dX, AttentionCache* c) const {
        const Eigen::Index n = X.rows();
        const int dh = dim / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        auto [QKV, dQKV] = qkv.forward_jvp(X, dX, c ? &c->qkv_cache : nullptr);
        Mat O(n, dim), dO(n, dim);
        if (c) c->P.assign(heads, Mat());
        for (int h = 0; h < heads; ++h) {
            const auto Q = QKV.middleCols(h * dh, dh);
            const auto K = QKV.middleCols(dim + h * dh, dh);
            const auto V = QKV.middleCols(2 * dim + h * dh, dh);
            const auto dQ = dQKV.middleCols(h * dh, dh);
            const auto dK = dQKV.middleCols(dim + h * dh, dh);
            const auto dV = dQKV.middleCols(2 * dim + h * dh, dh);
            Mat P = softmax_rows(Q * K.transpose() * scale);
            Mat dS = (dQ * K.transpose() + Q * dK.transpose()) * scale;
            Mat dP(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double dot = P.row(i).dot(dS.row(i));
                dP.row(i) = P.row(i).cwiseProduct(dS.row(i).array() - dot);
            }
            O.middleCols(h * dh, dh) = P * V;
            dO.middleCols(h * dh, dh) = dP * V + P * dV;
            if (c) c->P[h] = std::move(P);
        }
        if (c) c->QKV = std::move(QKV);
        return proj.forward_jvp(O, dO, c ? &c->proj_cache : nullptr);
    }
};

// ------------------------------------------------------------------- MLP

struct MlpCache {
    LinearCache fc1_cache, fc2_cache;
    GeluCache act_cache;
};

struct Mlp {
    Linear fc1, fc2;

    void init(const std::string& prefix, int D, int hidden, Rng& rng) {
        fc1.init(prefix + ".fc1", D, hidden, rng);
        fc2.init(prefix + ".fc2", hidden, D, rng);
    }

    void collect(ParamList& out) {
        fc1.collect(out);
        fc2.collect(out);
    }

    Mat forward(const Mat& X, MlpCache* c) const {
        Mat h = fc1.forward(X, c ? &c->fc1_cache : nullptr);
        h = Gelu::forward(h, c ? &c->act_cache : nullptr);
        return fc2.forward(h, c ? &c->fc2_cache : nullptr);
    }

    Mat backward(const Mat& dY, const MlpCache& c) {
        Mat dh = fc2.backward(dY, c.fc2_cache);
        dh = Gelu::backward(dh, c.act_cache);
        return fc1.backward(dh, c.fc1_cache);
    }

    MatPair forward_jvp(const Mat& X, const Mat& dX, MlpCache* c) const {
        auto [h, dh] = fc1.forward_jvp(X, dX, c ? &c->fc1_cache : nullptr);
        auto [a, da] = Gelu::forward_jvp(h, dh, c ? &c->act_cache : nullptr);
        return fc2.forward_jvp(a, da, c ? &c->fc2_cache : nullptr);
    }
};

// -------------------------------------------------- plain pre-LN block (ViT)

struct PlainBlockCache {
    LayerNormCache ln1_cache, ln2_cache;
    AttentionCache attn_cache;
    MlpCache mlp_cache;
};

struct PlainBlock {
    LayerNorm ln1, ln2;
    SelfAttention attn;
    Mlp mlp;

    void init(const std::string& prefix, int D, int heads, int mlp_hidden, Rng& rng) {
        ln1.init(prefix + ".ln1", D);
        attn.init(prefix + ".attn", D, heads, rng);
        ln2.init(prefix + ".ln2", D);
        mlp.init(prefix + ".mlp", D, mlp_hidden, rng);
    }

    void collect(ParamList& out) {
        ln1.collect(out);
        attn.collect(out);
        ln2.collect(out);
        mlp.collect(out);
    }

    Mat forward(const Mat& X, PlainBlockCache* c) const {
        Mat x1 = X + attn.forward(ln1.forward(X, c ? &c->ln1_cache : nullptr),
                                  c ? &c->attn_cache : nullptr);
        return x1 + mlp.forward(ln2.forward(x1, c ? &c->ln2_cache : nullptr),
                                c ? &c->mlp_cache : nullptr);
    }

    Mat backward(const Mat& dY, const PlainBlockCache& c) {
        Mat dx1 = dY + ln2.backward(mlp.backward(dY, c.mlp_cache), c.ln2_cache);
        return dx1 + ln1.backward(attn.backward(dx1, c.attn_cache), c.ln1_cache);
    }
};

}  // namespace lsspi::nn
