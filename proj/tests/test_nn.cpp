#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "lsspi/flow/velocity.hpp"
#include "lsspi/nn/conv.hpp"
#include "lsspi/nn/layers.hpp"
#include "lsspi/nn/train_util.hpp"

using namespace lsspi;
using namespace lsspi::nn;

namespace {

constexpr double kFdStep = 1e-6;
constexpr double kTol = 1e-5;  // absolute-vs-scaled mixed tolerance below

void expect_close(double got, double want, const std::string& what) {
    const double scale = std::max({1.0, std::abs(got), std::abs(want)});
    EXPECT_NEAR(got, want, kTol * scale) << what;
}

/// Central-difference check of d(loss)/d(param entries) for a sampled subset.
template <class LossFn>
void check_param_grads(ParamList params, LossFn loss, Rng& rng, int probes_per_tensor = 4) {
    for (auto* p : params) {
        for (int probe = 0; probe < probes_per_tensor; ++probe) {
            const Eigen::Index i = static_cast<Eigen::Index>(
                rng.below(static_cast<std::uint64_t>(p->v.size())));
            double* entry = p->v.data() + i;
            const double orig = *entry;
            *entry = orig + kFdStep;
            const double lp = loss();
            *entry = orig - kFdStep;
            const double lm = loss();
            *entry = orig;
            const double fd = (lp - lm) / (2.0 * kFdStep);
            expect_close(p->g(i), fd, p->name + "[" + std::to_string(i) + "]");
        }
    }
}

Mat random_mat(Rng& rng, int r, int c, double s = 1.0) {
    Mat m(r, c);
    rng.fill_normal(m, s);
    return m;
}

}  // namespace

TEST(Layers, LinearGradients) {
    Rng rng(1);
    Linear lin;
    lin.init("lin", 5, 3, rng);
    const Mat X = random_mat(rng, 4, 5);
    const Mat R = random_mat(rng, 4, 3);
    auto loss = [&]() {
        return lin.forward(X, nullptr).cwiseProduct(R).sum();
    };
    LinearCache c;
    Mat Y = lin.forward(X, &c);
    zero_grads({&lin.W, &lin.b});
    const Mat dX = lin.backward(R, c);
    check_param_grads({&lin.W, &lin.b}, loss, rng);
    // input gradient
    Mat Xm = X;
    for (int probe = 0; probe < 5; ++probe) {
        const Eigen::Index i = static_cast<Eigen::Index>(rng.below(X.size()));
        Linear l2 = lin;
        double* e = Xm.data() + i;
        const double orig = *e;
        *e = orig + kFdStep;
        const double lp = l2.forward(Xm, nullptr).cwiseProduct(R).sum();
        *e = orig - kFdStep;
        const double lm = l2.forward(Xm, nullptr).cwiseProduct(R).sum();
        *e = orig;
        expect_close(dX(i), (lp - lm) / (2 * kFdStep), "dX");
    }
}

TEST(Layers, LayerNormGradients) {
    Rng rng(2);
    LayerNorm ln;
    ln.init("ln", 6);
    const Mat X = random_mat(rng, 3, 6);
    const Mat R = random_mat(rng, 3, 6);
    LayerNormCache c;
    ln.forward(X, &c);
    zero_grads({&ln.gamma, &ln.beta});
    const Mat dX = ln.backward(R, c);
    auto loss = [&]() { return ln.forward(X, nullptr).cwiseProduct(R).sum(); };
    check_param_grads({&ln.gamma, &ln.beta}, loss, rng);
    Mat Xm = X;
    for (int probe = 0; probe < 6; ++probe) {
        const Eigen::Index i = static_cast<Eigen::Index>(rng.below(X.size()));
        double* e = Xm.data() + i;
        const double orig = *e;
        *e = orig + kFdStep;
        const double lp = ln.forward(Xm, nullptr).cwiseProduct(R).sum();
        *e = orig - kFdStep;
        const double lm = ln.forward(Xm, nullptr).cwiseProduct(R).sum();
        *e = orig;
        expect_close(dX(i), (lp - lm) / (2 * kFdStep), "dX");
    }
}

TEST(Layers, AttentionGradients) {
    Rng rng(3);
    SelfAttention attn;
    attn.init("attn", 8, 2, rng);
    const Mat X = random_mat(rng, 5, 8);
    const Mat R = random_mat(rng, 5, 8);
    AttentionCache c;
    attn.forward(X, &c);
    ParamList ps;
    attn.collect(ps);
    zero_grads(ps);
    const Mat dX = attn.backward(R, c);
    auto loss = [&]() { return attn.forward(X, nullptr).cwiseProduct(R).sum(); };
    check_param_grads(ps, loss, rng);
    Mat Xm = X;
    for (int probe = 0; probe < 8; ++probe) {
        const Eigen::Index i = static_cast<Eigen::Index>(rng.below(X.size()));
        double* e = Xm.data() + i;
        const double orig = *e;
        *e = orig + kFdStep;
        const double lp = attn.forward(Xm, nullptr).cwiseProduct(R).sum();
        *e = orig - kFdStep;
        const double lm = attn.forward(Xm, nullptr).cwiseProduct(R).sum();
        *e = orig;
        expect_close(dX(i), (lp - lm) / (2 * kFdStep), "dX");
    }
}

TEST(Layers, PlainBlockGradients) {
    Rng rng(4);
    PlainBlock blk;
    blk.init("blk", 8, 2, 16, rng);
    const Mat X = random_mat(rng, 4, 8);
    const Mat R = random_mat(rng, 4, 8);
    PlainBlockCache c;
    blk.forward(X, &c);
    ParamList ps;
    blk.collect(ps);
    zero_grads(ps);
    blk.backward(R, c);
    auto loss = [&]() { return blk.forward(X, nullptr).cwiseProduct(R).sum(); };
    check_param_grads(ps, loss, rng, 3);
}

TEST(Layers, DiTBlockGradients) {
    Rng rng(5);
    DiTBlock blk;
    blk.init("dit", 8, 2, 16, rng);
    // give the zero-init modulation nonzero values so its gradients are generic
    rng.fill_normal(blk.mod.W.v, 0.05);
    rng.fill_normal(blk.mod.b.v, 0.05);
    const Mat X = random_mat(rng, 4, 8);
    const Mat E = random_mat(rng, 1, 8);
    const Mat R = random_mat(rng, 4, 8);
    DiTBlockCache c;
    blk.forward(X, E, &c);
    ParamList ps;
    blk.collect(ps);
    zero_grads(ps);
    Mat demb = Mat::Zero(1, 8);
    const Mat dX = blk.backward(R, c, demb);
    auto loss = [&]() { return blk.forward(X, E, nullptr).cwiseProduct(R).sum(); };
    check_param_grads(ps, loss, rng, 3);
    // embedding gradient
    Mat Em = E;
    for (int probe = 0; probe < 6; ++probe) {
        const Eigen::Index i = static_cast<Eigen::Index>(rng.below(E.size()));
        double* e = Em.data() + i;
        const double orig = *e;
        *e = orig + kFdStep;
        const double lp = blk.forward(X, Em, nullptr).cwiseProduct(R).sum();
        *e = orig - kFdStep;
        const double lm = blk.forward(X, Em, nullptr).cwiseProduct(R).sum();
        *e = orig;
        expect_close(demb(i), (lp - lm) / (2 * kFdStep), "demb");
    }
    // input gradient
    Mat Xm = X;
    for (int probe = 0; probe < 6; ++probe) {
        const Eigen::Index i = static_cast<Eigen::Index>(rng.below(X.size()));
        double* e = Xm.data() + i;
        const double orig = *e;
        *e = orig + kFdStep;
        const double lp = blk.forward(Xm, E, nullptr).cwiseProduct(R).sum();
        *e = orig - kFdStep;
        const double lm = blk.forward(Xm, E, nullptr).cwiseProduct(R).sum();
        *e = orig;
        expect_close(dX(i), (lp - lm) / (2 * kFdStep), "dX");
    }
}

TEST(Layers, Conv2dGradients) {
    Rng rng(6);
    Conv2d conv;
    conv.init("conv", 2, 3, 3, 2, 1, rng);
    FeatureMap x;
    x.h = 6;
    x.w = 6;
    x.data = random_mat(rng, 2, 36);
    const int oh = conv.out_dim(6), ow = conv.out_dim(6);
    Mat R = random_mat(rng, 3, oh * ow);
    Conv2dCache c;
    conv.forward(x, &c);
    zero_grads({&conv.W, &conv.b});
    FeatureMap dR;
    dR.h = oh;
    dR.w = ow;
    dR.data = R;
    const FeatureMap dX = conv.backward(dR, c);
    auto loss = [&]() { return conv.forward(x, nullptr).data.cwiseProduct(R).sum(); };
    check_param_grads({&conv.W, &conv.b}, loss, rng, 6);
    for (int probe = 0; probe < 8; ++probe) {
        const Eigen::Index i = static_cast<Eigen::Index>(rng.below(x.data.size()));
        double* e = x.data.data() + i;
        const double orig = *e;
        *e = orig + kFdStep;
        const double lp = conv.forward(x, nullptr).data.cwiseProduct(R).sum();
        *e = orig - kFdStep;
        const double lm = conv.forward(x, nullptr).data.cwiseProduct(R).sum();
        *e = orig;
        expect_close(dX.data(i), (lp - lm) / (2 * kFdStep), "dX");
    }
}

// ------------------------------------------------------- velocity model

namespace {
VelocityModel small_velocity_model(int cond_len = 6, std::uint64_t seed = 17) {
    VelocityConfig cfg;
    cfg.latent = {4, 4, 4};
    cfg.patch = 2;
    cfg.dim = 16;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.mlp_mult = 2;
    cfg.time_feat = 8;
    cfg.cond_len = cond_len;
    cfg.init_seed = seed;
    VelocityModel m;
    m.init(cfg);
    // perturb zero-initialized heads so gradients and JVPs are generic
    Rng rng(seed + 1);
    for (auto& b : m.blocks) {
        rng.fill_normal(b.mod.W.v, 0.05);
        rng.fill_normal(b.mod.b.v, 0.05);
    }
    rng.fill_normal(m.f_mod.W.v, 0.05);
    rng.fill_normal(m.head.W.v, 0.05);
    rng.fill_normal(m.head.b.v, 0.05);
    return m;
}
}  // namespace

TEST(VelocityModel, ParameterGradients) {
    Rng rng(7);
    VelocityModel m = small_velocity_model();
    const Eigen::Index n = m.cfg.latent.size();
    Vec x(n);
    rng.fill_normal(x);
    Vec c(m.cfg.cond_len);
    rng.fill_normal(c);
    Vec R(n);
    rng.fill_normal(R);
    const double t = 0.63, r = 0.21;

    VelocityCache cache;
    m.forward(x, r, t, &c, &cache);
    zero_grads(m.params());
    m.backward(R, cache);
    auto loss = [&]() { return m.forward(x, r, t, &c, nullptr).dot(R); };
    check_param_grads(m.params(), loss, rng, 2);
}

TEST(VelocityModel, NullConditionGradients) {
    Rng rng(8);
    VelocityModel m = small_velocity_model();
    const Eigen::Index n = m.cfg.latent.size();
    Vec x(n);
    rng.fill_normal(x);
    Vec R(n);
    rng.fill_normal(R);
    VelocityCache cache;
    m.forward(x, 0.4, 0.4, nullptr, &cache);
    zero_grads(m.params());
    m.backward(R, cache);
    auto loss = [&]() { return m.forward(x, 0.4, 0.4, nullptr, nullptr).dot(R); };
    check_param_grads(m.params(), loss, rng, 2);
    // null embedding receives gradient; condition encoder does not
    EXPECT_GT(m.null_c.g.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(m.c_fc1.W.g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(VelocityModel, JvpMatchesDirectionalDifference) {
    Rng rng(9);
    VelocityModel m = small_velocity_model();
    const Eigen::Index n = m.cfg.latent.size();
    Vec c(m.cfg.cond_len);
    rng.fill_normal(c);
    for (int probe = 0; probe < 5; ++probe) {
        Vec x(n), dx(n);
        rng.fill_normal(x);
        rng.fill_normal(dx);
        const double t = rng.uniform(0.15, 0.95);
        const double r = rng.uniform(0.0, t);
        const double dt = rng.normal(), dr = rng.normal();
        auto [u, du] = m.forward_jvp(x, dx, r, t, dr, dt, &c, nullptr);
        const Vec u_ref = m.forward(x, r, t, &c, nullptr);
        EXPECT_LT((u - u_ref).cwiseAbs().maxCoeff(), 1e-12);
        const double h = 1e-5;
        const Vec up = m.forward(x + h * dx, r + h * dr, t + h * dt, &c, nullptr);
        const Vec um = m.forward(x - h * dx, r - h * dr, t - h * dt, &c, nullptr);
        const Vec fd = (up - um) / (2 * h);
        const double rel = (du - fd).norm() / std::max(1e-12, fd.norm());
        EXPECT_LT(rel, 1e-5) << "probe " << probe;
    }
}

TEST(VelocityModel, DeterministicForward) {
    Rng rng(10);
    VelocityModel m = small_velocity_model();
    Vec x(m.cfg.latent.size());
    rng.fill_normal(x);
    Vec c(m.cfg.cond_len);
    rng.fill_normal(c);
    const Vec a = m.forward(x, 0.2, 0.8, &c, nullptr);
    const Vec b = m.forward(x, 0.2, 0.8, &c, nullptr);
    EXPECT_TRUE((a.array() == b.array()).all());
}

TEST(VelocityModel, SaveLoadRoundTrip) {
    VelocityModel m = small_velocity_model();
    const std::string path = "/tmp/lsspi_vmodel_test.bin";
    save_params(m.params(), path);
    VelocityModel m2;
    m2.init(m.cfg);
    load_params(m2.params(), path);
    EXPECT_EQ(params_sha256(m.params()), params_sha256(m2.params()));
    std::remove(path.c_str());
}

TEST(Adam, MinimizesQuadratic) {
    Param p;
    p.init("p", 4, 1);
    p.v << 3.0, -2.0, 1.5, 0.5;
    Adam opt({&p}, 0.1);
    for (int k = 0; k < 500; ++k) {
        p.g = 2.0 * p.v;  // d/dx ||x||^2
        opt.step();
    }
    EXPECT_LT(p.v.cwiseAbs().maxCoeff(), 1e-3);
}

TEST(TrainUtil, BatchedGradsThreadedMatchesSequential) {
    Rng rng(11);
    struct TinyModel {
        Linear lin;
        ParamList params() {
            ParamList out;
            lin.collect(out);
            return out;
        }
    };
    TinyModel m;
    m.lin.init("lin", 6, 3, rng);
    std::vector<Mat> xs, rs;
    for (int i = 0; i < 16; ++i) {
        xs.push_back(random_mat(rng, 2, 6));
        rs.push_back(random_mat(rng, 2, 3));
    }
    auto fn = [&](TinyModel& model, int i) {
        LinearCache c;
        model.lin.forward(xs[i], &c);
        model.lin.backward(rs[i], c);
        return 0.5;
    };
    std::vector<int> idx(16);
    for (int i = 0; i < 16; ++i) idx[i] = i;

    TinyModel seq = m;
    zero_grads(seq.params());
    const double l1 = batched_grads(seq, idx, 1, fn);
    TinyModel par = m;
    zero_grads(par.params());
    const double l2 = batched_grads(par, idx, 2, fn);
    EXPECT_DOUBLE_EQ(l1, l2);
    EXPECT_LT((seq.lin.W.g - par.lin.W.g).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((seq.lin.b.g - par.lin.b.g).cwiseAbs().maxCoeff(), 1e-12);
}
