#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lsspi/core/rng.hpp"
#include "lsspi/spi/measure.hpp"
#include "lsspi/spi/patterns.hpp"

namespace lsspi {

enum class SparsifyTransform { identity, dct2d };

inline std::string to_string(SparsifyTransform t) {
    return t == SparsifyTransform::identity ? "identity" : "dct2d";
}

/// Orthonormal DCT-II matrix of size n.
inline Mat dct_matrix(int n) {
    Mat C(n, n);
    const double s0 = std::sqrt(1.0 / n), sk = std::sqrt(2.0 / n);
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            C(k, i) = (k == 0 ? s0 : sk) * std::cos(M_PI * (2.0 * i + 1.0) * k / (2.0 * n));
    return C;
}

/// min_x 1/2 ||Ax - b||^2 + lambda ||Wx||_1 over flattened row-major images.
struct SensingProblem {
    Mat A;              // M x N, rows are row-major flattened patterns
    Vec b;              // length M
    double lambda = 0.0;
    SparsifyTransform transform = SparsifyTransform::identity;
    int H = 0, W = 0;   // image shape; required for dct2d
};

/// Flatten patterns row-major into the sensing matrix.
inline SensingProblem build_problem(const PatternSet& patterns, const BucketSignal& signal,
                                    double lambda, SparsifyTransform transform) {
    require(signal.M() == patterns.M(), "build_problem: signal length mismatch");
    require(lambda >= 0.0, "build_problem: lambda must be nonnegative");
    SensingProblem p;
    p.H = static_cast<int>(patterns.H());
    p.W = static_cast<int>(patterns.W());
    p.A.resize(patterns.M(), static_cast<Eigen::Index>(p.H) * p.W);
    for (int i = 0; i < patterns.M(); ++i)
        p.A.row(i) = flatten_rowmajor(patterns.patterns[i]).transpose();
    p.b = signal.values;
    p.lambda = lambda;
    p.transform = transform;
    return p;
}

struct FistaOptions {
    int max_iters = 500;
    double tol = 1e-9;           // relative objective change stop
    int continuation_stages = 0; // extra warm-start stages above lambda
    double continuation_factor = 0.5;
    double lambda0_factor = 0.01; // lambda0 = factor * ||A^T b||_inf when staging
};

struct FistaResult {
    Vec x;
    std::vector<double> objective;  // F(x_k) per iteration
    int iterations = 0;
    double lipschitz = 0.0;
};

namespace detail {

inline double power_iteration_lipschitz(const Mat& A, int iters = 64) {
    Rng rng(7);
    Vec v(A.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    v.normalize();
    double lam = 0.0;
    for (int k = 0; k < iters; ++k) {
        Vec w = A.transpose() * (A * v);
        lam = w.norm();
        if (lam == 0.0) break;
        v = w / lam;
    }
    return lam;
}

struct TransformOp {
    const SensingProblem* p;
    Mat Ch, Cw;  // cached DCT factors for dct2d

    explicit TransformOp(const SensingProblem& prob) : p(&prob) {
        if (prob.transform == SparsifyTransform::dct2d) {
            require(prob.H > 0 && prob.W > 0, "fista: dct2d requires image shape");
            require(static_cast<Eigen::Index>(prob.H) * prob.W == prob.A.cols(),
                    "fista: dct2d shape does not match problem size");
            Ch = dct_matrix(prob.H);
            Cw = dct_matrix(prob.W);
        }
    }

    Vec fwd(const Vec& x) const {
        if (p->transform == SparsifyTransform::identity) return x;
        Mat X = unflatten_rowmajor(x, p->H, p->W);
        return flatten_rowmajor(Ch * X * Cw.transpose());
    }

    Vec inv(const Vec& c) const {
        if (p->transform == SparsifyTransform::identity) return c;
        Mat C = unflatten_rowmajor(c, p->H, p->W);
        return flatten_rowmajor(Ch.transpose() * C * Cw);
    }
};

inline Vec soft_threshold(const Vec& v, double thr) {
    Vec out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double a = v[i];
        out[i] = a > thr ? a - thr : (a < -thr ? a + thr : 0.0);
    }
    return out;
}

}  // namespace detail

/// Monotone FISTA (accepts a prox step only when it lowers the objective),
/// with optional geometric lambda continuation for sparse recovery.
inline FistaResult fista_solve(const SensingProblem& problem, const FistaOptions& opts) {
    require(problem.A.size() > 0 && problem.b.size() == problem.A.rows(),
            "fista_solve: inconsistent problem");
    if (problem.A.cwiseAbs().maxCoeff() == 0.0)
        throw InvalidArgument("fista_solve: zero sensing matrix");

    const detail::TransformOp W(problem);
    const double L = std::max(detail::power_iteration_lipschitz(problem.A) * 1.02, 1e-12);

    auto objective = [&](const Vec& x, double lambda) {
        return 0.5 * (problem.A * x - problem.b).squaredNorm() +
               lambda * W.fwd(x).cwiseAbs().sum();
    };

    std::vector<double> lambdas;
    if (opts.continuation_stages > 0) {
        const double linf = (problem.A.transpose() * problem.b).cwiseAbs().maxCoeff();
        double lam = opts.lambda0_factor * linf;
        for (int s = 0; s < opts.continuation_stages && lam > problem.lambda; ++s) {
            lambdas.push_back(lam);
            lam *= opts.continuation_factor;
        }
    }
    lambdas.push_back(problem.lambda);

    FistaResult res;
    res.lipschitz = L;
    Vec x = Vec::Zero(problem.A.cols());
    for (double lambda : lambdas) {
        Vec y = x;
        Vec x_old = x;
        double t = 1.0;
        double Fx = objective(x, lambda);
        for (int k = 0; k < opts.max_iters; ++k) {
            const Vec grad = problem.A.transpose() * (problem.A * y - problem.b);
            const Vec z = W.inv(detail::soft_threshold(W.fwd(y - grad / L), lambda / L));
            if (!z.allFinite()) throw NumericError("fista_solve: non-finite iterate");
            const double Fz = objective(z, lambda);
            x_old = x;
            if (Fz <= Fx) {
                x = z;
            }  // else keep x (monotone step)
            const double Fnew = std::min(Fz, Fx);
            const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            y = x + (t / t_new) * (z - x) + ((t - 1.0) / t_new) * (x - x_old);
            t = t_new;
            res.objective.push_back(Fnew);
            ++res.iterations;
            if (k > 0 && std::abs(Fx - Fnew) <= opts.tol * std::max(1.0, std::abs(Fx))) {
                Fx = Fnew;
                break;
            }
            Fx = Fnew;
        }
    }
    res.x = x;
    return res;
}

inline FistaResult fista_solve(const SensingProblem& problem, int max_iters, double tol) {
    FistaOptions opts;
    opts.max_iters = max_iters;
    opts.tol = tol;
    return fista_solve(problem, opts);
}

/// Reshape a solver solution into an image clamped to [0,1].
inline ImageSample fista_image(const FistaResult& res, int H, int W) {
    ImageSample img;
    img.pixels = unflatten_rowmajor(res.x, H, W).cwiseMax(0.0).cwiseMin(1.0);
    img.id = "fista";
    return img;
}

}  // namespace lsspi
