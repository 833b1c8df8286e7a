#pragma once

#include <cmath>
#include <iostream>

#include "lsspi/spi/measure.hpp"
#include "lsspi/spi/patterns.hpp"

namespace lsspi {

struct DgiResult {
    ImageSample image;       // min-max normalized to [0,1]
    bool flat_field = false; // pre-normalization range below 1e-9
    bool fallback = false;   // plain correlation used (degenerate reference arm)
};

/// Differential ghost imaging:
///   O(x,y) = <B*S(x,y)> - (<B>/<R>) * <R*S(x,y)>,  R_i = sum_xy S_i(x,y).
/// Falls back to plain correlation <B*S> - <B><S> when the reference arm is
/// degenerate (zero-variance R or <R> = 0).
inline DgiResult dgi_reconstruct(const PatternSet& patterns, const BucketSignal& signal) {
    require(patterns.M() >= 2, "dgi_reconstruct: need at least two patterns");
    require(signal.M() == patterns.M(), "dgi_reconstruct: signal length mismatch");

    const int M = patterns.M();
    const auto H = patterns.H(), W = patterns.W();
    const double invM = 1.0 / static_cast<double>(M);

    Vec R(M);
    for (int i = 0; i < M; ++i) {
        double s = 0.0;
        for (Eigen::Index y = 0; y < H; ++y)
            for (Eigen::Index x = 0; x < W; ++x) s += patterns.patterns[i](y, x);
        R[i] = s;
    }
    double mean_B = 0.0, mean_R = 0.0;
    for (int i = 0; i < M; ++i) {
        mean_B += signal.values[i];
        mean_R += R[i];
    }
    mean_B *= invM;
    mean_R *= invM;
    double var_R = 0.0;
    for (int i = 0; i < M; ++i) var_R += (R[i] - mean_R) * (R[i] - mean_R);

    DgiResult res;
    res.fallback = (var_R == 0.0) || (mean_R == 0.0);
    if (res.fallback)
        std::cerr << "warning: dgi_reconstruct degenerate reference arm, "
                     "using plain correlation\n";

    Mat O = Mat::Zero(H, W);
    for (Eigen::Index y = 0; y < H; ++y) {
        for (Eigen::Index x = 0; x < W; ++x) {
            double bs = 0.0, rs = 0.0, ms = 0.0;
            for (int i = 0; i < M; ++i) {
                const double s = patterns.patterns[i](y, x);
                bs += signal.values[i] * s;
                rs += R[i] * s;
                ms += s;
            }
            bs *= invM;
            rs *= invM;
            ms *= invM;
            O(y, x) = res.fallback ? bs - mean_B * ms : bs - (mean_B / mean_R) * rs;
        }
    }

    const double lo = O.minCoeff(), hi = O.maxCoeff();
    if (hi - lo < 1e-9) {
        res.flat_field = true;
        res.image.pixels = Mat::Zero(H, W);
    } else {
        res.image.pixels = (O.array() - lo) / (hi - lo);
    }
    res.image.id = "dgi";
    return res;
}

}  // namespace lsspi
