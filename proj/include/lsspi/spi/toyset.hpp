#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "lsspi/core/rng.hpp"
#include "lsspi/core/types.hpp"

namespace lsspi {

// Procedural grayscale object set: soft-edged ellipses, rings, bars and
// blobs on a dark background. Stands in for a digits/fashion-style corpus
// so the full pipeline runs without external downloads.

namespace detail {

inline double soft_step(double d, double edge) {
    // 1 inside (d<=0), 0 outside, smooth ramp of width `edge`
    if (d <= 0.0) return 1.0;
    if (d >= edge) return 0.0;
    const double u = d / edge;
    return 1.0 - u * u * (3.0 - 2.0 * u);
}

}  // namespace detail

/// Render the index-th toy image of a seeded corpus. Deterministic in
/// (seed, index, H, W); every pixel lies in [0,1].
inline Mat toy_image(std::uint64_t seed, std::uint64_t index, int H, int W) {
    Rng rng(seed * 0x9e3779b97f4a7c15ull + index + 1);
    Mat img = Mat::Zero(H, W);
    const double S = std::min(H, W);
    const int n_shapes = 1 + static_cast<int>(rng.below(3));
    for (int s = 0; s < n_shapes; ++s) {
        const int type = static_cast<int>(rng.below(4));
        const double cx = rng.uniform(0.25, 0.75) * W;
        const double cy = rng.uniform(0.25, 0.75) * H;
        const double amp = rng.uniform(0.5, 1.0);
        const double edge = 1.5;
        if (type == 0 || type == 1) {
            // filled ellipse / ring
            const double rx = rng.uniform(0.10, 0.32) * S;
            const double ry = rng.uniform(0.10, 0.32) * S;
            const double th = rng.uniform(0.0, M_PI);
            const double thick = type == 1 ? rng.uniform(0.05, 0.12) * S : 0.0;
            const double ct = std::cos(th), st = std::sin(th);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double x = (j - cx) * ct + (i - cy) * st;
                    const double y = -(j - cx) * st + (i - cy) * ct;
                    const double r = std::sqrt((x / rx) * (x / rx) + (y / ry) * (y / ry));
                    double v;
                    if (type == 0) {
                        v = detail::soft_step((r - 1.0) * std::min(rx, ry), edge);
                    } else {
                        const double band = std::abs(r - 1.0) * std::min(rx, ry) - thick * 0.5;
                        v = detail::soft_step(band, edge);
                    }
                    img(i, j) = std::max(img(i, j), amp * v);
                }
        } else if (type == 2) {
            // rotated bar
            const double len = rng.uniform(0.25, 0.70) * S;
            const double wid = rng.uniform(0.06, 0.18) * S;
            const double th = rng.uniform(0.0, M_PI);
            const double ct = std::cos(th), st = std::sin(th);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double x = (j - cx) * ct + (i - cy) * st;
                    const double y = -(j - cx) * st + (i - cy) * ct;
                    const double d = std::max(std::abs(x) - len * 0.5, std::abs(y) - wid * 0.5);
                    img(i, j) = std::max(img(i, j), amp * detail::soft_step(d, edge));
                }
        } else {
            // gaussian blob
            const double sig = rng.uniform(0.06, 0.18) * S;
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double dx = j - cx, dy = i - cy;
                    const double v = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sig * sig));
                    img(i, j) = std::max(img(i, j), v);
                }
        }
    }
    return img;
}

inline std::vector<ImageSample> toy_dataset(std::uint64_t seed, int count, int H, int W,
                                            std::uint64_t first_index = 0) {
    require(count > 0, "toy_dataset: count must be positive");
    std::vector<ImageSample> out;
    out.reserve(count);
    for (int k = 0; k < count; ++k) {
        char id[32];
        std::snprintf(id, sizeof(id), "toy_%06llu.png",
                      static_cast<unsigned long long>(first_index + k));
        out.push_back(ImageSample{toy_image(seed, first_index + k, H, W), id});
    }
    return out;
}

}  // namespace lsspi
