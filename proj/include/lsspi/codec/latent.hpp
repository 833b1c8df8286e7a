#pragma once

#include "lsspi/core/types.hpp"

namespace lsspi {

struct LatentShape {
    int h = 0, w = 0, ch = 0;

    Eigen::Index size() const { return static_cast<Eigen::Index>(h) * w * ch; }
    bool operator==(const LatentShape&) const = default;
};

/// Latent dimensions per supported pixel resolution:
///   64x64  -> 16x16x8,  128x128 -> 32x32x4.
inline LatentShape latent_shape_for(int H, int W) {
    require(H == W, "latent_shape_for: only square resolutions supported");
    if (H == 64) return {16, 16, 8};
    if (H == 128) return {32, 32, 4};
    throw InvalidArgument("latent_shape_for: unsupported resolution " + std::to_string(H));
}

/// Compressed image representation, channel-last row-major:
/// index(y,x,c) = (y*w + x)*ch + c.
struct LatentTensor {
    LatentShape shape;
    Vec data;
    int source_h = 0, source_w = 0;

    double& at(int y, int x, int c) {
        return data[(static_cast<Eigen::Index>(y) * shape.w + x) * shape.ch + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<Eigen::Index>(y) * shape.w + x) * shape.ch + c];
    }
};

inline LatentTensor make_latent(const LatentShape& s, int source_h = 0, int source_w = 0) {
    LatentTensor t;
    t.shape = s;
    t.data = Vec::Zero(s.size());
    t.source_h = source_h;
    t.source_w = source_w;
    return t;
}

/// (H*W*1) / (h*w*ch)
inline double compression_ratio(const LatentShape& latent, int H, int W) {
    require(latent.size() > 0 && H > 0 && W > 0, "compression_ratio: invalid shapes");
    return (static_cast<double>(H) * W) / static_cast<double>(latent.size());
}

// -------------------------------------------------------------- patchify
// Tokens index patches row-major; token features pack the patch pixels
// row-major with channels fastest: f = (ky*p + kx)*ch + c.

inline int token_count(const LatentShape& s, int p) {
    require(s.h % p == 0 && s.w % p == 0, "patchify: patch must divide the grid");
    return (s.h / p) * (s.w / p);
}

inline Mat patchify(const Vec& latent, const LatentShape& s, int p) {
    const int gh = s.h / p, gw = s.w / p;
    Mat tokens(static_cast<Eigen::Index>(gh) * gw, static_cast<Eigen::Index>(s.ch) * p * p);
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            const Eigen::Index tok = static_cast<Eigen::Index>(py) * gw + px;
            for (int ky = 0; ky < p; ++ky)
                for (int kx = 0; kx < p; ++kx)
                    for (int c = 0; c < s.ch; ++c)
                        tokens(tok, (static_cast<Eigen::Index>(ky) * p + kx) * s.ch + c) =
                            latent[(static_cast<Eigen::Index>(py * p + ky) * s.w +
                                    (px * p + kx)) *
                                       s.ch +
                                   c];
        }
    return tokens;
}

inline Vec unpatchify(const Mat& tokens, const LatentShape& s, int p) {
    const int gh = s.h / p, gw = s.w / p;
    Vec latent(s.size());
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            const Eigen::Index tok = static_cast<Eigen::Index>(py) * gw + px;
            for (int ky = 0; ky < p; ++ky)
                for (int kx = 0; kx < p; ++kx)
                    for (int c = 0; c < s.ch; ++c)
                        latent[(static_cast<Eigen::Index>(py * p + ky) * s.w + (px * p + kx)) *
                                   s.ch +
                               c] =
                            tokens(tok, (static_cast<Eigen::Index>(ky) * p + kx) * s.ch + c);
        }
    return latent;
}

}  // namespace lsspi
