#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsspi/codec/latent.hpp"
#include "lsspi/nn/conv.hpp"
#include "lsspi/nn/train_util.hpp"

namespace lsspi {

struct CodecConfig {
    int resolution = 64;
    int base_ch = 32;
    int mid_ch = 64;
    double kl_weight = 1e-4;
    std::uint64_t init_seed = 1;
};

namespace detail {
inline nn::FeatureMap image_to_fm(const Mat& pixels) {
    nn::FeatureMap fm;
    fm.h = static_cast<int>(pixels.rows());
    fm.w = static_cast<int>(pixels.cols());
    fm.data.resize(1, static_cast<Eigen::Index>(fm.h) * fm.w);
    for (int y = 0; y < fm.h; ++y)
        for (int x = 0; x < fm.w; ++x)
            fm.data(0, static_cast<Eigen::Index>(y) * fm.w + x) = pixels(y, x);
    return fm;
}

inline Mat fm_to_image(const nn::FeatureMap& fm) {
    Mat pixels(fm.h, fm.w);
    for (int y = 0; y < fm.h; ++y)
        for (int x = 0; x < fm.w; ++x)
            pixels(y, x) = fm.data(0, static_cast<Eigen::Index>(y) * fm.w + x);
    return pixels;
}

inline Vec fm_to_latent_vec(const nn::FeatureMap& fm) {
    const int ch = fm.ch();
    Vec v(static_cast<Eigen::Index>(fm.h) * fm.w * ch);
    for (Eigen::Index p = 0; p < fm.data.cols(); ++p)
        for (int c = 0; c < ch; ++c) v[p * ch + c] = fm.data(c, p);
    return v;
}

inline nn::FeatureMap latent_vec_to_fm(const Vec& v, const LatentShape& s) {
    nn::FeatureMap fm;
    fm.h = s.h;
    fm.w = s.w;
    fm.data.resize(s.ch, static_cast<Eigen::Index>(s.h) * s.w);
    for (Eigen::Index p = 0; p < fm.data.cols(); ++p)
        for (int c = 0; c < s.ch; ++c) fm.data(c, p) = v[p * s.ch + c];
    return fm;
}
}  // namespace detail

/// Small convolutional VAE. The encoder outputs a diagonal Gaussian
/// (mean, log-variance) over the Table-style latent grid; the decoder maps a
/// latent back to a [0,1] image through a sigmoid.
struct VaeModel {
    CodecConfig cfg;
    LatentShape latent;

    nn::Conv2d e1, e2, e3;       // 1->base s2, base->mid s2, mid->2*ch s1
    nn::Conv2d d1, d2, d3, d4;   // ch->mid, mid->base (x2), base->base (x2), base->1
    double norm_scale = 1.0;     // scales raw latents to unit std downstream

    struct EncCache {
        nn::Conv2dCache c1, c2, c3;
        nn::SiluFmCache a1, a2;
    };
    struct DecCache {
        nn::Conv2dCache c1, c2, c3, c4;
        nn::SiluFmCache a1, a2, a3;
        nn::SigmoidFmCache out;
        nn::FeatureMap u2_in, u3_in;  // shapes only, for upsample backward
    };

    void init(const CodecConfig& config) {
        cfg = config;
        latent = latent_shape_for(cfg.resolution, cfg.resolution);
        Rng rng(cfg.init_seed);
        e1.init("enc.conv1", 1, cfg.base_ch, 3, 2, 1, rng);
        e2.init("enc.conv2", cfg.base_ch, cfg.mid_ch, 3, 2, 1, rng);
        e3.init("enc.conv3", cfg.mid_ch, 2 * latent.ch, 3, 1, 1, rng);
        d1.init("dec.conv1", latent.ch, cfg.mid_ch, 3, 1, 1, rng);
        d2.init("dec.conv2", cfg.mid_ch, cfg.base_ch, 3, 1, 1, rng);
        d3.init("dec.conv3", cfg.base_ch, cfg.base_ch, 3, 1, 1, rng);
        d4.init("dec.conv4", cfg.base_ch, 1, 3, 1, 1, rng);
    }

    nn::ParamList params() {
        nn::ParamList out;
        e1.collect(out);
        e2.collect(out);
        e3.collect(out);
        d1.collect(out);
        d2.collect(out);
        d3.collect(out);
        d4.collect(out);
        return out;
    }

    std::int64_t param_count() { return nn::param_count(params()); }

    // encoder: image -> (mu, logvar) in latent vector layout
    void encode_stats(const Mat& pixels, Vec& mu, Vec& logvar, EncCache* c = nullptr) const {
        require(pixels.rows() == cfg.resolution && pixels.cols() == cfg.resolution,
                "encode: unsupported resolution");
        EncCache local;
        EncCache* cc = c ? c : &local;
        nn::FeatureMap h = detail::image_to_fm(pixels);
        h = e1.forward(h, &cc->c1);
        h = nn::SiluFm::forward(h, &cc->a1);
        h = e2.forward(h, &cc->c2);
        h = nn::SiluFm::forward(h, &cc->a2);
        h = e3.forward(h, &cc->c3);
        // first ch channels are the mean, the rest log-variance (clamped)
        const Eigen::Index npix = h.data.cols();
        mu.resize(npix * latent.ch);
        logvar.resize(npix * latent.ch);
        for (Eigen::Index p = 0; p < npix; ++p)
            for (int cch = 0; cch < latent.ch; ++cch) {
                mu[p * latent.ch + cch] = h.data(cch, p);
                logvar[p * latent.ch + cch] =
                    std::clamp(h.data(latent.ch + cch, p), -8.0, 8.0);
            }
    }

    /// Posterior mean (deterministic) or reparameterized sample.
    LatentTensor encode(const ImageSample& image, bool deterministic = true,
                        Rng* rng = nullptr) const {
        Vec mu, logvar;
        encode_stats(image.pixels, mu, logvar);
        LatentTensor z = make_latent(latent, cfg.resolution, cfg.resolution);
        if (deterministic || rng == nullptr) {
            z.data = mu;
        } else {
            z.data.resize(mu.size());
            for (Eigen::Index i = 0; i < mu.size(); ++i)
                z.data[i] = mu[i] + std::exp(0.5 * logvar[i]) * rng->normal();
        }
        return z;
    }

    ImageSample decode(const LatentTensor& z, DecCache* c = nullptr) const {
        require(z.shape == latent, "decode: latent shape mismatch");
        DecCache local;
        DecCache* cc = c ? c : &local;
        nn::FeatureMap h = detail::latent_vec_to_fm(z.data, latent);
        h = d1.forward(h, &cc->c1);
        h = nn::SiluFm::forward(h, &cc->a1);
        cc->u2_in = h;
        h = nn::Upsample2::forward(h);
        h = d2.forward(h, &cc->c2);
        h = nn::SiluFm::forward(h, &cc->a2);
        cc->u3_in = h;
        h = nn::Upsample2::forward(h);
        h = d3.forward(h, &cc->c3);
        h = nn::SiluFm::forward(h, &cc->a3);
        h = d4.forward(h, &cc->c4);
        h = nn::SigmoidFm::forward(h, &cc->out);
        ImageSample img;
        img.pixels = detail::fm_to_image(h);
        img.id = "decoded";
        return img;
    }

    /// Latent in the normalized space consumed by flow models and the
    /// reconstructor (unit training-set standard deviation).
    Vec encode_normalized(const ImageSample& image) const {
        return encode(image, true).data * norm_scale;
    }

    ImageSample decode_normalized(const Vec& z_norm) const {
        LatentTensor z = make_latent(latent, cfg.resolution, cfg.resolution);
        z.data = z_norm / norm_scale;
        return decode(z);
    }
};

struct CodecTrainConfig {
    int epochs = 20;
    int batch = 16;
    double lr = 1e-3;
    std::uint64_t seed = 7;
    int threads = 2;
};

struct CodecEpochLog {
    int epoch = 0;
    double recon = 0.0;  // mean squared reconstruction error per pixel
    double kl = 0.0;     // mean KL per latent element (>= 0)
};

namespace detail {

struct VaeGradSample {
    const std::vector<ImageSample>* images;
    double kl_weight;
    std::uint64_t seed;
    int epoch;

    double operator()(VaeModel& m, int idx) const {
        const Mat& pixels = (*images)[idx].pixels;
        VaeModel::EncCache ec;
        Vec mu, logvar;
        m.encode_stats(pixels, mu, logvar, &ec);

        Rng rng(nn::mix_seed(seed, static_cast<std::uint64_t>(epoch) + 1,
                             static_cast<std::uint64_t>(idx) + 1));
        Vec eps(mu.size());
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
        Vec z = mu.array() + (0.5 * logvar.array()).exp() * eps.array();

        LatentTensor zt = make_latent(m.latent, m.cfg.resolution, m.cfg.resolution);
        zt.data = z;
        VaeModel::DecCache dc;
        ImageSample recon = m.decode(zt, &dc);

        const double npix = static_cast<double>(pixels.size());
        const double nz = static_cast<double>(z.size());
        const Mat diff = recon.pixels - pixels;
        const double recon_loss = diff.squaredNorm() / npix;
        const double kl_mean =
            (-0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()))
                .mean();

        // backward: reconstruction branch
        nn::FeatureMap dout;
        dout.h = static_cast<int>(pixels.rows());
        dout.w = static_cast<int>(pixels.cols());
        dout.data.resize(1, static_cast<Eigen::Index>(dout.h) * dout.w);
        for (int y = 0; y < dout.h; ++y)
            for (int x = 0; x < dout.w; ++x)
                dout.data(0, static_cast<Eigen::Index>(y) * dout.w + x) =
                    2.0 * diff(y, x) / npix;

        nn::FeatureMap dh = nn::SigmoidFm::backward(dout, dc.out);
        dh = m.d4.backward(dh, dc.c4);
        dh = nn::SiluFm::backward(dh, dc.a3);
        dh = m.d3.backward(dh, dc.c3);
        dh = nn::Upsample2::backward(dh);
        dh = nn::SiluFm::backward(dh, dc.a2);
        dh = m.d2.backward(dh, dc.c2);
        dh = nn::Upsample2::backward(dh);
        dh = nn::SiluFm::backward(dh, dc.a1);
        nn::FeatureMap dz_fm = m.d1.backward(dh, dc.c1);
        Vec dz = detail::fm_to_latent_vec(dz_fm);

        // through the reparameterization, plus KL gradients
        Vec dmu = dz;
        Vec dlogvar = 0.5 * dz.array() * (0.5 * logvar.array()).exp() * eps.array();
        dmu.array() += kl_weight * mu.array() / nz;
        dlogvar.array() += kl_weight * (-0.5) * (1.0 - logvar.array().exp()) / nz;

        // pack into the encoder output gradient (clamp saturation kills grads)
        nn::FeatureMap denc;
        denc.h = m.latent.h;
        denc.w = m.latent.w;
        denc.data = Mat::Zero(2 * m.latent.ch, static_cast<Eigen::Index>(m.latent.h) *
                                                   m.latent.w);
        for (Eigen::Index p = 0; p < denc.data.cols(); ++p)
            for (int c = 0; c < m.latent.ch; ++c) {
                denc.data(c, p) = dmu[p * m.latent.ch + c];
                const double lv = logvar[p * m.latent.ch + c];
                denc.data(m.latent.ch + c, p) =
                    (lv > -8.0 && lv < 8.0) ? dlogvar[p * m.latent.ch + c] : 0.0;
            }

        nn::FeatureMap de = m.e3.backward(denc, ec.c3);
        de = nn::SiluFm::backward(de, ec.a2);
        de = m.e2.backward(de, ec.c2);
        de = nn::SiluFm::backward(de, ec.a1);
        m.e1.backward(de, ec.c1);

        return recon_loss + kl_weight * kl_mean;
    }
};

}  // namespace detail

/// Train the codec with the standard reconstruction + KL objective.
/// kl_weight = 0 reduces to a plain autoencoder; the KL column is still
/// reported (it is excluded from the objective, not from the log).
inline std::vector<CodecEpochLog> train_codec(VaeModel& model,
                                              const std::vector<ImageSample>& images,
                                              const CodecTrainConfig& tcfg) {
    require(!images.empty(), "train_codec: empty dataset");
    for (const auto& im : images)
        require(im.pixels.rows() == model.cfg.resolution &&
                    im.pixels.cols() == model.cfg.resolution,
                "train_codec: mixed or unsupported resolutions");

    nn::Adam opt(model.params(), tcfg.lr);
    Rng shuffle_rng(nn::mix_seed(tcfg.seed, 0xA11CE));
    std::vector<CodecEpochLog> log;
    const int n = static_cast<int>(images.size());
    const int batch = std::max(1, tcfg.batch);

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const std::vector<int> order = nn::shuffled_indices(n, shuffle_rng);
        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += batch) {
            const int end = std::min(n, start + batch);
            std::vector<int> idx(order.begin() + start, order.begin() + end);
            nn::zero_grads(model.params());
            detail::VaeGradSample fn{&images, model.cfg.kl_weight, tcfg.seed, epoch};
            const double loss = nn::batched_grads(model, idx, tcfg.threads, fn);
            const double scale = 1.0 / static_cast<double>(idx.size());
            for (auto* p : model.params()) p->g *= scale;
            opt.step();
            epoch_loss += loss;
        }
        // epoch metrics on deterministic encodes of a fixed probe subset
        CodecEpochLog row;
        row.epoch = epoch;
        const int probe = std::min(n, 64);
        double recon = 0.0, kl = 0.0;
        for (int i = 0; i < probe; ++i) {
            Vec mu, logvar;
            model.encode_stats(images[i].pixels, mu, logvar);
            LatentTensor z = make_latent(model.latent, model.cfg.resolution,
                                         model.cfg.resolution);
            z.data = mu;
            ImageSample rec = model.decode(z);
            recon += (rec.pixels - images[i].pixels).squaredNorm() /
                     static_cast<double>(images[i].pixels.size());
            kl += (-0.5 *
                   (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()))
                      .mean();
        }
        row.recon = recon / probe;
        row.kl = kl / probe;
        log.push_back(row);
        (void)epoch_loss;
    }

    // normalization scalar: unit standard deviation of training latents
    double sq = 0.0;
    std::int64_t cnt = 0;
    double mean = 0.0;
    std::vector<Vec> lats;
    lats.reserve(images.size());
    for (const auto& im : images) lats.push_back(model.encode(im, true).data);
    for (const auto& l : lats) {
        mean += l.sum();
        cnt += l.size();
    }
    mean /= static_cast<double>(cnt);
    for (const auto& l : lats) sq += (l.array() - mean).square().sum();
    const double sd = std::sqrt(sq / static_cast<double>(cnt));
    model.norm_scale = sd > 1e-12 ? 1.0 / sd : 1.0;
    return log;
}

}  // namespace lsspi
