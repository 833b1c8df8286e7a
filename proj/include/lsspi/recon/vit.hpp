#pragma once

#include <cstdint>
#include <vector>

#include "lsspi/codec/vae.hpp"
#include "lsspi/nn/layers.hpp"
#include "lsspi/nn/train_util.hpp"
#include "lsspi/spi/measure.hpp"

namespace lsspi {

struct VitConfig {
    int signal_len = 0;       // M
    LatentShape latent;       // output shape
    int patch = 2;
    int dim = 128;
    int depth = 4;
    int heads = 8;
    int lift_hidden = 512;
    int mlp_mult = 4;
    std::uint64_t init_seed = 11;
};

/// Deterministic bucket-signal -> latent reconstructor: an MLP lift into the
/// latent grid followed by transformer blocks over 2x2 patches. The
/// transformer head is zero-initialized and added to the lifted latent, so
/// the model starts as a linear regression and learns a refinement.
struct VitReconstructor {
    VitConfig cfg;
    // persisted signal standardization (per training dataset)
    double sig_mean = 0.0;
    double sig_std = 1.0;

    nn::Linear lift1, lift2;
    nn::Linear patch_embed;
    nn::Param pos;
    std::vector<nn::PlainBlock> blocks;
    nn::LayerNorm ln_f;
    nn::Linear head;

    struct Cache {
        nn::LinearCache lift1_c, lift2_c, patch_c, head_c;
        nn::SiluCache act_c;
        std::vector<nn::PlainBlockCache> block_c;
        nn::LayerNormCache lnf_c;
    };

    void init(const VitConfig& config) {
        cfg = config;
        require(cfg.signal_len > 0, "VitReconstructor: signal length required");
        Rng rng(cfg.init_seed);
        const int token_dim = cfg.latent.ch * cfg.patch * cfg.patch;
        const int n_tokens = token_count(cfg.latent, cfg.patch);
        lift1.init("lift.fc1", cfg.signal_len, cfg.lift_hidden, rng);
        lift2.init("lift.fc2", cfg.lift_hidden, static_cast<int>(cfg.latent.size()), rng);
        patch_embed.init("patch_embed", token_dim, cfg.dim, rng);
        pos.init("pos", n_tokens, cfg.dim);
        rng.fill_normal(pos.v, 0.02);
        blocks.resize(cfg.depth);
        for (int i = 0; i < cfg.depth; ++i)
            blocks[i].init("blocks." + std::to_string(i), cfg.dim, cfg.heads,
                           cfg.mlp_mult * cfg.dim, rng);
        ln_f.init("ln_f", cfg.dim);
        head.init("head", cfg.dim, token_dim, rng, /*zero=*/true);
    }

    nn::ParamList params() {
        nn::ParamList out;
        lift1.collect(out);
        lift2.collect(out);
        patch_embed.collect(out);
        out.push_back(&pos);
        for (auto& b : blocks) b.collect(out);
        ln_f.collect(out);
        head.collect(out);
        return out;
    }

    std::int64_t param_count() { return nn::param_count(params()); }

    Vec standardize(const Vec& signal) const {
        return (signal.array() - sig_mean) / sig_std;
    }

    /// x_c = ViT(c): normalized-latent prediction for one bucket signal.
    Vec forward(const Vec& signal, Cache* c = nullptr) const {
        require(signal.size() == cfg.signal_len, "reconstruct_latent: signal length mismatch");
        Cache local;
        Cache* cc = c ? c : &local;
        const Mat s = standardize(signal).transpose();  // [1 x M]
        Mat h = lift1.forward(s, &cc->lift1_c);
        h = nn::Silu::forward(h, &cc->act_c);
        Mat lifted = lift2.forward(h, &cc->lift2_c);  // [1 x h*w*ch]
        const Vec lifted_v = lifted.row(0).transpose();

        Mat tok = patchify(lifted_v, cfg.latent, cfg.patch);
        Mat x = patch_embed.forward(tok, &cc->patch_c) + pos.v;
        cc->block_c.resize(blocks.size());
        for (std::size_t i = 0; i < blocks.size(); ++i)
            x = blocks[i].forward(x, &cc->block_c[i]);
        x = ln_f.forward(x, &cc->lnf_c);
        Mat delta = head.forward(x, &cc->head_c);
        return lifted_v + unpatchify(delta, cfg.latent, cfg.patch);
    }

    /// Accumulates parameter gradients for d(loss)/d(output) = dout.
    void backward(const Vec& dout, Cache& c) {
        Mat ddelta = patchify(dout, cfg.latent, cfg.patch);
        Mat dx = head.backward(ddelta, c.head_c);
        dx = ln_f.backward(dx, c.lnf_c);
        for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i)
            dx = blocks[i].backward(dx, c.block_c[i]);
        pos.g += dx;
        Mat dtok = patch_embed.backward(dx, c.patch_c);
        Vec dlift = dout + unpatchify(dtok, cfg.latent, cfg.patch);
        Mat dl = lift2.backward(dlift.transpose(), c.lift2_c);
        dl = nn::Silu::backward(dl, c.act_c);
        lift1.backward(dl, c.lift1_c);
    }
};

/// reconstruct_latent(signal, params) -> LatentTensor in normalized space.
inline LatentTensor reconstruct_latent(const BucketSignal& signal,
                                       const VitReconstructor& vit) {
    LatentTensor z = make_latent(vit.cfg.latent);
    z.data = vit.forward(signal.values);
    if (!z.data.allFinite()) throw NumericError("reconstruct_latent: non-finite output");
    return z;
}

/// Full signal -> image path: ViT latent prediction decoded by the codec.
inline ImageSample reconstruct_image(const BucketSignal& signal, const VitReconstructor& vit,
                                     const VaeModel& codec) {
    require(vit.cfg.latent == codec.latent, "reconstruct_image: latent shape mismatch");
    const LatentTensor z = reconstruct_latent(signal, vit);
    ImageSample img = codec.decode_normalized(z.data);
    img.id = "vit";
    return img;
}

struct VitTrainConfig {
    int epochs = 20;
    int batch = 32;
    double lr = 3e-4;
    std::uint64_t seed = 13;
    int threads = 2;
};

struct VitEpochLog {
    int epoch = 0;
    double mse = 0.0;  // mean squared latent error per element
};

namespace detail {

struct VitGradSample {
    const std::vector<Vec>* signals;
    const std::vector<Vec>* latents;  // normalized-space targets

    double operator()(VitReconstructor& m, int idx) const {
        VitReconstructor::Cache cache;
        const Vec out = m.forward((*signals)[idx], &cache);
        const Vec diff = out - (*latents)[idx];
        const double nz = static_cast<double>(diff.size());
        m.backward(2.0 * diff / nz, cache);
        return diff.squaredNorm() / nz;
    }
};

}  // namespace detail

/// Train on (bucket signal, normalized latent) pairs with an MSE objective.
/// Signal standardization statistics are computed here and persisted in the
/// model.
inline std::vector<VitEpochLog> train_reconstructor(VitReconstructor& model,
                                                    const std::vector<Vec>& signals,
                                                    const std::vector<Vec>& latents,
                                                    const VitTrainConfig& tcfg) {
    require(!signals.empty() && signals.size() == latents.size(),
            "train_reconstructor: empty or inconsistent pair set");
    for (const auto& s : signals)
        require(s.size() == model.cfg.signal_len, "train_reconstructor: signal length mismatch");
    for (const auto& l : latents)
        require(l.size() == model.cfg.latent.size(),
                "train_reconstructor: latent shape mismatch");

    // per-dataset standardization
    double mean = 0.0;
    std::int64_t cnt = 0;
    for (const auto& s : signals) {
        mean += s.sum();
        cnt += s.size();
    }
    mean /= static_cast<double>(cnt);
    double sq = 0.0;
    for (const auto& s : signals) sq += (s.array() - mean).square().sum();
    const double sd = std::sqrt(sq / static_cast<double>(cnt));
    model.sig_mean = mean;
    model.sig_std = sd > 1e-12 ? sd : 1.0;

    nn::Adam opt(model.params(), tcfg.lr);
    Rng shuffle_rng(nn::mix_seed(tcfg.seed, 0x517A));
    const int n = static_cast<int>(signals.size());
    const int batch = std::max(1, tcfg.batch);
    std::vector<VitEpochLog> log;

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const std::vector<int> order = nn::shuffled_indices(n, shuffle_rng);
        double total = 0.0;
        for (int start = 0; start < n; start += batch) {
            const int end = std::min(n, start + batch);
            std::vector<int> idx(order.begin() + start, order.begin() + end);
            nn::zero_grads(model.params());
            detail::VitGradSample fn{&signals, &latents};
            total += nn::batched_grads(model, idx, tcfg.threads, fn);
            const double scale = 1.0 / static_cast<double>(idx.size());
            for (auto* p : model.params()) p->g *= scale;
            opt.step();
        }
        log.push_back({epoch, total / n});
    }
    return log;
}

}  // namespace lsspi
