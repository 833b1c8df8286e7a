#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsspi/codec/latent.hpp"
#include "lsspi/nn/layers.hpp"

// DiT-style velocity field u(x_t, r, t | c) over latent tokens, with adaLN
// modulation driven by the summed embedding Embed(t) + Embed(t-r) + Embed(c).
// Every path has matching forward, backward and forward-mode (JVP) rules;
// the JVP treats parameters and the condition as constants and propagates
// tangents of (x_t, r, t) only.

namespace lsspi {

struct VelocityConfig {
    LatentShape latent;
    int patch = 2;
    int dim = 192;
    int depth = 6;
    int heads = 8;
    int mlp_mult = 4;
    int time_feat = 64;  // sinusoidal feature width, even
    int cond_len = 0;    // bucket-signal length M; 0 disables the c pathway
    std::uint64_t init_seed = 17;

    int token_dim() const { return latent.ch * patch * patch; }
    int tokens() const { return token_count(latent, patch); }
};

namespace flow_detail {

/// [cos(t*w_i), sin(t*w_i)] with geometric frequencies, DiT-style.
inline Eigen::RowVectorXd sin_features(double t, int width) {
    const int half = width / 2;
    Eigen::RowVectorXd f(width);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        f[i] = std::cos(t * freq);
        f[half + i] = std::sin(t * freq);
    }
    return f;
}

inline Eigen::RowVectorXd sin_features_dt(double t, int width) {
    const int half = width / 2;
    Eigen::RowVectorXd f(width);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        f[i] = -std::sin(t * freq) * freq;
        f[half + i] = std::cos(t * freq) * freq;
    }
    return f;
}

}  // namespace flow_detail

// ------------------------------------------------------------- DiT block

struct DiTBlockCache {
    nn::SiluCache mod_act;
    nn::LinearCache mod_fc;
    Eigen::RowVectorXd mod;  // [1 x 6D]
    nn::LayerNormCache ln1, ln2;
    nn::AttentionCache attn;
    nn::MlpCache mlp;
    Mat h1, a, h2, mm;  // post-LN activations and branch outputs
};

struct DiTBlock {
    nn::LayerNorm ln1, ln2;  // no affine; adaLN provides scale/shift
    nn::SelfAttention attn;
    nn::Mlp mlp;
    nn::Linear mod;  // D -> 6D, zero-init (identity block at start)
    int dim = 0;

    void init(const std::string& prefix, int D, int heads, int mlp_hidden, Rng& rng) {
        dim = D;
        ln1.init(prefix + ".ln1", D, /*with_affine=*/false);
        ln2.init(prefix + ".ln2", D, /*with_affine=*/false);
        attn.init(prefix + ".attn", D, heads, rng);
        mlp.init(prefix + ".mlp", D, mlp_hidden, rng);
        mod.init(prefix + ".mod", D, 6 * D, rng, /*zero=*/true);
    }

    void collect(nn::ParamList& out) {
        attn.collect(out);
        mlp.collect(out);
        mod.collect(out);
    }

    Mat forward(const Mat& x, const Mat& emb, DiTBlockCache* c) const {
        DiTBlockCache local;
        DiTBlockCache* cc = c ? c : &local;
        Mat e_act = nn::Silu::forward(emb, &cc->mod_act);
        cc->mod = mod.forward(e_act, &cc->mod_fc).row(0);
        const int D = dim;
        const auto g = [&](int k) { return cc->mod.segment(k * D, D); };
        // chunks: gamma1 beta1 gate1 gamma2 beta2 gate2
        Mat h1 = ln1.forward(x, &cc->ln1);
        cc->h1 = h1;
        Mat h1m = nn::rowwise_add(
            nn::rowwise_mul(h1, (g(0).array() + 1.0).matrix()), g(1));
        cc->a = attn.forward(h1m, &cc->attn);
        Mat x2 = x + nn::rowwise_mul(cc->a, g(2));
        Mat h2 = ln2.forward(x2, &cc->ln2);
        cc->h2 = h2;
        Mat h2m = nn::rowwise_add(
            nn::rowwise_mul(h2, (g(3).array() + 1.0).matrix()), g(4));
        cc->mm = mlp.forward(h2m, &cc->mlp);
        return x2 + nn::rowwise_mul(cc->mm, g(5));
    }

    /// Returns dx; accumulates the embedding gradient into demb.
    Mat backward(const Mat& dY, const DiTBlockCache& c, Mat& demb) {
        const int D = dim;
        const auto g = [&](int k) { return c.mod.segment(k * D, D); };
        Eigen::RowVectorXd dmod(6 * D);

        Mat dmm = nn::rowwise_mul(dY, g(5));
        dmod.segment(5 * D, D) = dY.cwiseProduct(c.mm).colwise().sum();
        Mat dx2 = dY;
        Mat dh2m = mlp.backward(dmm, c.mlp);
        dmod.segment(3 * D, D) = dh2m.cwiseProduct(c.h2).colwise().sum();
        dmod.segment(4 * D, D) = dh2m.colwise().sum();
        Mat dh2 = nn::rowwise_mul(dh2m, (g(3).array() + 1.0).matrix());
        dx2 += ln2.backward(dh2, c.ln2);

        Mat da = nn::rowwise_mul(dx2, g(2));
        dmod.segment(2 * D, D) = dx2.cwiseProduct(c.a).colwise().sum();
        Mat dh1m = attn.backward(da, c.attn);
        dmod.segment(0, D) = dh1m.cwiseProduct(c.h1).colwise().sum();
        dmod.segment(D, D) = dh1m.colwise().sum();
        Mat dh1 = nn::rowwise_mul(dh1m, (g(0).array() + 1.0).matrix());
        Mat dx = dx2 + ln1.backward(dh1, c.ln1);

        Mat de = mod.backward(dmod, c.mod_fc);
        demb += nn::Silu::backward(de, c.mod_act);
        return dx;
    }

    nn::MatPair forward_jvp(const Mat& x, const Mat& dx, const Mat& emb, const Mat& demb,
                            DiTBlockCache* c) const {
        DiTBlockCache local;
        DiTBlockCache* cc = c ? c : &local;
        auto [e_act, de_act] = nn::Silu::forward_jvp(emb, demb, &cc->mod_act);
        auto [mod_row, dmod_row] = mod.forward_jvp(e_act, de_act, &cc->mod_fc);
        cc->mod = mod_row.row(0);
        const Eigen::RowVectorXd dmod = dmod_row.row(0);
        const int D = dim;
        const auto g = [&](int k) { return cc->mod.segment(k * D, D); };
        const auto dg = [&](int k) { return dmod.segment(k * D, D); };

        auto [h1, dh1] = ln1.forward_jvp(x, dx, &cc->ln1);
        cc->h1 = h1;
        Mat h1m = nn::rowwise_add(nn::rowwise_mul(h1, (g(0).array() + 1.0).matrix()), g(1));
        Mat dh1m = nn::rowwise_mul(dh1, (g(0).array() + 1.0).matrix()) +
                   nn::rowwise_mul(h1, dg(0));
        dh1m = nn::rowwise_add(dh1m, dg(1));
        auto [a, da] = attn.forward_jvp(h1m, dh1m, &cc->attn);
        cc->a = a;
        Mat x2 = x + nn::rowwise_mul(a, g(2));
        Mat dx2 = dx + nn::rowwise_mul(da, g(2)) + nn::rowwise_mul(a, dg(2));

        auto [h2, dh2] = ln2.forward_jvp(x2, dx2, &cc->ln2);
        cc->h2 = h2;
        Mat h2m = nn::rowwise_add(nn::rowwise_mul(h2, (g(3).array() + 1.0).matrix()), g(4));
        Mat dh2m = nn::rowwise_mul(dh2, (g(3).array() + 1.0).matrix()) +
                   nn::rowwise_mul(h2, dg(3));
        dh2m = nn::rowwise_add(dh2m, dg(4));
        auto [mm, dmm] = mlp.forward_jvp(h2m, dh2m, &cc->mlp);
        cc->mm = mm;
        Mat y = x2 + nn::rowwise_mul(mm, g(5));
        Mat dy = dx2 + nn::rowwise_mul(dmm, g(5)) + nn::rowwise_mul(mm, dg(5));
        return {y, dy};
    }
};

// --------------------------------------------------------- velocity model

struct VelocityCache {
    nn::LinearCache patch_c, head_c;
    // embedding path
    nn::LinearCache t1_c, t2_c, dt1_c, dt2_c, c1_c, c2_c;
    nn::SiluCache t_act, dt_act, c_act;
    bool used_c = false;
    std::vector<DiTBlockCache> blocks;
    // final adaLN
    nn::SiluCache f_act;
    nn::LinearCache f_mod_c;
    Eigen::RowVectorXd f_mod;
    nn::LayerNormCache lnf_c;
    Mat hf;
};

struct VelocityModel {
    VelocityConfig cfg;
    nn::Linear patch_embed;
    nn::Param pos;
    nn::Linear t_fc1, t_fc2;    // Embed(t)
    nn::Linear dt_fc1, dt_fc2;  // Embed(t - r)
    nn::Linear c_fc1, c_fc2;    // Embed(c)
    nn::Param null_c;           // learned embedding used when c is absent
    std::vector<DiTBlock> blocks;
    nn::LayerNorm ln_f;
    nn::Linear f_mod;  // D -> 2D zero-init: final shift/scale
    nn::Linear head;   // D -> token_dim, zero-init

    void init(const VelocityConfig& config) {
        cfg = config;
        require(cfg.time_feat % 2 == 0, "VelocityModel: time_feat must be even");
        Rng rng(cfg.init_seed);
        patch_embed.init("patch_embed", cfg.token_dim(), cfg.dim, rng);
        pos.init("pos", cfg.tokens(), cfg.dim);
        rng.fill_normal(pos.v, 0.02);
        t_fc1.init("t_embed.fc1", cfg.time_feat, cfg.dim, rng);
        t_fc2.init("t_embed.fc2", cfg.dim, cfg.dim, rng);
        dt_fc1.init("dt_embed.fc1", cfg.time_feat, cfg.dim, rng);
        dt_fc2.init("dt_embed.fc2", cfg.dim, cfg.dim, rng);
        const int clen = cfg.cond_len > 0 ? cfg.cond_len : 1;
        c_fc1.init("c_embed.fc1", clen, cfg.dim, rng);
        c_fc2.init("c_embed.fc2", cfg.dim, cfg.dim, rng);
        null_c.init("null_c", cfg.dim, 1);
        rng.fill_normal(null_c.v, 0.02);
        blocks.resize(cfg.depth);
        for (int i = 0; i < cfg.depth; ++i)
            blocks[i].init("blocks." + std::to_string(i), cfg.dim, cfg.heads,
                           cfg.mlp_mult * cfg.dim, rng);
        ln_f.init("ln_f", cfg.dim, /*with_affine=*/false);
        f_mod.init("final.mod", cfg.dim, 2 * cfg.dim, rng, /*zero=*/true);
        head.init("final.head", cfg.dim, cfg.token_dim(), rng, /*zero=*/true);
    }

    nn::ParamList params() {
        nn::ParamList out;
        patch_embed.collect(out);
        out.push_back(&pos);
        t_fc1.collect(out);
        t_fc2.collect(out);
        dt_fc1.collect(out);
        dt_fc2.collect(out);
        c_fc1.collect(out);
        c_fc2.collect(out);
        out.push_back(&null_c);
        for (auto& b : blocks) b.collect(out);
        f_mod.collect(out);
        head.collect(out);
        return out;
    }

    std::int64_t param_count() { return nn::param_count(params()); }

    Mat embed(double t, double r, const Vec* c, VelocityCache* cc) const {
        Mat tf = flow_detail::sin_features(t, cfg.time_feat);
        Mat te = t_fc2.forward(
            nn::Silu::forward(t_fc1.forward(tf, cc ? &cc->t1_c : nullptr),
                              cc ? &cc->t_act : nullptr),
            cc ? &cc->t2_c : nullptr);
        Mat df = flow_detail::sin_features(t - r, cfg.time_feat);
        Mat de = dt_fc2.forward(
            nn::Silu::forward(dt_fc1.forward(df, cc ? &cc->dt1_c : nullptr),
                              cc ? &cc->dt_act : nullptr),
            cc ? &cc->dt2_c : nullptr);
        Mat ce;
        if (c != nullptr) {
            require(cfg.cond_len > 0 && c->size() == cfg.cond_len,
                    "VelocityModel: condition length mismatch");
            Mat crow = c->transpose();
            ce = c_fc2.forward(
                nn::Silu::forward(c_fc1.forward(crow, cc ? &cc->c1_c : nullptr),
                                  cc ? &cc->c_act : nullptr),
                cc ? &cc->c2_c : nullptr);
        } else {
            ce = null_c.v.transpose();
        }
        if (cc) cc->used_c = (c != nullptr);
        return te + de + ce;
    }

    void embed_backward(const Mat& demb, VelocityCache& cc) {
        Mat dt_e = t_fc2.backward(demb, cc.t2_c);
        t_fc1.backward(nn::Silu::backward(dt_e, cc.t_act), cc.t1_c);
        Mat dd_e = dt_fc2.backward(demb, cc.dt2_c);
        dt_fc1.backward(nn::Silu::backward(dd_e, cc.dt_act), cc.dt1_c);
        if (cc.used_c) {
            Mat dc_e = c_fc2.backward(demb, cc.c2_c);
            c_fc1.backward(nn::Silu::backward(dc_e, cc.c_act), cc.c1_c);
        } else {
            null_c.g += demb.row(0).transpose();
        }
    }

    nn::MatPair embed_jvp(double t, double r, double dt, double dr, const Vec* c,
                          VelocityCache* cc) const {
        Mat tf = flow_detail::sin_features(t, cfg.time_feat);
        Mat dtf = flow_detail::sin_features_dt(t, cfg.time_feat) * dt;
        auto [t_h, dt_h] = t_fc1.forward_jvp(tf, dtf, cc ? &cc->t1_c : nullptr);
        auto [t_a, dt_a] = nn::Silu::forward_jvp(t_h, dt_h, cc ? &cc->t_act : nullptr);
        auto [te, dte] = t_fc2.forward_jvp(t_a, dt_a, cc ? &cc->t2_c : nullptr);

        Mat df = flow_detail::sin_features(t - r, cfg.time_feat);
        Mat ddf = flow_detail::sin_features_dt(t - r, cfg.time_feat) * (dt - dr);
        auto [d_h, dd_h] = dt_fc1.forward_jvp(df, ddf, cc ? &cc->dt1_c : nullptr);
        auto [d_a, dd_a] = nn::Silu::forward_jvp(d_h, dd_h, cc ? &cc->dt_act : nullptr);
        auto [de, dde] = dt_fc2.forward_jvp(d_a, dd_a, cc ? &cc->dt2_c : nullptr);

        Mat ce, dce;
        if (c != nullptr) {
            require(cfg.cond_len > 0 && c->size() == cfg.cond_len,
                    "VelocityModel: condition length mismatch");
            Mat crow = c->transpose();
            Mat dzero = Mat::Zero(1, crow.cols());
            auto [c_h, dc_h] = c_fc1.forward_jvp(crow, dzero, cc ? &cc->c1_c : nullptr);
            auto [c_a, dc_a] = nn::Silu::forward_jvp(c_h, dc_h, cc ? &cc->c_act : nullptr);
            auto [c_e, dc_e] = c_fc2.forward_jvp(c_a, dc_a, cc ? &cc->c2_c : nullptr);
            ce = c_e;
            dce = dc_e;
        } else {
            ce = null_c.v.transpose();
            dce = Mat::Zero(1, cfg.dim);
        }
        if (cc) cc->used_c = (c != nullptr);
        return {te + de + ce, dte + dde + dce};
    }

    /// u(x_t, r, t | c). `c` must already be standardized.
    Vec forward(const Vec& x_latent, double r, double t, const Vec* c,
                VelocityCache* cc) const {
        require(x_latent.size() == cfg.latent.size(), "VelocityModel: latent size mismatch");
        Mat emb = embed(t, r, c, cc);
        Mat tok = patchify(x_latent, cfg.latent, cfg.patch);
        Mat x = patch_embed.forward(tok, cc ? &cc->patch_c : nullptr);
        x += pos.v;
        if (cc) cc->blocks.resize(blocks.size());
        for (std::size_t i = 0; i < blocks.size(); ++i)
            x = blocks[i].forward(x, emb, cc ? &cc->blocks[i] : nullptr);

        Mat e_act = nn::Silu::forward(emb, cc ? &cc->f_act : nullptr);
        Mat fm = f_mod.forward(e_act, cc ? &cc->f_mod_c : nullptr);
        const Eigen::RowVectorXd gamma = fm.row(0).segment(0, cfg.dim);
        const Eigen::RowVectorXd beta = fm.row(0).segment(cfg.dim, cfg.dim);
        Mat hf = ln_f.forward(x, cc ? &cc->lnf_c : nullptr);
        if (cc) {
            cc->hf = hf;
            cc->f_mod = fm.row(0);
        }
        Mat hm = nn::rowwise_add(nn::rowwise_mul(hf, (gamma.array() + 1.0).matrix()), beta);
        Mat out_tok = head.forward(hm, cc ? &cc->head_c : nullptr);
        return unpatchify(out_tok, cfg.latent, cfg.patch);
    }

    /// Accumulates parameter gradients; returns d(loss)/d(x_latent).
    Vec backward(const Vec& du, VelocityCache& cc) {
        Mat dout_tok = patchify(du, cfg.latent, cfg.patch);
        Mat dhm = head.backward(dout_tok, cc.head_c);
        const Eigen::RowVectorXd gamma = cc.f_mod.segment(0, cfg.dim);
        Eigen::RowVectorXd dgamma = dhm.cwiseProduct(cc.hf).colwise().sum();
        Eigen::RowVectorXd dbeta = dhm.colwise().sum();
        Mat dhf = nn::rowwise_mul(dhm, (gamma.array() + 1.0).matrix());
        Mat dx = ln_f.backward(dhf, cc.lnf_c);
        Eigen::RowVectorXd dfm(2 * cfg.dim);
        dfm.segment(0, cfg.dim) = dgamma;
        dfm.segment(cfg.dim, cfg.dim) = dbeta;
        Mat demb = nn::Silu::backward(f_mod.backward(dfm, cc.f_mod_c), cc.f_act);

        for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i)
            dx = blocks[i].backward(dx, cc.blocks[i], demb);
        pos.g += dx;
        Mat dtok = patch_embed.backward(dx, cc.patch_c);
        embed_backward(demb, cc);
        return unpatchify(dtok, cfg.latent, cfg.patch);
    }

    /// Forward with tangent propagation along (dx, dr, dt); fills the cache
    /// for a subsequent backward on the primal path.
    std::pair<Vec, Vec> forward_jvp(const Vec& x_latent, const Vec& dx_latent, double r,
                                    double t, double dr, double dt, const Vec* c,
                                    VelocityCache* cc) const {
        require(x_latent.size() == cfg.latent.size(), "VelocityModel: latent size mismatch");
        auto [emb, demb] = embed_jvp(t, r, dt, dr, c, cc);
        Mat tok = patchify(x_latent, cfg.latent, cfg.patch);
        Mat dtok = patchify(dx_latent, cfg.latent, cfg.patch);
        auto [x0, dx0] = patch_embed.forward_jvp(tok, dtok, cc ? &cc->patch_c : nullptr);
        Mat x = x0 + pos.v;
        Mat dx = dx0;
        if (cc) cc->blocks.resize(blocks.size());
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            auto [y, dy] =
                blocks[i].forward_jvp(x, dx, emb, demb, cc ? &cc->blocks[i] : nullptr);
            x = std::move(y);
            dx = std::move(dy);
        }
        auto [e_act, de_act] = nn::Silu::forward_jvp(emb, demb, cc ? &cc->f_act : nullptr);
        auto [fm, dfm] = f_mod.forward_jvp(e_act, de_act, cc ? &cc->f_mod_c : nullptr);
        const Eigen::RowVectorXd gamma = fm.row(0).segment(0, cfg.dim);
        const Eigen::RowVectorXd beta = fm.row(0).segment(cfg.dim, cfg.dim);
        const Eigen::RowVectorXd dgamma = dfm.row(0).segment(0, cfg.dim);
        const Eigen::RowVectorXd dbeta = dfm.row(0).segment(cfg.dim, cfg.dim);
        auto [hf, dhf] = ln_f.forward_jvp(x, dx, cc ? &cc->lnf_c : nullptr);
        if (cc) {
            cc->hf = hf;
            cc->f_mod = fm.row(0);
        }
        Mat hm = nn::rowwise_add(nn::rowwise_mul(hf, (gamma.array() + 1.0).matrix()), beta);
        Mat dhm = nn::rowwise_mul(dhf, (gamma.array() + 1.0).matrix()) +
                  nn::rowwise_mul(hf, dgamma);
        dhm = nn::rowwise_add(dhm, dbeta);
        auto [out_tok, dout_tok] = head.forward_jvp(hm, dhm, cc ? &cc->head_c : nullptr);
        return {unpatchify(out_tok, cfg.latent, cfg.patch),
                unpatchify(dout_tok, cfg.latent, cfg.patch)};
    }
};

}  // namespace lsspi
