#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsspi/flow/flow.hpp"

// Second-stage conditioning: a frozen stage-1 velocity model plus a
// trainable copy of its first blocks. The copy stream starts from
// fusion(x_t, x_c) = sigma * MLP[x_t, mu * x_c] and feeds each frozen block
// through a zero-initialized projection, so the injected model reproduces
// the frozen base exactly at initialization.

namespace lsspi {

struct InjectionConfig {
    int copy_depth = 0;  // 0 = half of the base depth
    std::uint64_t init_seed = 29;
};

struct InjectionCache {
    VelocityCache vc;  // base stream + embedding + final layer
    nn::LinearCache fus1_c, fus2_c;
    nn::SiluCache fus_act;
    Mat tok_c;   // patchified x_c (for the mu gradient)
    Mat f_out;   // fusion MLP output before sigma (for the sigma gradient)
    std::vector<DiTBlockCache> copy_blocks;
    std::vector<nn::LinearCache> proj_c;
};

struct InjectionModel {
    VelocityModel base;  // held fixed during stage-2 training
    int copy_depth = 0;
    nn::Linear fus1, fus2;
    nn::Param sigma, mu;  // learnable scalars, init 1 and 1e-4
    nn::Param pos_copy;
    std::vector<DiTBlock> copy_blocks;
    std::vector<nn::Linear> zero_proj;
    std::string stage1_hash;  // content hash of the frozen base at init

    void init(const VelocityModel& stage1, const InjectionConfig& icfg) {
        base = stage1;
        copy_depth = icfg.copy_depth > 0 ? icfg.copy_depth
                                         : std::max(1, base.cfg.depth / 2);
        require(copy_depth <= base.cfg.depth, "InjectionModel: copy depth exceeds base");
        Rng rng(icfg.init_seed);
        const int td = base.cfg.token_dim();
        fus1.init("fusion.fc1", 2 * td, base.cfg.dim, rng);
        fus2.init("fusion.fc2", base.cfg.dim, base.cfg.dim, rng);
        sigma.init("sigma", 1, 1);
        sigma.v(0, 0) = 1.0;
        mu.init("mu", 1, 1);
        mu.v(0, 0) = 1e-4;
        pos_copy.init("pos_copy", base.cfg.tokens(), base.cfg.dim);
        pos_copy.v = base.pos.v;
        copy_blocks.resize(copy_depth);
        zero_proj.resize(copy_depth);
        for (int k = 0; k < copy_depth; ++k) {
            copy_blocks[k].init("copy." + std::to_string(k), base.cfg.dim, base.cfg.heads,
                                base.cfg.mlp_mult * base.cfg.dim, rng);
            // trainable copy starts from the frozen base weights
            nn::ParamList dst, src;
            copy_blocks[k].collect(dst);
            base.blocks[k].collect(src);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->v = src[i]->v;
            zero_proj[k].init("inj." + std::to_string(k), base.cfg.dim, base.cfg.dim, rng,
                              /*zero=*/true);
        }
        stage1_hash = nn::params_sha256(base.params());
    }

    nn::ParamList trainable_params() {
        nn::ParamList out;
        fus1.collect(out);
        fus2.collect(out);
        out.push_back(&sigma);
        out.push_back(&mu);
        out.push_back(&pos_copy);
        for (auto& b : copy_blocks) b.collect(out);
        for (auto& z : zero_proj) z.collect(out);
        return out;
    }

    nn::ParamList params() {
        nn::ParamList out = base.params();
        nn::ParamList t = trainable_params();
        out.insert(out.end(), t.begin(), t.end());
        return out;
    }

    std::string base_hash() { return nn::params_sha256(base.params()); }

    /// fusion(x_t, x_c) = sigma * MLP[x_t, mu * x_c], token-wise over 2x2
    /// patches of the concatenated latents.
    Mat fuse(const Mat& tok_t, const Mat& tok_c, InjectionCache* cc) const {
        Mat in(tok_t.rows(), tok_t.cols() + tok_c.cols());
        in << tok_t, mu.v(0, 0) * tok_c;
        Mat h = fus1.forward(in, cc ? &cc->fus1_c : nullptr);
        h = nn::Silu::forward(h, cc ? &cc->fus_act : nullptr);
        Mat f = fus2.forward(h, cc ? &cc->fus2_c : nullptr);
        if (cc) {
            cc->tok_c = tok_c;
            cc->f_out = f;
        }
        return sigma.v(0, 0) * f;
    }

    /// u(x_t, r, t | c, x_c): frozen base forward plus trainable-copy
    /// residuals through the zero-initialized projections.
    Vec forward(const Vec& x_t, double r, double t, const Vec* c, const Vec& x_c,
                InjectionCache* cc) const {
        const auto& cfg = base.cfg;
        require(x_t.size() == cfg.latent.size() && x_c.size() == cfg.latent.size(),
                "forward_injected: latent shape mismatch");
        Mat emb = base.embed(t, r, c, cc ? &cc->vc : nullptr);

        Mat tok_t = patchify(x_t, cfg.latent, cfg.patch);
        Mat tok_c = patchify(x_c, cfg.latent, cfg.patch);
        Mat xc = fuse(tok_t, tok_c, cc) + pos_copy.v;
        if (cc) {
            cc->copy_blocks.resize(copy_depth);
            cc->proj_c.resize(copy_depth);
        }
        std::vector<Mat> inj(copy_depth);
        for (int k = 0; k < copy_depth; ++k) {
            xc = copy_blocks[k].forward(xc, emb, cc ? &cc->copy_blocks[k] : nullptr);
            inj[k] = zero_proj[k].forward(xc, cc ? &cc->proj_c[k] : nullptr);
        }

        Mat xb = base.patch_embed.forward(tok_t, cc ? &cc->vc.patch_c : nullptr);
        xb += base.pos.v;
        if (cc) cc->vc.blocks.resize(base.blocks.size());
        for (std::size_t k = 0; k < base.blocks.size(); ++k) {
            if (static_cast<int>(k) < copy_depth) xb += inj[k];
            xb = base.blocks[k].forward(xb, emb, cc ? &cc->vc.blocks[k] : nullptr);
        }

        Mat e_act = nn::Silu::forward(emb, cc ? &cc->vc.f_act : nullptr);
        Mat fm = base.f_mod.forward(e_act, cc ? &cc->vc.f_mod_c : nullptr);
        const Eigen::RowVectorXd gamma = fm.row(0).segment(0, cfg.dim);
        const Eigen::RowVectorXd beta = fm.row(0).segment(cfg.dim, cfg.dim);
        Mat hf = base.ln_f.forward(xb, cc ? &cc->vc.lnf_c : nullptr);
        if (cc) {
            cc->vc.hf = hf;
            cc->vc.f_mod = fm.row(0);
        }
        Mat hm = nn::rowwise_add(nn::rowwise_mul(hf, (gamma.array() + 1.0).matrix()), beta);
        Mat out_tok = base.head.forward(hm, cc ? &cc->vc.head_c : nullptr);
        return unpatchify(out_tok, cfg.latent, cfg.patch);
    }

    /// Backward accumulates gradients into both trainable and base buffers;
    /// the optimizer only ever steps the trainable list, and the freeze
    /// contract is verified by the base hash.
    void backward(const Vec& du, InjectionCache& cc) {
        const auto& cfg = base.cfg;
        Mat dout_tok = patchify(du, cfg.latent, cfg.patch);
        Mat dhm = base.head.backward(dout_tok, cc.vc.head_c);
        const Eigen::RowVectorXd gamma = cc.vc.f_mod.segment(0, cfg.dim);
        Eigen::RowVectorXd dfm(2 * cfg.dim);
        dfm.segment(0, cfg.dim) = dhm.cwiseProduct(cc.vc.hf).colwise().sum();
        dfm.segment(cfg.dim, cfg.dim) = dhm.colwise().sum();
        Mat dhf = nn::rowwise_mul(dhm, (gamma.array() + 1.0).matrix());
        Mat dxb = base.ln_f.backward(dhf, cc.vc.lnf_c);
        Mat demb = nn::Silu::backward(base.f_mod.backward(dfm, cc.vc.f_mod_c), cc.vc.f_act);

        std::vector<Mat> dinj(copy_depth);
        for (int k = static_cast<int>(base.blocks.size()) - 1; k >= 0; --k) {
            dxb = base.blocks[k].backward(dxb, cc.vc.blocks[k], demb);
            if (k < copy_depth) dinj[k] = dxb;  // gradient entering the injection add
        }
        base.pos.g += dxb;
        base.patch_embed.backward(dxb, cc.vc.patch_c);

        // copy stream, top block first
        Mat dxc = Mat::Zero(base.cfg.tokens(), cfg.dim);
        for (int k = copy_depth - 1; k >= 0; --k) {
            dxc += zero_proj[k].backward(dinj[k], cc.proj_c[k]);
            dxc = copy_blocks[k].backward(dxc, cc.copy_blocks[k], demb);
        }
        // stem: xc0 = sigma * f + pos_copy
        pos_copy.g += dxc;
        sigma.g(0, 0) += dxc.cwiseProduct(cc.f_out).sum();
        Mat df = sigma.v(0, 0) * dxc;
        Mat dh = fus2.backward(df, cc.fus2_c);
        dh = nn::Silu::backward(dh, cc.fus_act);
        Mat din = fus1.backward(dh, cc.fus1_c);
        const int td = cfg.token_dim();
        mu.g(0, 0) += din.rightCols(td).cwiseProduct(cc.tok_c).sum();

        base.embed_backward(demb, cc.vc);
    }

    /// JVP along (dx_t, dr, dt); x_c and c are constants of the flow.
    std::pair<Vec, Vec> forward_jvp(const Vec& x_t, const Vec& dx_t, double r, double t,
                                    double dr, double dt, const Vec* c, const Vec& x_c,
                                    InjectionCache* cc) const {
        const auto& cfg = base.cfg;
        auto [emb, demb] = base.embed_jvp(t, r, dt, dr, c, cc ? &cc->vc : nullptr);

        Mat tok_t = patchify(x_t, cfg.latent, cfg.patch);
        Mat dtok_t = patchify(dx_t, cfg.latent, cfg.patch);
        Mat tok_c = patchify(x_c, cfg.latent, cfg.patch);
        Mat in(tok_t.rows(), 2 * tok_t.cols());
        in << tok_t, mu.v(0, 0) * tok_c;
        Mat din(tok_t.rows(), 2 * tok_t.cols());
        din << dtok_t, Mat::Zero(tok_c.rows(), tok_c.cols());
        auto [h, dh] = fus1.forward_jvp(in, din, cc ? &cc->fus1_c : nullptr);
        auto [ha, dha] = nn::Silu::forward_jvp(h, dh, cc ? &cc->fus_act : nullptr);
        auto [f, df] = fus2.forward_jvp(ha, dha, cc ? &cc->fus2_c : nullptr);
        if (cc) {
            cc->tok_c = tok_c;
            cc->f_out = f;
        }
        Mat xc = sigma.v(0, 0) * f + pos_copy.v;
        Mat dxc = sigma.v(0, 0) * df;
        if (cc) {
            cc->copy_blocks.resize(copy_depth);
            cc->proj_c.resize(copy_depth);
        }
        std::vector<Mat> inj(copy_depth), dinj(copy_depth);
        for (int k = 0; k < copy_depth; ++k) {
            auto [y, dy] = copy_blocks[k].forward_jvp(xc, dxc, emb, demb,
                                                      cc ? &cc->copy_blocks[k] : nullptr);
            xc = std::move(y);
            dxc = std::move(dy);
            auto [p, dp] = zero_proj[k].forward_jvp(xc, dxc, cc ? &cc->proj_c[k] : nullptr);
            inj[k] = std::move(p);
            dinj[k] = std::move(dp);
        }

        auto [xb0, dxb0] =
            base.patch_embed.forward_jvp(tok_t, dtok_t, cc ? &cc->vc.patch_c : nullptr);
        Mat xb = xb0 + base.pos.v;
        Mat dxb = dxb0;
        if (cc) cc->vc.blocks.resize(base.blocks.size());
        for (std::size_t k = 0; k < base.blocks.size(); ++k) {
            if (static_cast<int>(k) < copy_depth) {
                xb += inj[k];
                dxb += dinj[k];
            }
            auto [y, dy] = base.blocks[k].forward_jvp(xb, dxb, emb, demb,
                                                      cc ? &cc->vc.blocks[k] : nullptr);
            xb = std::move(y);
            dxb = std::move(dy);
        }

        auto [e_act, de_act] = nn::Silu::forward_jvp(emb, demb, cc ? &cc->vc.f_act : nullptr);
        auto [fmv, dfmv] = base.f_mod.forward_jvp(e_act, de_act,
                                                  cc ? &cc->vc.f_mod_c : nullptr);
        const Eigen::RowVectorXd gamma = fmv.row(0).segment(0, cfg.dim);
        const Eigen::RowVectorXd beta = fmv.row(0).segment(cfg.dim, cfg.dim);
        const Eigen::RowVectorXd dgamma = dfmv.row(0).segment(0, cfg.dim);
        const Eigen::RowVectorXd dbeta = dfmv.row(0).segment(cfg.dim, cfg.dim);
        auto [hf, dhf] = base.ln_f.forward_jvp(xb, dxb, cc ? &cc->vc.lnf_c : nullptr);
        if (cc) {
            cc->vc.hf = hf;
            cc->vc.f_mod = fmv.row(0);
        }
        Mat hm = nn::rowwise_add(nn::rowwise_mul(hf, (gamma.array() + 1.0).matrix()), beta);
        Mat dhm = nn::rowwise_mul(dhf, (gamma.array() + 1.0).matrix()) +
                  nn::rowwise_mul(hf, dgamma);
        dhm = nn::rowwise_add(dhm, dbeta);
        auto [out_tok, dout_tok] =
            base.head.forward_jvp(hm, dhm, cc ? &cc->vc.head_c : nullptr);
        return {unpatchify(out_tok, cfg.latent, cfg.patch),
                unpatchify(dout_tok, cfg.latent, cfg.patch)};
    }
};

/// Guided velocity for the injected model (stage-2 CFG target). The
/// unconditional branch drops both c and x_c, falling back to the frozen
/// base evaluated with the null condition embedding.
inline Vec mixed_velocity_injected(const InjectionModel& m, const FlowState& s,
                                   const CFGConfig& cfg, const Vec* c, const Vec& x_c) {
    const Vec plain = s.eps - s.x;
    if (c == nullptr || (cfg.omega == 1.0 && cfg.kappa == 0.0)) return plain;
    Vec v = cfg.omega * plain;
    if (cfg.kappa != 0.0) v += cfg.kappa * m.forward(s.x_t, s.t, s.t, c, x_c, nullptr);
    const double rest = 1.0 - cfg.omega - cfg.kappa;
    if (rest != 0.0) v += rest * m.base.forward(s.x_t, s.t, s.t, nullptr, nullptr);
    return v;
}

/// Stage-2 per-sample losses (FM and MF objectives).
inline double inject_fm_sample_loss(InjectionModel& m, const FlowState& s, const Vec* c,
                                    const Vec& x_c, bool with_grad = true) {
    InjectionCache cache;
    const Vec v = m.forward(s.x_t, s.t, s.t, c, x_c, with_grad ? &cache : nullptr);
    if (!v.allFinite()) throw NumericError("inject_fm: non-finite output");
    const Vec diff = v - (s.eps - s.x);
    const double nz = static_cast<double>(diff.size());
    if (with_grad) m.backward(2.0 * diff / nz, cache);
    return diff.squaredNorm() / nz;
}

inline double inject_mf_sample_loss(InjectionModel& m, const FlowState& s,
                                    const CFGConfig& cfg, const Vec* c, const Vec& x_c,
                                    bool with_grad = true) {
    require(s.r <= s.t, "inject_mf: requires r <= t");
    InjectionCache cache;
    const Vec v_tilde = mixed_velocity_injected(m, s, cfg, c, x_c);
    auto [u, du] = m.forward_jvp(s.x_t, v_tilde, s.r, s.t, 0.0, 1.0, c, x_c,
                                 with_grad ? &cache : nullptr);
    const Vec target = v_tilde - (s.t - s.r) * du;  // stop-gradient value
    if (!target.allFinite()) throw NumericError("inject_mf: non-finite target");
    const Vec diff = u - target;
    const double nz = static_cast<double>(diff.size());
    if (with_grad) m.backward(2.0 * diff / nz, cache);
    return diff.squaredNorm() / nz;
}

struct InjectEpochLog {
    int epoch = 0;
    double loss = 0.0;
    double sigma = 0.0;
    double mu = 0.0;
};

namespace detail {

struct InjectGradSample {
    const std::vector<Vec>* latents;
    const std::vector<Vec>* conds;
    const std::vector<Vec>* x_cs;
    const FlowTrainConfig* tc;
    int epoch;

    double operator()(InjectionModel& m, int idx) const {
        Rng rng(nn::mix_seed(tc->seed, static_cast<std::uint64_t>(epoch) + 1,
                             static_cast<std::uint64_t>(idx) + 1));
        const Vec& x = (*latents)[idx];
        Vec eps(x.size());
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
        double t, r;
        if (tc->mean_flow) {
            std::tie(t, r) = sample_tr(rng, tc->r_eq_t_prob);
        } else {
            t = rng.uniform();
            r = t;
        }
        const FlowState s = build_path(x, eps, t, r);
        const Vec* c = &(*conds)[idx];
        if (rng.bernoulli(tc->cfg.cond_dropout_prob)) c = nullptr;
        if (tc->mean_flow) return inject_mf_sample_loss(m, s, tc->cfg, c, (*x_cs)[idx]);
        return inject_fm_sample_loss(m, s, c, (*x_cs)[idx]);
    }
};

}  // namespace detail

/// Stage-2 training: only copy/fusion/sigma/mu/projection parameters are
/// stepped; the frozen-base hash is verified before returning.
inline std::vector<InjectEpochLog> train_injected(InjectionModel& model,
                                                  const std::vector<Vec>& latents,
                                                  const std::vector<Vec>& conds,
                                                  const std::vector<Vec>& x_cs,
                                                  const FlowTrainConfig& tc) {
    require(!latents.empty(), "train_injected: empty dataset");
    require(conds.size() == latents.size() && x_cs.size() == latents.size(),
            "train_injected: pair count mismatch");
    const std::string hash_before = model.base_hash();
    require(hash_before == model.stage1_hash,
            "train_injected: frozen base does not match the stage-1 checkpoint");

    nn::Adam opt(model.trainable_params(), tc.lr);
    Rng shuffle_rng(nn::mix_seed(tc.seed, 0x1213));
    const int n = static_cast<int>(latents.size());
    const int micro = std::max(1, tc.micro_batch);
    const int accum = std::max(1, tc.grad_accum);
    std::vector<InjectEpochLog> log;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const std::vector<int> order = nn::shuffled_indices(n, shuffle_rng);
        double total = 0.0;
        int pos = 0;
        while (pos < n) {
            nn::zero_grads(model.params());
            int used = 0;
            for (int a = 0; a < accum && pos < n; ++a) {
                const int end = std::min(n, pos + micro);
                std::vector<int> idx(order.begin() + pos, order.begin() + end);
                detail::InjectGradSample fn{&latents, &conds, &x_cs, &tc, epoch};
                total += nn::batched_grads(model, idx, tc.threads, fn);
                used += static_cast<int>(idx.size());
                pos = end;
            }
            const double scale = 1.0 / static_cast<double>(used);
            for (auto* p : model.trainable_params()) p->g *= scale;
            opt.step();
        }
        log.push_back({epoch, total / n, model.sigma.v(0, 0), model.mu.v(0, 0)});
    }

    if (model.base_hash() != hash_before)
        throw NumericError("train_injected: frozen-base parameters changed");
    return log;
}

}  // namespace lsspi
