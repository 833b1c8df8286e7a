#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "lsspi/flow/velocity.hpp"
#include "lsspi/nn/train_util.hpp"

namespace lsspi {

// ------------------------------------------------------------- flow path

/// A point on the interpolation path x_t = (1-t) x + t eps, data at t=0 and
/// noise at t=1, together with the interval endpoints (r <= t).
struct FlowState {
    Vec x_t;
    double t = 0.0;
    double r = 0.0;
    Vec eps;
    Vec x;
};

inline FlowState build_path(const Vec& x, const Vec& eps, double t, double r) {
    require(x.size() == eps.size(), "build_path: shape mismatch");
    require(t >= 0.0 && t <= 1.0 && std::isfinite(t), "build_path: t outside [0,1]");
    require(r >= 0.0 && r <= t, "build_path: requires 0 <= r <= t");
    FlowState s;
    s.t = t;
    s.r = r;
    s.eps = eps;
    s.x = x;
    s.x_t.resize(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        s.x_t[i] = (1.0 - t) * x[i] + t * eps[i];
    return s;
}

inline FlowState build_path(const Vec& x, const Vec& eps, double t) {
    return build_path(x, eps, t, t);
}

// -------------------------------------------------------- guidance config

/// Classifier-free guidance coefficients (omega, kappa) and the training
/// condition-dropout probability.
struct CFGConfig {
    double omega = 1.0;
    double kappa = 0.0;
    double cond_dropout_prob = 0.0;
};

// ----------------------------------------------------------------- losses

/// Conditional flow-matching loss for one sample:
///   || (eps - x) - v_theta(x_t, t | c) ||^2 / numel.
/// Accumulates parameter gradients when with_grad is set.
inline double fm_sample_loss(VelocityModel& model, const FlowState& s, const Vec* c,
                             bool with_grad = true) {
    VelocityCache cache;
    const Vec v = model.forward(s.x_t, s.t, s.t, c, with_grad ? &cache : nullptr);
    if (!v.allFinite()) throw NumericError("fm_loss: non-finite model output");
    const Vec target = s.eps - s.x;
    const Vec diff = v - target;
    const double nz = static_cast<double>(diff.size());
    if (with_grad) model.backward(2.0 * diff / nz, cache);
    return diff.squaredNorm() / nz;
}

/// Mean FM loss over a batch without touching gradients.
inline double fm_loss(const std::vector<FlowState>& batch, const VelocityModel& model,
                      const std::vector<const Vec*>& conds) {
    require(!batch.empty(), "fm_loss: empty batch");
    require(conds.empty() || conds.size() == batch.size(), "fm_loss: condition count");
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Vec* c = conds.empty() ? nullptr : conds[i];
        const Vec v = model.forward(batch[i].x_t, batch[i].t, batch[i].t, c, nullptr);
        if (!v.allFinite()) throw NumericError("fm_loss: non-finite model output");
        const Vec diff = v - (batch[i].eps - batch[i].x);
        total += diff.squaredNorm() / static_cast<double>(diff.size());
    }
    return total / static_cast<double>(batch.size());
}

/// Guided instantaneous velocity (CFG mixing):
///   v~ = omega (eps - x) + kappa u(x_t,t,t | c) + (1-omega-kappa) u(x_t,t,t).
/// For an unconditional sample this reduces to eps - x.
inline Vec mixed_velocity(const VelocityModel& target_model, const FlowState& s,
                          const CFGConfig& cfg, const Vec* c) {
    const Vec plain = s.eps - s.x;
    // dropped / absent condition trains the unconditional branch plainly;
    // (omega,kappa) = (1,0) zeroes both model terms by arithmetic identity
    if (c == nullptr || (cfg.omega == 1.0 && cfg.kappa == 0.0)) return plain;
    Vec v = cfg.omega * plain;
    if (cfg.kappa != 0.0)
        v += cfg.kappa * target_model.forward(s.x_t, s.t, s.t, c, nullptr);
    const double rest = 1.0 - cfg.omega - cfg.kappa;
    if (rest != 0.0) v += rest * target_model.forward(s.x_t, s.t, s.t, nullptr, nullptr);
    return v;
}

struct MfTargetResult {
    Vec u;        // live-branch output u(x_t, r, t | c), cache held by caller
    Vec v_tilde;  // guided velocity
    Vec target;   // v_tilde - (t - r) * d/dt u, gradient-free
};

/// MeanFlow target: u_target = v~ - (t-r) (v~ . du/dx_t + du/dt), computed
/// with one JVP along (v~, 0, 1) over (x_t, r, t). The returned target is a
/// plain value (stop-gradient); only the live-branch cache carries state for
/// backpropagation. `target_model` lets the caller supply an independent
/// copy for the target branch (the two-copy oracle); by default both
/// branches share `model`.
inline MfTargetResult mf_target(const VelocityModel& model, const FlowState& s,
                                const CFGConfig& cfg, const Vec* c, VelocityCache* live_cache,
                                const VelocityModel* target_model = nullptr) {
    require(s.r <= s.t, "mf_target: requires r <= t");
    const VelocityModel& tm = target_model ? *target_model : model;

    MfTargetResult out;
    out.v_tilde = mixed_velocity(tm, s, cfg, c);

    if (target_model == nullptr || target_model == &model) {
        // fused: one pass yields the live output, the JVP, and the cache
        auto [u, du] = model.forward_jvp(s.x_t, out.v_tilde, s.r, s.t, 0.0, 1.0, c,
                                         live_cache);
        out.u = std::move(u);
        out.target = out.v_tilde - (s.t - s.r) * du;
    } else {
        auto [u_tgt, du] =
            tm.forward_jvp(s.x_t, out.v_tilde, s.r, s.t, 0.0, 1.0, c, nullptr);
        (void)u_tgt;
        out.target = out.v_tilde - (s.t - s.r) * du;
        out.u = model.forward(s.x_t, s.r, s.t, c, live_cache);
    }
    if (!out.target.allFinite()) throw NumericError("mf_target: non-finite target");
    if (!out.u.allFinite()) throw NumericError("mf_target: non-finite model output");
    return out;
}

/// MeanFlow loss for one sample; gradients flow only through the live
/// branch u(x_t, r, t | c).
inline double mf_sample_loss(VelocityModel& model, const FlowState& s, const CFGConfig& cfg,
                             const Vec* c, bool with_grad = true,
                             const VelocityModel* target_model = nullptr) {
    VelocityCache cache;
    MfTargetResult res =
        mf_target(model, s, cfg, c, with_grad ? &cache : nullptr, target_model);
    const Vec diff = res.u - res.target;
    const double nz = static_cast<double>(diff.size());
    if (with_grad) model.backward(2.0 * diff / nz, cache);
    return diff.squaredNorm() / nz;
}

/// Mean MF loss over a batch, no gradient side effects.
inline double mf_loss(const std::vector<FlowState>& batch, const VelocityModel& model,
                      const CFGConfig& cfg, const std::vector<const Vec*>& conds,
                      const VelocityModel* target_model = nullptr) {
    require(!batch.empty(), "mf_loss: empty batch");
    require(conds.empty() || conds.size() == batch.size(), "mf_loss: condition count");
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Vec* c = conds.empty() ? nullptr : conds[i];
        MfTargetResult res = mf_target(model, batch[i], cfg, c, nullptr, target_model);
        const Vec diff = res.u - res.target;
        total += diff.squaredNorm() / static_cast<double>(diff.size());
    }
    return total / static_cast<double>(batch.size());
}

// --------------------------------------------------------------- samplers

enum class FmSolver { euler, midpoint2 };

inline FmSolver fm_solver_from_string(const std::string& s) {
    if (s == "euler") return FmSolver::euler;
    if (s == "midpoint2") return FmSolver::midpoint2;
    throw InvalidArgument("unknown FM solver: " + s);
}

inline std::string to_string(FmSolver s) {
    return s == FmSolver::euler ? "euler" : "midpoint2";
}

/// Field evaluator: (x, r, t) -> velocity. FM solvers call it with r = t.
using FieldFn = std::function<Vec(const Vec&, double, double)>;

/// Integrate dx/dt = v(x,t) from t=1 (x = eps) down to t=0. `nfe` counts
/// model evaluations: euler uses nfe steps; midpoint2 uses nfe/2 steps of
/// two evaluations each.
inline Vec sample_fm_field(const Vec& eps, const FieldFn& field, int nfe, FmSolver solver) {
    require(nfe >= 1, "sample_fm: nfe must be >= 1");
    Vec x = eps;
    if (solver == FmSolver::euler) {
        const int steps = nfe;
        const double dt = 1.0 / steps;
        for (int k = 0; k < steps; ++k) {
            const double t = 1.0 - k * dt;
            x -= dt * field(x, t, t);
            if (!x.allFinite()) throw NumericError("sample_fm: non-finite state");
        }
    } else {
        require(nfe >= 2 && nfe % 2 == 0, "sample_fm: midpoint2 needs an even nfe >= 2");
        const int steps = nfe / 2;
        const double dt = 1.0 / steps;
        for (int k = 0; k < steps; ++k) {
            const double t = 1.0 - k * dt;
            const Vec v1 = field(x, t, t);
            const Vec x_mid = x - 0.5 * dt * v1;
            const double t_mid = t - 0.5 * dt;
            x -= dt * field(x_mid, t_mid, t_mid);
            if (!x.allFinite()) throw NumericError("sample_fm: non-finite state");
        }
    }
    return x;
}

inline Vec sample_fm(const Vec& eps, const VelocityModel& model, const Vec* c, int nfe,
                     FmSolver solver) {
    FieldFn field = [&](const Vec& x, double r, double t) {
        return model.forward(x, r, t, c, nullptr);
    };
    return sample_fm_field(eps, field, nfe, solver);
}

/// MeanFlow displacement sampler over 1 = t_0 > ... > t_steps = 0:
///   x_{k+1} = x_k - (t_k - t_{k+1}) u(x_k, t_{k+1}, t_k).
/// steps=1 is the single-step rule x_0 = x_1 - u(x_1, 0, 1).
inline Vec sample_mf_field(const Vec& eps, const FieldFn& field, int steps) {
    require(steps >= 1, "sample_mf: steps must be >= 1");
    Vec x = eps;
    for (int k = 0; k < steps; ++k) {
        const double t_k = 1.0 - static_cast<double>(k) / steps;
        const double t_next = 1.0 - static_cast<double>(k + 1) / steps;
        x -= (t_k - t_next) * field(x, t_next, t_k);
        if (!x.allFinite()) throw NumericError("sample_mf: non-finite state");
    }
    return x;
}

inline Vec sample_mf(const Vec& eps, const VelocityModel& model, const Vec* c, int steps) {
    FieldFn field = [&](const Vec& x, double r, double t) {
        return model.forward(x, r, t, c, nullptr);
    };
    return sample_mf_field(eps, field, steps);
}

// ----------------------------------------------------------------- training

/// Draw (t, r): t ~ U(0,1); r = t with probability `r_eq_t_prob`, otherwise
/// r ~ U(0, t). The r = t mass anchors the instantaneous-velocity regime.
inline std::pair<double, double> sample_tr(Rng& rng, double r_eq_t_prob = 0.25) {
    const double t = rng.uniform();
    if (rng.bernoulli(r_eq_t_prob)) return {t, t};
    return {t, t * rng.uniform()};
}

struct FlowTrainConfig {
    int epochs = 10;
    int micro_batch = 16;
    int grad_accum = 1;  // effective batch = micro_batch * grad_accum
    double lr = 1e-4;
    CFGConfig cfg;
    double r_eq_t_prob = 0.25;
    bool mean_flow = false;  // false: FM objective (r = t); true: MF objective
    std::uint64_t seed = 23;
    int threads = 2;
};

struct FlowEpochLog {
    int epoch = 0;
    double loss = 0.0;
    int effective_batch = 0;
};

namespace detail {

struct FlowGradSample {
    const std::vector<Vec>* latents;
    const std::vector<Vec>* conds;  // standardized signals; may be null
    const FlowTrainConfig* tc;
    int epoch;

    double operator()(VelocityModel& m, int idx) const {
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
        const Vec* c = nullptr;
        if (conds != nullptr) {
            const bool drop = rng.bernoulli(tc->cfg.cond_dropout_prob);
            if (!drop) c = &(*conds)[idx];
        }
        if (tc->mean_flow) return mf_sample_loss(m, s, tc->cfg, c);
        return fm_sample_loss(m, s, c);
    }
};

}  // namespace detail

/// Shared FM/MF training loop with gradient accumulation. `conds` supplies
/// one standardized bucket signal per latent (empty for unconditional
/// training).
inline std::vector<FlowEpochLog> flow_train(VelocityModel& model,
                                            const std::vector<Vec>& latents,
                                            const std::vector<Vec>& conds,
                                            const FlowTrainConfig& tc) {
    require(!latents.empty(), "flow_train: empty dataset");
    const bool conditional = !conds.empty();
    if (conditional)
        require(conds.size() == latents.size(), "flow_train: condition count mismatch");

    nn::Adam opt(model.params(), tc.lr);
    Rng shuffle_rng(nn::mix_seed(tc.seed, 0xF10));
    const int n = static_cast<int>(latents.size());
    const int micro = std::max(1, tc.micro_batch);
    const int accum = std::max(1, tc.grad_accum);
    const int effective = micro * accum;
    std::vector<FlowEpochLog> log;

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
                detail::FlowGradSample fn{&latents, conditional ? &conds : nullptr, &tc,
                                          epoch};
                total += nn::batched_grads(model, idx, tc.threads, fn);
                used += static_cast<int>(idx.size());
                pos = end;
            }
            const double scale = 1.0 / static_cast<double>(used);
            for (auto* p : model.params()) p->g *= scale;
            opt.step();
        }
        log.push_back({epoch, total / n, effective});
    }
    return log;
}

}  // namespace lsspi
