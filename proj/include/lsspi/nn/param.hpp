#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "lsspi/core/sha256.hpp"
#include "lsspi/core/types.hpp"

namespace lsspi::nn {

/// A named parameter tensor with its gradient accumulator.
struct Param {
    std::string name;
    Mat v;
    Mat g;

    void init(const std::string& n, Eigen::Index rows, Eigen::Index cols) {
        name = n;
        v = Mat::Zero(rows, cols);
        g = Mat::Zero(rows, cols);
    }
    void zero_grad() { g.setZero(); }
    Eigen::Index count() const { return v.size(); }
};

using ParamList = std::vector<Param*>;

inline std::int64_t param_count(const ParamList& ps) {
    std::int64_t n = 0;
    for (const auto* p : ps) n += p->count();
    return n;
}

inline void zero_grads(const ParamList& ps) {
    for (auto* p : ps) p->zero_grad();
}

/// Content hash over parameter names, shapes and raw values, in list order.
inline std::string params_sha256(const ParamList& ps) {
    Sha256 h;
    for (const auto* p : ps) {
        h.update(p->name);
        const std::uint64_t r = p->v.rows(), c = p->v.cols();
        h.update(&r, sizeof(r));
        h.update(&c, sizeof(c));
        h.update(p->v.data(), sizeof(double) * p->v.size());
    }
    return h.hex_digest();
}

// ---------------------------------------------------------------------------
// Parameter blob: magic | version u32 | count u32 | per tensor:
//   name_len u32 | name | rows u64 | cols u64 | float64 data (column-major)
// ---------------------------------------------------------------------------

inline constexpr char kParamMagic[10] = {'L', 'S', 'S', 'P', 'I', '-', 'C', 'K', 'P', 'T'};

inline void save_params(const ParamList& ps, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_params: cannot open " + path);
    f.write(kParamMagic, sizeof(kParamMagic));
    const std::uint32_t version = 1, count = static_cast<std::uint32_t>(ps.size());
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto* p : ps) {
        const std::uint32_t nl = static_cast<std::uint32_t>(p->name.size());
        f.write(reinterpret_cast<const char*>(&nl), 4);
        f.write(p->name.data(), nl);
        const std::uint64_t r = p->v.rows(), c = p->v.cols();
        f.write(reinterpret_cast<const char*>(&r), 8);
        f.write(reinterpret_cast<const char*>(&c), 8);
        f.write(reinterpret_cast<const char*>(p->v.data()),
                static_cast<std::streamsize>(sizeof(double) * p->v.size()));
    }
    if (!f) throw IoError("save_params: write failed for " + path);
}

/// Load values into an already-shaped parameter list; names and shapes must
/// match exactly (the model configuration defines the layout).
inline void load_params(const ParamList& ps, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_params: cannot open " + path);
    char magic[10];
    f.read(magic, 10);
    if (!f || std::memcmp(magic, kParamMagic, 10) != 0)
        throw IoError("load_params: bad magic in " + path);
    std::uint32_t version = 0, count = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&count), 4);
    if (version != 1) throw IoError("load_params: unsupported version");
    if (count != ps.size()) throw IoError("load_params: parameter count mismatch");
    for (auto* p : ps) {
        std::uint32_t nl = 0;
        f.read(reinterpret_cast<char*>(&nl), 4);
        std::string name(nl, '\0');
        f.read(name.data(), nl);
        std::uint64_t r = 0, c = 0;
        f.read(reinterpret_cast<char*>(&r), 8);
        f.read(reinterpret_cast<char*>(&c), 8);
        if (!f) throw IoError("load_params: truncated file " + path);
        if (name != p->name || r != static_cast<std::uint64_t>(p->v.rows()) ||
            c != static_cast<std::uint64_t>(p->v.cols()))
            throw IoError("load_params: layout mismatch at tensor " + name);
        f.read(reinterpret_cast<char*>(p->v.data()),
               static_cast<std::streamsize>(sizeof(double) * p->v.size()));
        if (!f) throw IoError("load_params: truncated tensor data in " + path);
    }
}

/// Adam optimizer over a fixed parameter list.
class Adam {
public:
    explicit Adam(ParamList params, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto* p : params_) {
            m_.push_back(Mat::Zero(p->v.rows(), p->v.cols()));
            v_.push_back(Mat::Zero(p->v.rows(), p->v.cols()));
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Param& p = *params_[i];
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * p.g;
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * p.g.cwiseProduct(p.g);
            const Mat mhat = m_[i] / bc1;
            const Mat vhat = v_[i] / bc2;
            p.v.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
        }
    }

private:
    ParamList params_;
    double lr_, b1_, b2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Mat> m_, v_;
};

}  // namespace lsspi::nn
