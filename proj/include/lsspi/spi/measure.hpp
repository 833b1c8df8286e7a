#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lsspi/core/rng.hpp"
#include "lsspi/spi/patterns.hpp"

namespace lsspi {

enum class NoiseKind { none, gaussian, poisson };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::none: return "none";
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::poisson: return "poisson";
    }
    return "none";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "none") return NoiseKind::none;
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "poisson") return NoiseKind::poisson;
    throw InvalidArgument("unknown noise kind: " + s);
}

/// Detector noise description. For gaussian, sigma is a fraction of the mean
/// noiseless bucket value. For poisson, scale is the photon budget of the
/// mean bucket value.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::none;
    double sigma = 0.0;   // gaussian: relative std
    double scale = 0.0;   // poisson: photons at the mean bucket value
    std::uint64_t seed = 0;
};

/// Bucket detector signal for one object: one value per pattern.
struct BucketSignal {
    Vec values;
    NoiseSpec noise;
    bool quantized = false;

    int M() const { return static_cast<int>(values.size()); }
};

namespace detail {

inline std::int64_t sample_poisson(Rng& rng, double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda < 30.0) {
        // Knuth product method
        const double L = std::exp(-lambda);
        double p = 1.0;
        std::int64_t k = 0;
        do {
            ++k;
            p *= rng.uniform();
        } while (p > L);
        return k - 1;
    }
    // normal approximation is adequate at desk scale
    const double v = lambda + std::sqrt(lambda) * rng.normal();
    return v < 0.0 ? 0 : static_cast<std::int64_t>(std::llround(v));
}

}  // namespace detail

/// Bucket measurement: values[i] = sum_xy P_i(x,y) * T(x,y), plus noise.
/// The noiseless call is deterministic.
inline BucketSignal measure(const ImageSample& image, const PatternSet& patterns,
                            const NoiseSpec& noise = {}) {
    require(patterns.M() >= 1, "measure: empty pattern set");
    require(image.pixels.rows() == patterns.H() && image.pixels.cols() == patterns.W(),
            "measure: image dimensions do not match pattern dimensions");

    BucketSignal sig;
    sig.noise = noise;
    sig.values.resize(patterns.M());
    for (int i = 0; i < patterns.M(); ++i)
        sig.values[i] = patterns.patterns[i].cwiseProduct(image.pixels).sum();

    if (noise.kind == NoiseKind::gaussian && noise.sigma > 0.0) {
        Rng rng(noise.seed);
        const double mean = sig.values.mean();
        const double sd = noise.sigma * std::abs(mean);
        for (int i = 0; i < sig.M(); ++i) sig.values[i] += sd * rng.normal();
    } else if (noise.kind == NoiseKind::poisson && noise.scale > 0.0) {
        Rng rng(noise.seed);
        const double mean = sig.values.mean();
        if (mean > 0.0) {
            const double photons_per_unit = noise.scale / mean;
            for (int i = 0; i < sig.M(); ++i) {
                const double lam = std::max(0.0, sig.values[i] * photons_per_unit);
                sig.values[i] = static_cast<double>(detail::sample_poisson(rng, lam)) /
                                photons_per_unit;
            }
        }
    }
    if (!sig.values.allFinite()) throw NumericError("measure: non-finite bucket values");
    return sig;
}

/// Round every value to the nearest integer, ties away from zero.
inline BucketSignal quantize_signal(const BucketSignal& signal) {
    BucketSignal out = signal;
    for (int i = 0; i < out.M(); ++i) out.values[i] = std::round(out.values[i]);
    // normalize -0.0 so quantized dumps are stable
    for (int i = 0; i < out.M(); ++i)
        if (out.values[i] == 0.0) out.values[i] = 0.0;
    out.quantized = true;
    return out;
}

// ---------------------------------------------------------------------------
// Bucket-signal dump: delimiter-separated text, one object per row, M columns.
// ---------------------------------------------------------------------------

inline void save_signals(const std::vector<BucketSignal>& signals, const std::string& path,
                         char delim = ',') {
    std::ofstream f(path);
    if (!f) throw IoError("save_signals: cannot open " + path);
    f << std::setprecision(17);
    for (const auto& s : signals) {
        for (int i = 0; i < s.M(); ++i) {
            if (i) f << delim;
            f << s.values[i];
        }
        f << '\n';
    }
}

inline std::vector<BucketSignal> load_signals(const std::string& path, char delim = ',') {
    std::ifstream f(path);
    if (!f) throw IoError("load_signals: cannot open " + path);
    std::vector<BucketSignal> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, delim)) vals.push_back(std::stod(tok));
        BucketSignal s;
        s.values = Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace lsspi
