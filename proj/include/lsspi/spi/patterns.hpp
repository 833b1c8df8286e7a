#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "lsspi/core/rng.hpp"
#include "lsspi/core/types.hpp"

namespace lsspi {

enum class PatternKind : std::uint8_t { binary = 0, gray = 1 };

inline std::string to_string(PatternKind k) {
    return k == PatternKind::binary ? "binary" : "gray";
}

inline PatternKind pattern_kind_from_string(const std::string& s) {
    if (s == "binary") return PatternKind::binary;
    if (s == "gray") return PatternKind::gray;
    throw InvalidArgument("unknown pattern kind: " + s);
}

/// A set of M illumination patterns over an H x W grid.
struct PatternSet {
    std::vector<Mat> patterns;  // each H x W, values in [0,1]
    PatternKind kind = PatternKind::binary;
    std::uint64_t seed = 0;
    double sampling_rate = 1.0;

    int M() const { return static_cast<int>(patterns.size()); }
    Eigen::Index H() const { return patterns.empty() ? 0 : patterns[0].rows(); }
    Eigen::Index W() const { return patterns.empty() ? 0 : patterns[0].cols(); }
};

inline int pattern_count(double sampling_rate, int H, int W) {
    return static_cast<int>(std::floor(sampling_rate * static_cast<double>(H) * W));
}

/// Generate M = floor(sampling_rate * H * W) speckle patterns.
/// Binary patterns are i.i.d. Bernoulli(0.5); gray patterns i.i.d. Uniform[0,1].
/// Deterministic for fixed (kind, sampling_rate, H, W, seed).
inline PatternSet generate_patterns(PatternKind kind, double sampling_rate, int H, int W,
                                    std::uint64_t seed) {
    require(H > 0 && W > 0, "generate_patterns: H and W must be positive");
    require(sampling_rate > 0.0 && sampling_rate <= 1.0,
            "generate_patterns: sampling_rate must lie in (0,1]");
    const int M = pattern_count(sampling_rate, H, W);
    require(M >= 1, "generate_patterns: sampling_rate yields zero patterns");

    PatternSet set;
    set.kind = kind;
    set.seed = seed;
    set.sampling_rate = sampling_rate;
    set.patterns.reserve(M);
    Rng rng(seed);
    for (int m = 0; m < M; ++m) {
        Mat p(H, W);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                p(i, j) = kind == PatternKind::binary ? (rng.bernoulli(0.5) ? 1.0 : 0.0)
                                                      : rng.uniform();
        set.patterns.push_back(std::move(p));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Pattern archive: fixed-layout binary file.
//   magic "LSSPI-PAT" | version u16 | kind u8 | M u32 | H u32 | W u32 |
//   seed u64 | M*H*W row-major float32
// ---------------------------------------------------------------------------

inline constexpr char kPatternMagic[9] = {'L', 'S', 'S', 'P', 'I', '-', 'P', 'A', 'T'};
inline constexpr std::uint16_t kPatternVersion = 1;

inline void save_patterns(const PatternSet& set, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_patterns: cannot open " + path);
    f.write(kPatternMagic, sizeof(kPatternMagic));
    auto put = [&f](const void* p, std::size_t n) { f.write(static_cast<const char*>(p), n); };
    const std::uint16_t ver = kPatternVersion;
    const std::uint8_t kind = static_cast<std::uint8_t>(set.kind);
    const std::uint32_t M = set.M(), H = static_cast<std::uint32_t>(set.H()),
                        W = static_cast<std::uint32_t>(set.W());
    const std::uint64_t seed = set.seed;
    put(&ver, 2);
    put(&kind, 1);
    put(&M, 4);
    put(&H, 4);
    put(&W, 4);
    put(&seed, 8);
    std::vector<float> row(W);
    for (const Mat& p : set.patterns)
        for (std::uint32_t i = 0; i < H; ++i) {
            for (std::uint32_t j = 0; j < W; ++j) row[j] = static_cast<float>(p(i, j));
            put(row.data(), sizeof(float) * W);
        }
    if (!f) throw IoError("save_patterns: write failed for " + path);
}

inline PatternSet load_patterns(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_patterns: cannot open " + path);
    char magic[9];
    f.read(magic, 9);
    if (!f || std::memcmp(magic, kPatternMagic, 9) != 0)
        throw IoError("load_patterns: bad magic in " + path);
    auto get = [&f, &path](void* p, std::size_t n) {
        f.read(static_cast<char*>(p), n);
        if (!f) throw IoError("load_patterns: truncated file " + path);
    };
    std::uint16_t ver;
    std::uint8_t kind;
    std::uint32_t M, H, W;
    std::uint64_t seed;
    get(&ver, 2);
    get(&kind, 1);
    get(&M, 4);
    get(&H, 4);
    get(&W, 4);
    get(&seed, 8);
    if (ver != kPatternVersion) throw IoError("load_patterns: unsupported version");
    PatternSet set;
    set.kind = static_cast<PatternKind>(kind);
    set.seed = seed;
    set.sampling_rate = static_cast<double>(M) / (static_cast<double>(H) * W);
    set.patterns.reserve(M);
    std::vector<float> row(W);
    for (std::uint32_t m = 0; m < M; ++m) {
        Mat p(H, W);
        for (std::uint32_t i = 0; i < H; ++i) {
            get(row.data(), sizeof(float) * W);
            for (std::uint32_t j = 0; j < W; ++j) p(i, j) = row[j];
        }
        set.patterns.push_back(std::move(p));
    }
    return set;
}

}  // namespace lsspi
