#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "lsspi/spi/dataset.hpp"
#include "lsspi/spi/measure.hpp"
#include "lsspi/spi/patterns.hpp"
#include "lsspi/spi/toyset.hpp"

using namespace lsspi;
namespace fs = std::filesystem;

TEST(Patterns, FullSamplingCount) {
    const PatternSet set = generate_patterns(PatternKind::binary, 1.0, 2, 2, 5);
    EXPECT_EQ(set.M(), 4);
    for (const auto& p : set.patterns)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                EXPECT_TRUE(p(i, j) == 0.0 || p(i, j) == 1.0);
}

TEST(Patterns, SamplingRate048Gives196) {
    // floor(0.048 * 64 * 64) = floor(196.608) = 196, hand-checked
    const PatternSet set = generate_patterns(PatternKind::gray, 0.048, 64, 64, 5);
    EXPECT_EQ(set.M(), 196);
}

TEST(Patterns, ZeroPatternCountRejected) {
    EXPECT_THROW(generate_patterns(PatternKind::binary, 0.0001, 64, 64, 5), InvalidArgument);
    EXPECT_THROW(generate_patterns(PatternKind::binary, 0.0, 8, 8, 5), InvalidArgument);
    EXPECT_THROW(generate_patterns(PatternKind::binary, 1.5, 8, 8, 5), InvalidArgument);
}

TEST(Patterns, Deterministic) {
    const PatternSet a = generate_patterns(PatternKind::gray, 0.1, 16, 16, 99);
    const PatternSet b = generate_patterns(PatternKind::gray, 0.1, 16, 16, 99);
    ASSERT_EQ(a.M(), b.M());
    for (int m = 0; m < a.M(); ++m)
        EXPECT_TRUE((a.patterns[m].array() == b.patterns[m].array()).all());
}

TEST(Patterns, CountFormulaProperty) {
    Rng rng(3);
    for (int k = 0; k < 300; ++k) {
        const double rate = rng.uniform(0.001, 1.0);
        const int H = 2 + static_cast<int>(rng.below(40));
        const int W = 2 + static_cast<int>(rng.below(40));
        const int M = pattern_count(rate, H, W);
        EXPECT_EQ(M, static_cast<int>(std::floor(rate * H * W)));
        if (M >= 1) {
            const PatternSet set = generate_patterns(PatternKind::binary, rate, H, W, k);
            EXPECT_EQ(set.M(), M);
        }
    }
}

TEST(Patterns, GrayValuesInUnitInterval) {
    const PatternSet set = generate_patterns(PatternKind::gray, 0.2, 12, 12, 8);
    for (const auto& p : set.patterns) {
        EXPECT_GE(p.minCoeff(), 0.0);
        EXPECT_LE(p.maxCoeff(), 1.0);
    }
}

TEST(Patterns, ArchiveRoundTrip) {
    const PatternSet set = generate_patterns(PatternKind::gray, 0.3, 9, 7, 321);
    const std::string path = (fs::temp_directory_path() / "lsspi_pat_test.bin").string();
    save_patterns(set, path);
    const PatternSet back = load_patterns(path);
    EXPECT_EQ(back.M(), set.M());
    EXPECT_EQ(back.kind, set.kind);
    EXPECT_EQ(back.seed, set.seed);
    EXPECT_EQ(back.H(), set.H());
    EXPECT_EQ(back.W(), set.W());
    for (int m = 0; m < set.M(); ++m)
        for (int i = 0; i < set.H(); ++i)
            for (int j = 0; j < set.W(); ++j)
                EXPECT_EQ(back.patterns[m](i, j),
                          static_cast<double>(static_cast<float>(set.patterns[m](i, j))));
    fs::remove(path);
}

TEST(Measure, AllOnesPattern) {
    ImageSample img{Mat::Ones(2, 2), "ones"};
    PatternSet set;
    set.patterns = {Mat::Ones(2, 2)};
    const BucketSignal sig = measure(img, set);
    EXPECT_DOUBLE_EQ(sig.values[0], 4.0);
}

TEST(Measure, DeltaPattern) {
    Rng rng(4);
    Mat pix(3, 3);
    rng.fill_uniform(pix, 0.0, 1.0);
    ImageSample img{pix, "rand"};
    Mat delta = Mat::Zero(3, 3);
    delta(1, 2) = 1.0;
    PatternSet set;
    set.patterns = {delta};
    const BucketSignal sig = measure(img, set);
    EXPECT_DOUBLE_EQ(sig.values[0], pix(1, 2));
}

TEST(Measure, BruteForceDotProductOracle) {
    Rng rng(6);
    Mat pix(8, 8);
    rng.fill_uniform(pix, 0.0, 1.0);
    ImageSample img{pix, "r"};
    PatternSet set;
    for (int m = 0; m < 3; ++m) {
        Mat p(8, 8);
        rng.fill_uniform(p, 0.0, 1.0);
        set.patterns.push_back(p);
    }
    const BucketSignal sig = measure(img, set);
    for (int m = 0; m < 3; ++m) {
        double expect = 0.0;  // independent elementwise multiply-and-sum
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) expect += set.patterns[m](i, j) * pix(i, j);
        EXPECT_NEAR(sig.values[m], expect, 1e-6);
    }
}

TEST(Measure, LinearityProperty) {
    Rng rng(7);
    const PatternSet set = generate_patterns(PatternKind::gray, 0.5, 8, 8, 11);
    Mat p1(8, 8), p2(8, 8);
    rng.fill_uniform(p1, 0.0, 1.0);
    rng.fill_uniform(p2, 0.0, 1.0);
    const double a = 0.7, b = -0.3;
    ImageSample i1{p1, "1"}, i2{p2, "2"}, mix{a * p1 + b * p2, "mix"};
    const Vec lhs = measure(mix, set).values;
    const Vec rhs = a * measure(i1, set).values + b * measure(i2, set).values;
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Measure, DimensionMismatch) {
    ImageSample img{Mat::Ones(4, 4), "x"};
    PatternSet set;
    set.patterns = {Mat::Ones(2, 2)};
    EXPECT_THROW(measure(img, set), InvalidArgument);
}

TEST(Measure, NoiseIsSeededAndDeterministic) {
    ImageSample img{Mat::Ones(8, 8) * 0.5, "x"};
    const PatternSet set = generate_patterns(PatternKind::binary, 0.5, 8, 8, 3);
    NoiseSpec g{NoiseKind::gaussian, 0.05, 0.0, 77};
    const Vec a = measure(img, set, g).values;
    const Vec b = measure(img, set, g).values;
    EXPECT_TRUE((a.array() == b.array()).all());
    const Vec clean = measure(img, set).values;
    EXPECT_GT((a - clean).cwiseAbs().maxCoeff(), 0.0);
    NoiseSpec p{NoiseKind::poisson, 0.0, 1e4, 78};
    const Vec c = measure(img, set, p).values;
    EXPECT_TRUE(c.allFinite());
    for (int i = 0; i < c.size(); ++i) EXPECT_GE(c[i], 0.0);
}

TEST(Quantize, NearestInteger) {
    BucketSignal s;
    s.values = Vec(2);
    s.values << 1.4, 2.6;
    const BucketSignal q = quantize_signal(s);
    EXPECT_DOUBLE_EQ(q.values[0], 1.0);
    EXPECT_DOUBLE_EQ(q.values[1], 3.0);
    EXPECT_TRUE(q.quantized);
}

TEST(Quantize, AlreadyIntegral) {
    BucketSignal s;
    s.values = Vec(2);
    s.values << 2.0, -0.0;
    const BucketSignal q = quantize_signal(s);
    EXPECT_DOUBLE_EQ(q.values[0], 2.0);
    EXPECT_EQ(q.values[1], 0.0);
}

TEST(Quantize, TieAwayFromZero) {
    BucketSignal s;
    s.values = Vec(3);
    s.values << 0.5, -0.5, 1.5;
    const BucketSignal q = quantize_signal(s);
    EXPECT_DOUBLE_EQ(q.values[0], 1.0);
    EXPECT_DOUBLE_EQ(q.values[1], -1.0);
    EXPECT_DOUBLE_EQ(q.values[2], 2.0);
}

TEST(Quantize, Idempotent) {
    Rng rng(9);
    BucketSignal s;
    s.values = Vec(64);
    for (int i = 0; i < 64; ++i) s.values[i] = rng.uniform(-50.0, 50.0);
    const BucketSignal q1 = quantize_signal(s);
    const BucketSignal q2 = quantize_signal(q1);
    EXPECT_TRUE((q1.values.array() == q2.values.array()).all());
}

TEST(SignalDump, RoundTrip) {
    std::vector<BucketSignal> sigs(3);
    Rng rng(10);
    for (auto& s : sigs) {
        s.values = Vec(5);
        for (int i = 0; i < 5; ++i) s.values[i] = rng.uniform(-10, 10);
    }
    const std::string path = (fs::temp_directory_path() / "lsspi_sig_test.csv").string();
    save_signals(sigs, path);
    const auto back = load_signals(path);
    ASSERT_EQ(back.size(), 3u);
    for (int k = 0; k < 3; ++k)
        EXPECT_LT((back[k].values - sigs[k].values).cwiseAbs().maxCoeff(), 1e-15);
    fs::remove(path);
}

// ------------------------------------------------------------ dataset I/O

namespace {
fs::path make_ingest_dir() {
    const fs::path dir = fs::temp_directory_path() / "lsspi_ingest_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}
}  // namespace

TEST(Ingest, LexicographicOrderAndShape) {
    const fs::path dir = make_ingest_dir();
    save_image_png(Mat::Ones(16, 16) * 0.2, (dir / "b.png").string());
    save_image_png(Mat::Ones(16, 16) * 0.4, (dir / "a.png").string());
    save_image_png(Mat::Ones(16, 16) * 0.6, (dir / "c.png").string());
    const auto samples = ingest_dataset(dir.string(), 16, 16);
    ASSERT_EQ(samples.size(), 3u);
    EXPECT_EQ(samples[0].id, "a.png");
    EXPECT_EQ(samples[1].id, "b.png");
    EXPECT_EQ(samples[2].id, "c.png");
    EXPECT_NEAR(samples[0].pixels(0, 0), 0.4, 1e-2);
    fs::remove_all(dir);
}

TEST(Ingest, RgbReducedByChannelAverage) {
    const fs::path dir = make_ingest_dir();
    cv::Mat rgb(8, 8, CV_8UC3, cv::Scalar(30, 60, 90));  // BGR
    cv::imwrite((dir / "rgb.png").string(), rgb);
    const auto samples = ingest_dataset(dir.string(), 8, 8);
    ASSERT_EQ(samples.size(), 1u);
    EXPECT_NEAR(samples[0].pixels(3, 3), 60.0 / 255.0, 1e-2);
    fs::remove_all(dir);
}

TEST(Ingest, SkipsUnreadableAndErrorsWhenEmpty) {
    const fs::path dir = make_ingest_dir();
    {
        std::ofstream bad(dir / "broken.png");
        bad << "not an image";
    }
    EXPECT_THROW(ingest_dataset(dir.string(), 8, 8), IoError);  // nothing readable
    save_image_png(Mat::Ones(8, 8) * 0.5, (dir / "ok.png").string());
    const auto samples = ingest_dataset(dir.string(), 8, 8);
    EXPECT_EQ(samples.size(), 1u);
    fs::remove_all(dir);
    EXPECT_THROW(ingest_dataset((dir / "missing").string(), 8, 8), IoError);
}

TEST(Ingest, ResizeToTarget) {
    const fs::path dir = make_ingest_dir();
    Mat big = Mat::Zero(32, 32);
    big.block(0, 0, 16, 16).setOnes();
    save_image_png(big, (dir / "big.png").string());
    const auto samples = ingest_dataset(dir.string(), 16, 16);
    ASSERT_EQ(samples.size(), 1u);
    EXPECT_EQ(samples[0].pixels.rows(), 16);
    EXPECT_EQ(samples[0].pixels.cols(), 16);
    EXPECT_GT(samples[0].pixels(2, 2), 0.9);
    EXPECT_LT(samples[0].pixels(12, 12), 0.1);
    fs::remove_all(dir);
}

TEST(ToySet, DeterministicScanOracle) {
    const auto a = toy_dataset(123, 100, 64, 64);
    const auto b = toy_dataset(123, 100, 64, 64);
    ASSERT_EQ(a.size(), 100u);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(a[i].pixels.rows(), 64);
        EXPECT_EQ(a[i].pixels.cols(), 64);
        EXPECT_GE(a[i].pixels.minCoeff(), 0.0);
        EXPECT_LE(a[i].pixels.maxCoeff(), 1.0);
        EXPECT_TRUE((a[i].pixels.array() == b[i].pixels.array()).all());
    }
    // images differ from one another
    EXPECT_GT((a[0].pixels - a[1].pixels).cwiseAbs().maxCoeff(), 1e-3);
}
