#include <gtest/gtest.h>

#include <cmath>

#include "lsspi/core/rng.hpp"
#include "lsspi/metrics/quality.hpp"

using namespace lsspi;

namespace {
ImageSample img(const Mat& m) { return ImageSample{m, "t"}; }

/// Independent reference SSIM: direct per-window evaluation with explicit
/// sums (no Eigen block reductions).
double ssim_reference(const Mat& a, const Mat& b, int win = 8) {
    const double C1 = 1e-4, C2 = 9e-4;
    double total = 0.0;
    int count = 0;
    for (int i = 0; i + win <= a.rows(); ++i)
        for (int j = 0; j + win <= a.cols(); ++j) {
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            for (int u = 0; u < win; ++u)
                for (int v = 0; v < win; ++v) {
                    const double x = a(i + u, j + v), y = b(i + u, j + v);
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
            const double n = win * win;
            const double mx = sx / n, my = sy / n;
            const double vx = sxx / n - mx * mx, vy = syy / n - my * my;
            const double cxy = sxy / n - mx * my;
            total += ((2 * mx * my + C1) * (2 * cxy + C2)) /
                     ((mx * mx + my * my + C1) * (vx + vy + C2));
            ++count;
        }
    return total / count;
}
}  // namespace

TEST(Psnr, IdenticalIsInfinite) {
    Mat m = Mat::Ones(8, 8) * 0.3;
    EXPECT_TRUE(std::isinf(psnr(img(m), img(m))));
}

TEST(Psnr, UniformDifferenceClosedForm) {
    Mat a = Mat::Ones(8, 8) * 0.5;
    Mat b = Mat::Ones(8, 8) * 0.6;
    // MSE = 0.01 -> 10*log10(1/0.01) = 20 dB
    EXPECT_NEAR(psnr(img(a), img(b)), 20.0, 1e-9);
}

TEST(Psnr, ZerosVsOnes) {
    EXPECT_NEAR(psnr(img(Mat::Zero(8, 8)), img(Mat::Ones(8, 8))), 0.0, 1e-12);
}

TEST(Psnr, ShapeMismatch) {
    EXPECT_THROW(psnr(img(Mat::Zero(8, 8)), img(Mat::Zero(4, 4))), InvalidArgument);
}

TEST(Psnr, MonotoneInMse) {
    Mat ref = Mat::Zero(8, 8);
    double prev = psnr(img(ref), img(Mat::Ones(8, 8) * 0.1));
    for (double d = 0.2; d <= 0.9; d += 0.1) {
        const double cur = psnr(img(ref), img(Mat::Ones(8, 8) * d));
        EXPECT_LT(cur, prev);
        prev = cur;
    }
}

TEST(Ssim, SelfIsOne) {
    Rng rng(5);
    Mat m(16, 16);
    rng.fill_uniform(m, 0.0, 1.0);
    EXPECT_NEAR(ssim(img(m), img(m)), 1.0, 1e-12);
}

TEST(Ssim, Symmetric) {
    Rng rng(6);
    Mat a(16, 16), b(16, 16);
    rng.fill_uniform(a, 0.0, 1.0);
    rng.fill_uniform(b, 0.0, 1.0);
    EXPECT_NEAR(ssim(img(a), img(b)), ssim(img(b), img(a)), 1e-12);
}

TEST(Ssim, InvertedContrastIsNegative) {
    // checkerboard and its inverse: equal means, perfectly anti-correlated
    Mat a(16, 16);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) a(i, j) = ((i + j) % 2 == 0) ? 1.0 : 0.0;
    Mat b = Mat::Ones(16, 16) - a;
    const double expected = ssim_reference(a, b);
    const double got = ssim(img(a), img(b));
    EXPECT_LT(got, 0.0);
    EXPECT_NEAR(got, expected, 1e-12);
}

TEST(Ssim, MatchesReferenceOnRandomPairs) {
    Rng rng(7);
    for (int k = 0; k < 5; ++k) {
        Mat a(12, 14), b(12, 14);
        rng.fill_uniform(a, 0.0, 1.0);
        rng.fill_uniform(b, 0.0, 1.0);
        const double got = ssim(img(a), img(b));
        EXPECT_NEAR(got, ssim_reference(a, b), 1e-12);
        EXPECT_GE(got, -1.0);
        EXPECT_LE(got, 1.0);
    }
}

TEST(Ssim, TooSmallErrors) {
    EXPECT_THROW(ssim(img(Mat::Zero(4, 4)), img(Mat::Zero(4, 4))), InvalidArgument);
}

TEST(Aggregate, SingleRow) {
    std::vector<MetricRow> rows{{"vit", "a", 21.0, 0.8, 0.1}};
    const auto agg = aggregate(rows);
    ASSERT_EQ(agg.size(), 1u);
    EXPECT_DOUBLE_EQ(agg[0].psnr_mean, 21.0);
    EXPECT_DOUBLE_EQ(agg[0].ssim_mean, 0.8);
    EXPECT_EQ(agg[0].count, 1);
}

TEST(Aggregate, MeanOfTwo) {
    std::vector<MetricRow> rows{{"m", "a", 20.0, 0.5, 0.0}, {"m", "b", 30.0, 0.7, 0.0}};
    const auto agg = aggregate(rows);
    ASSERT_EQ(agg.size(), 1u);
    EXPECT_DOUBLE_EQ(agg[0].psnr_mean, 25.0);
    EXPECT_NEAR(agg[0].ssim_mean, 0.6, 1e-12);
}

TEST(Aggregate, GroupsByLabelAndExcludesInf) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<MetricRow> rows{
        {"a", "1", 20.0, 0.5, 0.0}, {"b", "1", 10.0, 0.2, 0.0}, {"a", "2", inf, 1.0, 0.0}};
    const auto agg = aggregate(rows);
    ASSERT_EQ(agg.size(), 2u);
    EXPECT_EQ(agg[0].method, "a");
    EXPECT_EQ(agg[0].count, 1);
    EXPECT_EQ(agg[0].inf_count, 1);
    EXPECT_DOUBLE_EQ(agg[0].psnr_mean, 20.0);
    EXPECT_EQ(agg[1].method, "b");
}

TEST(Aggregate, ConcatenationLinearity) {
    Rng rng(8);
    std::vector<MetricRow> part1, part2;
    for (int i = 0; i < 7; ++i)
        part1.push_back({"m", std::to_string(i), rng.uniform(10, 30), rng.uniform(), 0.0});
    for (int i = 0; i < 13; ++i)
        part2.push_back({"m", std::to_string(100 + i), rng.uniform(10, 30), rng.uniform(), 0.0});
    std::vector<MetricRow> all = part1;
    all.insert(all.end(), part2.begin(), part2.end());
    const double m1 = aggregate(part1)[0].psnr_mean;
    const double m2 = aggregate(part2)[0].psnr_mean;
    const double mall = aggregate(all)[0].psnr_mean;
    EXPECT_NEAR(mall, (7 * m1 + 13 * m2) / 20.0, 1e-12);
}

TEST(Aggregate, EmptyErrors) {
    EXPECT_THROW(aggregate({}), InvalidArgument);
}
