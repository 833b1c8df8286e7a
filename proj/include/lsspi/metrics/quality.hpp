#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "lsspi/core/types.hpp"

namespace lsspi {

/// 10*log10(max_val^2 / MSE); +inf when the images are identical.
inline double psnr(const ImageSample& ref, const ImageSample& test, double max_val = 1.0) {
    require(ref.pixels.rows() == test.pixels.rows() && ref.pixels.cols() == test.pixels.cols(),
            "psnr: shape mismatch");
    const double mse = (ref.pixels - test.pixels).squaredNorm() /
                       static_cast<double>(ref.pixels.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

/// Mean local SSIM over sliding 8x8 uniform windows (stride 1), stabilizers
/// C1=(k1*L)^2, C2=(k2*L)^2 with L=1. Window statistics are biased (divide
/// by n), matching the uniform-window SSIM variant.
inline double ssim(const ImageSample& ref, const ImageSample& test, int window = 8,
                   double k1 = 0.01, double k2 = 0.03, double L = 1.0) {
    const auto H = ref.pixels.rows(), W = ref.pixels.cols();
    require(H == test.pixels.rows() && W == test.pixels.cols(), "ssim: shape mismatch");
    require(H >= window && W >= window, "ssim: image smaller than window");

    const double C1 = (k1 * L) * (k1 * L);
    const double C2 = (k2 * L) * (k2 * L);
    const double n = static_cast<double>(window) * window;

    double total = 0.0;
    std::int64_t count = 0;
    for (Eigen::Index i = 0; i + window <= H; ++i) {
        for (Eigen::Index j = 0; j + window <= W; ++j) {
            const auto a = ref.pixels.block(i, j, window, window);
            const auto b = test.pixels.block(i, j, window, window);
            const double mx = a.sum() / n;
            const double my = b.sum() / n;
            const double vx = a.squaredNorm() / n - mx * mx;
            const double vy = b.squaredNorm() / n - my * my;
            const double cxy = a.cwiseProduct(b).sum() / n - mx * my;
            const double num = (2.0 * mx * my + C1) * (2.0 * cxy + C2);
            const double den = (mx * mx + my * my + C1) * (vx + vy + C2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

struct MetricRow {
    std::string method;
    std::string image_id;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double seconds = 0.0;
};

struct MetricAggregate {
    std::string method;
    std::int64_t count = 0;      // rows with finite PSNR
    std::int64_t inf_count = 0;  // identical-image rows, excluded from means
    double psnr_mean = 0.0;
    double psnr_std = 0.0;
    double ssim_mean = 0.0;
    double ssim_std = 0.0;
    double seconds_mean = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    std::vector<MetricAggregate> aggregates;
    std::string fingerprint;  // configuration fingerprint of the producing run
};

/// Group rows by method label and compute mean/std. Rows with infinite PSNR
/// are excluded from the PSNR mean and counted separately.
inline std::vector<MetricAggregate> aggregate(const std::vector<MetricRow>& rows) {
    require(!rows.empty(), "aggregate: empty input");
    std::vector<std::string> order;
    std::map<std::string, std::vector<const MetricRow*>> groups;
    for (const auto& r : rows) {
        if (!groups.count(r.method)) order.push_back(r.method);
        groups[r.method].push_back(&r);
    }
    std::vector<MetricAggregate> out;
    for (const auto& method : order) {
        const auto& g = groups[method];
        MetricAggregate a;
        a.method = method;
        std::vector<double> ps, ss;
        double sec = 0.0;
        for (const auto* r : g) {
            if (std::isinf(r->psnr_db)) {
                ++a.inf_count;
            } else {
                ps.push_back(r->psnr_db);
            }
            ss.push_back(r->ssim);
            sec += r->seconds;
        }
        a.count = static_cast<std::int64_t>(ps.size());
        auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
            if (v.empty()) {
                mean = sd = 0.0;
                return;
            }
            double s = 0.0;
            for (double x : v) s += x;
            mean = s / static_cast<double>(v.size());
            if (v.size() < 2) {
                sd = 0.0;
                return;
            }
            double q = 0.0;
            for (double x : v) q += (x - mean) * (x - mean);
            sd = std::sqrt(q / static_cast<double>(v.size() - 1));
        };
        mean_std(ps, a.psnr_mean, a.psnr_std);
        mean_std(ss, a.ssim_mean, a.ssim_std);
        a.seconds_mean = sec / static_cast<double>(g.size());
        out.push_back(a);
    }
    return out;
}

/// Deterministic metric report: per-image rows plus a summary block. Wall
/// times are written to a separate sidecar (see write_timing) so that the
/// metric file is byte-reproducible across runs.
inline void write_report(const MetricReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("write_report: cannot open " + path);
    f << std::setprecision(17);
    f << "# fingerprint=" << report.fingerprint << "\n";
    f << "method,image,psnr_db,ssim\n";
    for (const auto& r : report.rows) {
        f << r.method << ',' << r.image_id << ',';
        if (std::isinf(r.psnr_db))
            f << "inf";
        else
            f << r.psnr_db;
        f << ',' << r.ssim << "\n";
    }
    f << "# summary\n";
    f << "method,count,inf_count,psnr_mean,psnr_std,ssim_mean,ssim_std\n";
    for (const auto& a : report.aggregates)
        f << a.method << ',' << a.count << ',' << a.inf_count << ',' << a.psnr_mean << ','
          << a.psnr_std << ',' << a.ssim_mean << ',' << a.ssim_std << "\n";
}

inline void write_timing(const MetricReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("write_timing: cannot open " + path);
    f << std::setprecision(6);
    f << "method,image,seconds\n";
    for (const auto& r : report.rows)
        f << r.method << ',' << r.image_id << ',' << r.seconds << "\n";
}

}  // namespace lsspi
