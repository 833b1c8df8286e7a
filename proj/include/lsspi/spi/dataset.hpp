#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lsspi/core/types.hpp"

namespace lsspi {

inline bool is_supported_image_file(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    return ext == ".png" || ext == ".bmp";
}

/// Convert an 8-bit OpenCV image to a grayscale [0,1] matrix. RGB inputs are
/// reduced by the plain channel average.
inline Mat to_gray_unit(const cv::Mat& img) {
    cv::Mat gray;
    if (img.channels() == 1) {
        gray = img;
    } else {
        cv::Mat f;
        img.convertTo(f, CV_64F);
        std::vector<cv::Mat> ch;
        cv::split(f, ch);
        cv::Mat acc = cv::Mat::zeros(img.rows, img.cols, CV_64F);
        for (auto& c : ch) acc += c;
        acc /= static_cast<double>(ch.size());
        acc.convertTo(gray, CV_8U);
    }
    cv::Mat g64;
    gray.convertTo(g64, CV_64F, 1.0 / 255.0);
    Mat out(img.rows, img.cols);
    for (int i = 0; i < img.rows; ++i)
        for (int j = 0; j < img.cols; ++j) out(i, j) = g64.at<double>(i, j);
    return out;
}

/// Load every supported image under `path`, grayscale, resized to H x W,
/// scaled to [0,1]. Ordering is filename-lexicographic. Unreadable files are
/// skipped with a warning; an empty result is an error.
inline std::vector<ImageSample> ingest_dataset(const std::string& path, int H, int W) {
    namespace fs = std::filesystem;
    require(H > 0 && W > 0, "ingest_dataset: H and W must be positive");
    if (!fs::exists(path) || !fs::is_directory(path))
        throw IoError("ingest_dataset: not a directory: " + path);

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
        if (e.is_regular_file() && is_supported_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::vector<ImageSample> out;
    out.reserve(files.size());
    for (const auto& f : files) {
        cv::Mat img = cv::imread(f.string(), cv::IMREAD_UNCHANGED);
        if (img.empty()) {
            std::cerr << "warning: skipping unreadable image " << f.string() << "\n";
            continue;
        }
        Mat gray = to_gray_unit(img);
        if (gray.rows() != H || gray.cols() != W) {
            cv::Mat src(static_cast<int>(gray.rows()), static_cast<int>(gray.cols()), CV_64F);
            for (int i = 0; i < src.rows; ++i)
                for (int j = 0; j < src.cols; ++j) src.at<double>(i, j) = gray(i, j);
            cv::Mat dst;
            cv::resize(src, dst, cv::Size(W, H), 0, 0,
                       gray.rows() >= H ? cv::INTER_AREA : cv::INTER_LINEAR);
            gray.resize(H, W);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) gray(i, j) = std::clamp(dst.at<double>(i, j), 0.0, 1.0);
        }
        out.push_back(ImageSample{std::move(gray), f.filename().string()});
    }
    if (out.empty()) throw IoError("ingest_dataset: no readable images in " + path);
    return out;
}

/// Write a [0,1] grayscale matrix as an 8-bit PNG.
inline void save_image_png(const Mat& pixels, const std::string& path) {
    cv::Mat img(static_cast<int>(pixels.rows()), static_cast<int>(pixels.cols()), CV_8U);
    for (int i = 0; i < img.rows; ++i)
        for (int j = 0; j < img.cols; ++j) {
            const double v = std::clamp(pixels(i, j), 0.0, 1.0);
            img.at<std::uint8_t>(i, j) = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    if (!cv::imwrite(path, img)) throw IoError("save_image_png: cannot write " + path);
}

}  // namespace lsspi
