#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsspi {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Error thrown when an operation's preconditions are violated.
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Error thrown when numerics go non-finite or an internal contract breaks.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Error thrown on malformed or unreadable files.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// Flatten an H x W matrix row-major into a length H*W vector.
inline Vec flatten_rowmajor(const Mat& m) {
    Vec out(m.size());
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[k++] = m(i, j);
    return out;
}

/// Inverse of flatten_rowmajor.
inline Mat unflatten_rowmajor(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
    if (v.size() != rows * cols) throw InvalidArgument("unflatten_rowmajor: size mismatch");
    Mat out(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = v[k++];
    return out;
}

/// A grayscale image with pixel values in [0,1].
struct ImageSample {
    Mat pixels;      // H x W
    std::string id;

    Eigen::Index height() const { return pixels.rows(); }
    Eigen::Index width() const { return pixels.cols(); }
};

}  // namespace lsspi
