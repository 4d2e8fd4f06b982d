#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "splat/errors.hpp"
#include "splat/util.hpp"

namespace splat::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major 2D tensor (rows x cols). Vectors are 1 x n.
struct Tensor {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::int64_t r, std::int64_t c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r * c), fill) {}

    static Tensor zeros(std::int64_t r, std::int64_t c) { return Tensor(r, c); }

    static Tensor randn(std::int64_t r, std::int64_t c, double stddev, RngStream& rng) {
        Tensor t(r, c);
        for (auto& v : t.data) v = stddev * rng.gaussian();
        return t;
    }

    static Tensor trunc_normal(std::int64_t r, std::int64_t c, double stddev,
                               RngStream& rng) {
        Tensor t(r, c);
        for (auto& v : t.data) v = rng.trunc_normal(stddev);
        return t;
    }

    std::int64_t size() const { return rows * cols; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    double& at(std::int64_t r, std::int64_t c) {
        return data[static_cast<std::size_t>(r * cols + c)];
    }
    double at(std::int64_t r, std::int64_t c) const {
        return data[static_cast<std::size_t>(r * cols + c)];
    }

    Eigen::Map<RowMat> map() { return {data.data(), rows, cols}; }
    Eigen::Map<const RowMat> map() const { return {data.data(), rows, cols}; }
};

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const std::string& what) {
    if (!a.same_shape(b)) throw shape_error(what + ": shape mismatch");
}

} // namespace splat::nn
