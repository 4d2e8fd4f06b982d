#pragma once

#include <cmath>
#include <functional>

#include "doctest.h"
#include "splat/nn/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b, double floor = 1e-4) {
    return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

// Central finite differences of eval() w.r.t. every entry of param,
// compared against the analytic gradient.
inline void check_grad_fd(const std::function<double()>& eval,
                          splat::nn::Tensor& param,
                          const splat::nn::Tensor& analytic, double h = 1e-5,
                          double tol = 1e-3) {
    REQUIRE(analytic.rows == param.rows);
    REQUIRE(analytic.cols == param.cols);
    for (std::int64_t i = 0; i < param.size(); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const double saved = param.data[idx];
        param.data[idx] = saved + h;
        const double fp = eval();
        param.data[idx] = saved - h;
        const double fm = eval();
        param.data[idx] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        INFO("entry ", i, ": fd=", fd, " analytic=", analytic.data[idx]);
        CHECK(rel_err(fd, analytic.data[idx]) <= tol);
    }
}

} // namespace testutil
