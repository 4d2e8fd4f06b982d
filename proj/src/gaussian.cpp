#include "splat/gaussian.hpp"

#include <algorithm>
#include <cmath>

#include "splat/errors.hpp"
#include "splat/util.hpp"

namespace splat {

Eigen::Vector3d Gaussian3D::activated_scale() const {
    Eigen::Vector3d s;
    for (int i = 0; i < 3; ++i)
        s[i] = std::clamp(std::exp(log_scale[i]), kScaleMin, kScaleMax);
    return s;
}

double Gaussian3D::activated_opacity() const { return sigmoid(opacity_logit); }

Eigen::Matrix3d quat_to_rotmat(const Eigen::Vector4d& q) {
    const double n = q.norm();
    if (n <= 1e-8)
        throw invalid_parameter("quat_to_rotmat: near-zero-norm quaternion");
    const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Matrix3d covariance_from(const Gaussian3D& g) {
    const Eigen::Matrix3d r = quat_to_rotmat(g.rotation);
    const Eigen::Matrix3d m = r * g.activated_scale().asDiagonal();
    return m * m.transpose();
}

} // namespace splat
