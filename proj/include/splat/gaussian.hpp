#pragma once

#include <Eigen/Core>
#include <vector>

namespace splat {

/// Scale clamp applied after exp(), keeps covariances non-degenerate.
constexpr double kScaleMin = 1e-4;
constexpr double kScaleMax = 1e1;

/// One anisotropic 3D Gaussian. Scale is stored in log-space and opacity
/// in logit-space so optimizer steps stay inside the valid domain; the
/// quaternion is raw and normalized on use.
struct Gaussian3D {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
    Eigen::Vector4d rotation = Eigen::Vector4d(1, 0, 0, 0); // (w, x, y, z), raw
    double opacity_logit = 0.0;
    Eigen::Vector3d color = Eigen::Vector3d(0.5, 0.5, 0.5); // RGB in [0,1]

    /// exp(log_scale) clamped to [kScaleMin, kScaleMax].
    Eigen::Vector3d activated_scale() const;
    double activated_opacity() const;
};

struct GaussianScene {
    std::vector<Gaussian3D> gaussians;
    double bound_radius = 1.0;

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }
};

/// Rotation matrix from a raw quaternion (w, x, y, z); the quaternion is
/// normalized internally. Throws invalid_parameter when ||q|| <= 1e-8.
Eigen::Matrix3d quat_to_rotmat(const Eigen::Vector4d& q);

/// Sigma = R * diag(s)^2 * R^T with s the activated scale.
Eigen::Matrix3d covariance_from(const Gaussian3D& g);

} // namespace splat
