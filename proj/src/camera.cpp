#include "splat/camera.hpp"

#include <Eigen/Geometry>
#include <cmath>

#include "splat/errors.hpp"
#include "splat/util.hpp"

namespace splat {

std::pair<Eigen::Vector3d, Eigen::Vector3d> Camera::pixel_ray(double u, double v) const {
    const double cx = width * 0.5, cy = height * 0.5;
    Eigen::Vector3d dir_cam((u - cx) / focal, (v - cy) / focal, 1.0);
    Eigen::Vector3d dir = rotation.transpose() * dir_cam;
    dir.normalize();
    return {center(), dir};
}

double focal_from_fov(double fov_y, int height) {
    return 0.5 * height / std::tan(0.5 * fov_y);
}

Camera make_orbit_camera(double azimuth, double elevation, double radius,
                         double focal, int resolution) {
    if (radius <= 0.0) throw invalid_parameter("make_orbit_camera: radius must be > 0");
    if (std::abs(std::cos(elevation)) < 1e-9)
        throw invalid_parameter("make_orbit_camera: elevation too close to a pole");

    Camera c;
    c.azimuth = azimuth;
    c.elevation = elevation;
    c.radius = radius;
    c.focal = focal;
    c.width = resolution;
    c.height = resolution;

    const Eigen::Vector3d center =
        radius * Eigen::Vector3d(std::cos(elevation) * std::cos(azimuth),
                                 std::cos(elevation) * std::sin(azimuth),
                                 std::sin(elevation));
    const Eigen::Vector3d forward = (-center).normalized();
    const Eigen::Vector3d right = forward.cross(Eigen::Vector3d(0, 0, 1)).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    c.rotation.row(0) = right;
    c.rotation.row(1) = down;
    c.rotation.row(2) = forward;
    c.translation = -c.rotation * center;
    return c;
}

std::vector<Camera> make_orbit_cameras(int count, double elevation, double radius,
                                       double focal, int resolution) {
    if (count < 1) throw invalid_parameter("make_orbit_cameras: count must be >= 1");
    std::vector<Camera> cams;
    cams.reserve(count);
    for (int i = 0; i < count; ++i)
        cams.push_back(make_orbit_camera(2.0 * kPi * i / count, elevation, radius,
                                         focal, resolution));
    return cams;
}

std::vector<int> select_input_views(int total, int n) {
    if (n < 1 || n > total)
        throw invalid_parameter("select_input_views: need 1 <= n <= total");
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i)
        idx[i] = static_cast<int>(static_cast<std::int64_t>(i) * total / n);
    return idx;
}

PoseEncoding encode_pose(const Camera& c, int k) {
    if (k < 1) throw invalid_parameter("encode_pose: k must be >= 1");
    PoseEncoding e;
    e.reserve(4 * static_cast<std::size_t>(k));
    for (double angle : {c.azimuth, c.elevation}) {
        double f = 1.0;
        for (int j = 0; j < k; ++j) {
            e.push_back(std::sin(f * angle));
            e.push_back(std::cos(f * angle));
            f *= 2.0;
        }
    }
    return e;
}

} // namespace splat
