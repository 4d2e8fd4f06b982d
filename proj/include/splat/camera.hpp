#pragma once

#include <Eigen/Core>
#include <vector>

namespace splat {

/// Pinhole orbit camera. Convention: x_cam = rotation * x_world + translation,
/// camera x right, y down, z forward; principal point at the image center;
/// world up-axis is +z and elevation is measured from the equatorial plane.
struct Camera {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity(); // world-to-camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double focal = 1.0; // pixels
    int width = 0;
    int height = 0;
    double azimuth = 0.0;   // radians
    double elevation = 0.0; // radians
    double radius = 1.0;    // world units

    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

    /// World-space ray through image point (u, v) in pixel coordinates.
    /// Returns {origin, unit direction}.
    std::pair<Eigen::Vector3d, Eigen::Vector3d> pixel_ray(double u, double v) const;
};

/// 4K-vector: for each angle in {azimuth, elevation}, sin(2^k a), cos(2^k a)
/// for k = 0..K-1.
using PoseEncoding = std::vector<double>;

/// focal length in pixels for a vertical field of view (radians).
double focal_from_fov(double fov_y, int height);

/// One orbit camera at the given azimuth/elevation (radians), `radius`
/// from the origin, looking at the origin with world up-axis +z.
Camera make_orbit_camera(double azimuth, double elevation, double radius,
                         double focal, int resolution);

/// `count` cameras on an orbit: azimuth 2*pi*i/count, fixed elevation,
/// all at `radius` from the origin, looking at the origin.
std::vector<Camera> make_orbit_cameras(int count, double elevation, double radius,
                                       double focal, int resolution);

/// Regular-interval selection: indices floor(i*total/n) for i = 0..n-1.
std::vector<int> select_input_views(int total, int n);

PoseEncoding encode_pose(const Camera& c, int k);

} // namespace splat
