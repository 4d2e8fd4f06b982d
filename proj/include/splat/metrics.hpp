#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "splat/gaussian.hpp"
#include "splat/image.hpp"

namespace splat {

struct PointCloud {
    std::vector<Eigen::Vector3d> points;

    std::size_t size() const { return points.size(); }
};

/// 10*log10(peak^2 / MSE) with peak 1.0, capped at 99 dB for MSE < 1e-10.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

/// Single-scale SSIM, 11x11 Gaussian window sigma 1.5, C1=0.01^2, C2=0.03^2,
/// averaged over channels and all fully-valid window positions.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

/// Draw n points: pick Gaussians with probability proportional to
/// opacity * volume (volume = product of activated scales), then sample
/// from the chosen Gaussian's normal distribution.
PointCloud sample_points(const GaussianScene& scene, int n, std::uint64_t seed);

/// 0.5 * (mean nearest-neighbor Euclidean distance a->b + b->a).
double chamfer(const PointCloud& a, const PointCloud& b);

/// Harmonic mean of precision (a within tau of b) and recall (b within tau
/// of a); 0 when both vanish.
double fscore(const PointCloud& a, const PointCloud& b, double tau);

/// Occupancy IoU on a resolution^3 voxel grid spanning [lo, hi]^3 per axis.
double iou_voxel(const PointCloud& a, const PointCloud& b, int resolution,
                 const Eigen::Vector3d& lo, const Eigen::Vector3d& hi);

/// For every point of `queries`, the Euclidean distance to its nearest
/// neighbor in `targets` (exact, kd-tree backed).
std::vector<double> nn_distances(const PointCloud& queries,
                                 const PointCloud& targets);

/// O(n^2) reference for nn_distances, kept as the oracle in tests.
std::vector<double> nn_distances_bruteforce(const PointCloud& queries,
                                            const PointCloud& targets);

} // namespace splat
