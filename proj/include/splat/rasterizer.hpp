#pragma once

#include <Eigen/Core>
#include <memory>
#include <optional>
#include <vector>

#include "splat/camera.hpp"
#include "splat/gaussian.hpp"
#include "splat/image.hpp"

namespace splat {

struct RasterConfig {
    double near_plane = 0.01;
    double alpha_clamp = 0.999;            // max per-splat alpha
    double transmittance_cutoff = 1e-4;    // stop compositing below this T
    double alpha_min = 1e-6;               // contributions below this are skipped
    double dilation = 0.3;                 // px^2 isotropic low-pass added to cov2d
    int tile_size = 16;
};

/// Screen-space footprint of one projected Gaussian.
struct Splat2D {
    Eigen::Vector2d mean2d;    // pixels
    Eigen::Matrix2d cov2d;     // pixels^2, includes dilation
    double camera_depth = 0.0; // camera-frame z, > near plane
    Eigen::Vector3d color;
    double opacity = 0.0;      // activated, in (0,1)
    int source_index = -1;
    // derived, cached for compositing
    Eigen::Matrix2d cov_inv;
    double q_cut = 0.0;     // mahalanobis^2 beyond which alpha < alpha_min
    double radius_px = 0.0; // conservative pixel radius, sqrt(q_cut * lambda_max)
};

struct RasterRecord;

struct RenderOutput {
    ImageBuffer image;
    DepthBuffer depth;
    std::shared_ptr<const RasterRecord> record; // consumed by render_backward
};

/// Gradients with respect to the raw (pre-activation) Gaussian parameters.
struct SceneGrads {
    std::vector<Eigen::Vector3d> d_mean;
    std::vector<Eigen::Vector3d> d_log_scale;
    std::vector<Eigen::Vector4d> d_rotation;
    std::vector<double> d_opacity_logit;
    std::vector<Eigen::Vector3d> d_color;

    void resize(std::size_t n);
    void accumulate(const SceneGrads& other, double weight = 1.0);
};

/// EWA projection of one Gaussian; nullopt when the mean is behind the
/// near plane (culled, a normal outcome).
std::optional<Splat2D> project_gaussian(const Gaussian3D& g, const Camera& cam,
                                        const RasterConfig& cfg = {});

/// Tile-based forward render: front-to-back alpha compositing of
/// depth-sorted splats; depth output is the unnormalized alpha-weighted
/// camera depth; alpha map is 1 - final transmittance.
RenderOutput render(const GaussianScene& scene, const Camera& cam,
                    const Eigen::Vector3d& background, const RasterConfig& cfg = {});

/// Brute-force oracle: identical compositing, evaluated per pixel over the
/// full sorted splat list with no tiling or binning.
RenderOutput render_reference(const GaussianScene& scene, const Camera& cam,
                              const Eigen::Vector3d& background,
                              const RasterConfig& cfg = {});

/// Analytic reverse pass for L = <d_image, image> + <d_depth, depth>.
/// `fwd` must come from render/render_reference on the same scene, camera
/// and config, otherwise a contract_violation is thrown.
SceneGrads render_backward(const GaussianScene& scene, const Camera& cam,
                           const RenderOutput& fwd, const ImageBuffer& d_image,
                           const std::vector<double>& d_depth,
                           const RasterConfig& cfg = {});

} // namespace splat
