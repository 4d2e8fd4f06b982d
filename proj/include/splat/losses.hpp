#pragma once

#include <vector>

#include "splat/image.hpp"
#include "splat/latent.hpp"

namespace splat {

struct LossConfig {
    double lambda_depth = 0.2;
    double lambda_3d = 1.5;
};

/// Mean squared error over every pixel channel of every buffer (objects and
/// views enter as more buffers, keeping the magnitude resolution-independent).
double rgb_loss(const std::vector<ImageBuffer>& outputs,
                const std::vector<ImageBuffer>& targets);

/// Same value as rgb_loss; also writes d(loss)/d(output pixel).
double rgb_loss_grad(const std::vector<ImageBuffer>& outputs,
                     const std::vector<ImageBuffer>& targets,
                     std::vector<ImageBuffer>& d_outputs);

/// Masked mean squared depth difference; 0 when every mask is empty.
double depth_loss(const std::vector<DepthBuffer>& outputs,
                  const std::vector<DepthBuffer>& targets,
                  const std::vector<Mask>& masks);

double depth_loss_grad(const std::vector<DepthBuffer>& outputs,
                       const std::vector<DepthBuffer>& targets,
                       const std::vector<Mask>& masks,
                       std::vector<std::vector<double>>& d_depth);

/// rgb + lambda_depth * depth
double loss_3d(double rgb_term, double depth_term, const LossConfig& cfg);

/// Mean squared error over all latent entries.
double loss_2d(const LatentGrid& z_hat, const LatentGrid& z_gt);
double loss_2d_grad(const LatentGrid& z_hat, const LatentGrid& z_gt, LatentGrid& d);

/// l2d + lambda_3d * l3d
double loss_distill(double l2d, double l3d, const LossConfig& cfg);

} // namespace splat
