#include "splat/losses.hpp"

#include "splat/errors.hpp"

namespace splat {

namespace {

void check_weights(const LossConfig& cfg) {
    if (cfg.lambda_depth < 0.0 || cfg.lambda_3d < 0.0)
        throw invalid_parameter("loss weights must be nonnegative");
}

std::size_t total_pixels(const std::vector<ImageBuffer>& a,
                         const std::vector<ImageBuffer>& b) {
    if (a.size() != b.size()) throw shape_error("rgb_loss: buffer counts differ");
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].height != b[i].height || a[i].width != b[i].width)
            throw shape_error("rgb_loss: image shapes differ");
        n += a[i].pixels.size();
    }
    return n;
}

} // namespace

Mask coverage_mask(const DepthBuffer& gt, double threshold) {
    Mask m(gt.height, gt.width);
    for (std::size_t i = 0; i < gt.alpha.size(); ++i)
        m.on[i] = gt.alpha[i] > threshold ? 1 : 0;
    return m;
}

double rgb_loss(const std::vector<ImageBuffer>& outputs,
                const std::vector<ImageBuffer>& targets) {
    const std::size_t n = total_pixels(outputs, targets);
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i)
        for (std::size_t k = 0; k < outputs[i].pixels.size(); ++k) {
            const double d = outputs[i].pixels[k] - targets[i].pixels[k];
            sum += d * d;
        }
    return sum / static_cast<double>(n);
}

double rgb_loss_grad(const std::vector<ImageBuffer>& outputs,
                     const std::vector<ImageBuffer>& targets,
                     std::vector<ImageBuffer>& d_outputs) {
    const std::size_t n = total_pixels(outputs, targets);
    d_outputs.clear();
    if (n == 0) return 0.0;
    double sum = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        ImageBuffer g(outputs[i].height, outputs[i].width);
        for (std::size_t k = 0; k < outputs[i].pixels.size(); ++k) {
            const double d = outputs[i].pixels[k] - targets[i].pixels[k];
            sum += d * d;
            g.pixels[k] = 2.0 * d * inv_n;
        }
        d_outputs.push_back(std::move(g));
    }
    return sum / static_cast<double>(n);
}

namespace {

std::size_t masked_count(const std::vector<DepthBuffer>& outputs,
                         const std::vector<DepthBuffer>& targets,
                         const std::vector<Mask>& masks) {
    if (outputs.size() != targets.size() || outputs.size() != masks.size())
        throw shape_error("depth_loss: buffer counts differ");
    std::size_t n = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        if (outputs[i].depth.size() != targets[i].depth.size() ||
            outputs[i].depth.size() != masks[i].on.size())
            throw shape_error("depth_loss: depth shapes differ");
        n += masks[i].count();
    }
    return n;
}

} // namespace

double depth_loss(const std::vector<DepthBuffer>& outputs,
                  const std::vector<DepthBuffer>& targets,
                  const std::vector<Mask>& masks) {
    const std::size_t n = masked_count(outputs, targets, masks);
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i)
        for (std::size_t k = 0; k < outputs[i].depth.size(); ++k)
            if (masks[i].on[k]) {
                const double d = outputs[i].depth[k] - targets[i].depth[k];
                sum += d * d;
            }
    return sum / static_cast<double>(n);
}

double depth_loss_grad(const std::vector<DepthBuffer>& outputs,
                       const std::vector<DepthBuffer>& targets,
                       const std::vector<Mask>& masks,
                       std::vector<std::vector<double>>& d_depth) {
    const std::size_t n = masked_count(outputs, targets, masks);
    d_depth.assign(outputs.size(), {});
    for (std::size_t i = 0; i < outputs.size(); ++i)
        d_depth[i].assign(outputs[i].depth.size(), 0.0);
    if (n == 0) return 0.0;
    double sum = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < outputs.size(); ++i)
        for (std::size_t k = 0; k < outputs[i].depth.size(); ++k)
            if (masks[i].on[k]) {
                const double d = outputs[i].depth[k] - targets[i].depth[k];
                sum += d * d;
                d_depth[i][k] = 2.0 * d * inv_n;
            }
    return sum / static_cast<double>(n);
}

double loss_3d(double rgb_term, double depth_term, const LossConfig& cfg) {
    check_weights(cfg);
    return rgb_term + cfg.lambda_depth * depth_term;
}

double loss_2d(const LatentGrid& z_hat, const LatentGrid& z_gt) {
    if (z_hat.size() != z_gt.size() || z_hat.views != z_gt.views)
        throw shape_error("loss_2d: latent shapes differ");
    if (z_hat.size() == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < z_hat.data.size(); ++i) {
        const double d = z_hat.data[i] - z_gt.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(z_hat.data.size());
}

double loss_2d_grad(const LatentGrid& z_hat, const LatentGrid& z_gt, LatentGrid& d) {
    if (z_hat.size() != z_gt.size() || z_hat.views != z_gt.views)
        throw shape_error("loss_2d: latent shapes differ");
    d = LatentGrid(z_hat.views, z_hat.h, z_hat.w, z_hat.c, z_hat.patch);
    if (z_hat.size() == 0) return 0.0;
    double sum = 0.0;
    const double inv_n = 1.0 / static_cast<double>(z_hat.data.size());
    for (std::size_t i = 0; i < z_hat.data.size(); ++i) {
        const double diff = z_hat.data[i] - z_gt.data[i];
        sum += diff * diff;
        d.data[i] = 2.0 * diff * inv_n;
    }
    return sum / static_cast<double>(z_hat.data.size());
}

double loss_distill(double l2d, double l3d, const LossConfig& cfg) {
    check_weights(cfg);
    return l2d + cfg.lambda_3d * l3d;
}

} // namespace splat
