#pragma once

#include <cstdint>
#include <vector>

namespace splat {

/// H x W x 3 image, values in [0,1], row-major (row, col, channel).
struct ImageBuffer {
    int height = 0;
    int width = 0;
    std::vector<double> pixels; // size height*width*3

    ImageBuffer() = default;
    ImageBuffer(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    double& at(int r, int c, int ch) {
        return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
    }
    double at(int r, int c, int ch) const {
        return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
    }
};

/// Rendered depth (camera-frame distance, alpha-weighted) plus the
/// accumulated opacity map.
struct DepthBuffer {
    int height = 0;
    int width = 0;
    std::vector<double> depth; // size height*width
    std::vector<double> alpha; // size height*width, in [0,1]

    DepthBuffer() = default;
    DepthBuffer(int h, int w)
        : height(h), width(w),
          depth(static_cast<std::size_t>(h) * w, 0.0),
          alpha(static_cast<std::size_t>(h) * w, 0.0) {}

    double& depth_at(int r, int c) { return depth[static_cast<std::size_t>(r) * width + c]; }
    double depth_at(int r, int c) const { return depth[static_cast<std::size_t>(r) * width + c]; }
    double& alpha_at(int r, int c) { return alpha[static_cast<std::size_t>(r) * width + c]; }
    double alpha_at(int r, int c) const { return alpha[static_cast<std::size_t>(r) * width + c]; }
};

/// Binary pixel mask (GT-coverage) used by the masked depth loss.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> on; // size height*width

    Mask() = default;
    Mask(int h, int w) : height(h), width(w), on(static_cast<std::size_t>(h) * w, 0) {}

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : on) n += v ? 1 : 0;
        return n;
    }
};

/// mask = pixels where the GT alpha exceeds `threshold`.
Mask coverage_mask(const DepthBuffer& gt, double threshold = 0.5);

} // namespace splat
