#pragma once

#include <vector>

#include "splat/image.hpp"
#include "splat/nn/tensor.hpp"

namespace splat {

/// Multi-view latent block: `views` grids of h x w cells with c channels,
/// produced by a lossless space-to-depth codec (c = 3 * patch^2). Values
/// live in [-1, 1] for in-range images.
struct LatentGrid {
    int views = 0;
    int h = 0;
    int w = 0;
    int c = 0;
    int patch = 0;
    std::vector<double> data; // views * h * w * c, row-major per view

    LatentGrid() = default;
    LatentGrid(int views_, int h_, int w_, int c_, int patch_)
        : views(views_), h(h_), w(w_), c(c_), patch(patch_),
          data(static_cast<std::size_t>(views_) * h_ * w_ * c_, 0.0) {}

    double& at(int v, int r, int col, int ch) {
        return data[((static_cast<std::size_t>(v) * h + r) * w + col) * c + ch];
    }
    double at(int v, int r, int col, int ch) const {
        return data[((static_cast<std::size_t>(v) * h + r) * w + col) * c + ch];
    }

    std::size_t size() const { return data.size(); }

    /// (views*h*w) x c token matrix sharing the same raster order.
    nn::Tensor tokens() const;
    static LatentGrid from_tokens(const nn::Tensor& t, int views, int h, int w,
                                  int patch);
};

/// Space-to-depth encode: pixel (R, C, ch) of view v maps to cell
/// (R/p, C/p), channel (dy*p + dx)*3 + ch with dy = R%p, dx = C%p, then
/// x -> 2x - 1. Lossless.
LatentGrid encode_views(const std::vector<ImageBuffer>& images, int patch);

/// Exact inverse of encode_views; output pixels clamped to [0, 1].
std::vector<ImageBuffer> decode_latents(const LatentGrid& z);

} // namespace splat
