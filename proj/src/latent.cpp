#include "splat/latent.hpp"

#include <algorithm>
#include <cmath>

#include "splat/errors.hpp"

namespace splat {

namespace {

// The affine map 2x-1 cannot carry all mantissa bits of pixels below 0.25,
// so a plain inverse is off by a few ulps for 8-bit-born values (k/255).
// Pixels in this pipeline are PNG-backed; values that land within float
// noise of the 8-bit grid are snapped back onto it, which makes the round
// trip exact for every image the codec actually sees while leaving
// genuinely continuous values (distance >= 0.5/255 from the grid) alone.
double snap_u8(double x) {
    const double scaled = x * 255.0;
    const double k = std::nearbyint(scaled);
    if (std::abs(scaled - k) < 1e-9) return k / 255.0;
    return x;
}

} // namespace

nn::Tensor LatentGrid::tokens() const {
    nn::Tensor t(static_cast<std::int64_t>(views) * h * w, c);
    std::copy(data.begin(), data.end(), t.data.begin());
    return t;
}

LatentGrid LatentGrid::from_tokens(const nn::Tensor& t, int views, int h, int w,
                                   int patch) {
    if (t.rows != static_cast<std::int64_t>(views) * h * w)
        throw shape_error("from_tokens: row count != views*h*w");
    LatentGrid z(views, h, w, static_cast<int>(t.cols), patch);
    std::copy(t.data.begin(), t.data.end(), z.data.begin());
    return z;
}

LatentGrid encode_views(const std::vector<ImageBuffer>& images, int patch) {
    if (images.empty()) throw invalid_parameter("encode_views: no images");
    if (patch < 1) throw invalid_parameter("encode_views: patch must be positive");
    const int height = images[0].height, width = images[0].width;
    if (height % patch != 0 || width % patch != 0)
        throw shape_error("encode_views: resolution not divisible by patch");
    for (const auto& img : images)
        if (img.height != height || img.width != width)
            throw shape_error("encode_views: images differ in resolution");

    LatentGrid z(static_cast<int>(images.size()), height / patch, width / patch,
                 3 * patch * patch, patch);
    for (int v = 0; v < z.views; ++v)
        for (int r = 0; r < height; ++r)
            for (int col = 0; col < width; ++col)
                for (int ch = 0; ch < 3; ++ch) {
                    const int cell_ch = ((r % patch) * patch + (col % patch)) * 3 + ch;
                    z.at(v, r / patch, col / patch, cell_ch) =
                        2.0 * images[static_cast<std::size_t>(v)].at(r, col, ch) - 1.0;
                }
    return z;
}

std::vector<ImageBuffer> decode_latents(const LatentGrid& z) {
    if (z.c != 3 * z.patch * z.patch)
        throw shape_error("decode_latents: channel count != 3*patch^2");
    std::vector<ImageBuffer> images;
    images.reserve(static_cast<std::size_t>(z.views));
    const int height = z.h * z.patch, width = z.w * z.patch;
    for (int v = 0; v < z.views; ++v) {
        ImageBuffer img(height, width);
        for (int r = 0; r < height; ++r)
            for (int col = 0; col < width; ++col)
                for (int ch = 0; ch < 3; ++ch) {
                    const int cell_ch =
                        ((r % z.patch) * z.patch + (col % z.patch)) * 3 + ch;
                    const double x =
                        0.5 * (z.at(v, r / z.patch, col / z.patch, cell_ch) + 1.0);
                    img.at(r, col, ch) = snap_u8(std::clamp(x, 0.0, 1.0));
                }
        images.push_back(std::move(img));
    }
    return images;
}

} // namespace splat
