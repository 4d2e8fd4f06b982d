#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "splat/camera.hpp"
#include "splat/gaussian.hpp"
#include "splat/image.hpp"
#include "splat/latent.hpp"
#include "splat/nn/blocks.hpp"
#include "splat/nn/params.hpp"
#include "splat/nn/tape.hpp"
#include "splat/rasterizer.hpp"

namespace splat {

enum class FeatureKind { conditioning, trunk };

/// Token matrix with a provenance tag so conditioning features cannot be
/// fed where trunk features are expected.
struct FeatureTokens {
    nn::Tensor tokens; // M x D
    FeatureKind kind = FeatureKind::conditioning;
};

struct DecoderConfig {
    int layers = 4;      // trunk depth
    int width = 256;     // trunk token width
    int heads = 4;
    int upsample = 2;    // total pixel-shuffle factor, power of two
    int patch = 4;       // latent patch (latent channels = 3 * patch^2)
    int views = 16;
    int cond_dim = 64;   // conditioning token width
    int cond_patch = 8;  // conditioning patch size
    int pose_freqs = 4;
    double near = 0.5;
    double far = 3.5;

    int shuffle_steps() const; // log2(upsample)
    int head_width() const;    // width / 4^shuffle_steps
    void validate() const;
};

/// Seed of the frozen conditioning extractor; a constant so the extractor
/// is the same function in every process.
constexpr std::uint64_t kCondFeatureSeed = 0x51a7c0defeedf00dull;

/// Frozen patch embedder: non-overlapping patches through a fixed seeded
/// random projection, plus 2D sin/cos positions. Deterministic across calls.
FeatureTokens extract_condition_features(const ImageBuffer& image, int patch,
                                         int dim,
                                         std::uint64_t seed = kCondFeatureSeed);

/// Fixed 2D transformer positions for an h x w grid, dim divisible by 4:
/// first half encodes the row, second half the column.
nn::Tensor posenc_2d(int h, int w, int dim);

struct Ray {
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();
};

/// Raw head channels -> one Gaussian anchored on the pixel ray:
/// depth = near + sigmoid(raw0) * (far - near), mean = origin + depth * dir,
/// log_scale = clamp(raw1..3), rotation = normalize(raw4..7 + (1,0,0,0)),
/// opacity_logit = raw8, color = sigmoid(raw9..11); raw12..13 reserved.
Gaussian3D head_activate(const double* raw, const Ray& ray, double near,
                         double far);

/// Chain rule of head_activate: per-Gaussian scene gradients back to the
/// 14 raw channels (rows matching `raw`).
nn::Tensor head_backward(const SceneGrads& g, const nn::Tensor& raw,
                         const std::vector<Ray>& rays, double near, double far);

GaussianScene scene_from_raw(const nn::Tensor& raw, const std::vector<Ray>& rays,
                             double near, double far);

struct DecoderForward {
    nn::Var raw;           // (views * grid_h * grid_w) x 14
    std::vector<Ray> rays; // one per raw row
    GaussianScene scene;
};

/// Multi-view latents -> explicit Gaussian scene. Trunk layers run joint
/// self-attention over all views' tokens, cross-attention to the
/// conditioning tokens, and an MLP; the upsampler alternates pixel-shuffle
/// with a transformer layer; a linear head emits 14 channels per upsampled
/// pixel which head_activate turns into Gaussians along the pixel rays.
class GsDecoder {
public:
    GsDecoder(const DecoderConfig& cfg, std::uint64_t seed);
    GsDecoder(const DecoderConfig& cfg, nn::ParamStore store);

    const DecoderConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    /// Records the decode on the caller's tape. `z_tokens` is the
    /// (views*h*w) x (3*patch^2) latent token matrix (LatentGrid::tokens());
    /// it may be any tape var so upstream networks can train through the
    /// decode. `bound` must wrap params() on the same tape.
    DecoderForward forward(nn::Tape& tape, const nn::BoundStore& bound,
                           nn::Var z_tokens, int latent_h, int latent_w,
                           const FeatureTokens& cond,
                           const std::vector<Camera>& cams) const;

    /// Convenience non-training decode.
    GaussianScene decode(const LatentGrid& z, const FeatureTokens& cond,
                         const std::vector<Camera>& cams) const;

private:
    DecoderConfig cfg_;
    nn::ParamStore params_;
};

} // namespace splat
