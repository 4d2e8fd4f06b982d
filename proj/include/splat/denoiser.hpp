#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splat/camera.hpp"
#include "splat/decoder.hpp"
#include "splat/image.hpp"
#include "splat/latent.hpp"
#include "splat/nn/blocks.hpp"
#include "splat/nn/params.hpp"
#include "splat/nn/tape.hpp"
#include "splat/util.hpp"

namespace splat {

/// Variance-preserving cosine schedule; alpha_bar has T+1 entries with
/// alpha_bar[0] = 1 exactly and a strict monotone decrease.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha_bar;
};

NoiseSchedule make_schedule(int T);

/// z_t = sqrt(alpha_bar[t]) * z_gt + sqrt(1 - alpha_bar[t]) * eps.
/// t = 0 is the exact identity.
LatentGrid add_noise(const LatentGrid& z_gt, int t, const LatentGrid& eps,
                     const NoiseSchedule& sched);

/// Seeded standard-normal grid with the same shape as `like`.
LatentGrid noise_like(const LatentGrid& like, std::uint64_t seed);

struct DenoiserConfig {
    int layers = 4;
    int width = 256;
    int heads = 4;
    int patch = 4;      // latent patch (channels = 3 * patch^2)
    int views = 16;
    int cond_dim = 64;  // conditioning token width
    int cond_patch = 8;
    int pose_freqs = 4;
    int timesteps = 50; // schedule T

    void validate() const;
};

/// One low-rank update for a named weight matrix: W_eff = W + scale * (B*A)^T
/// in this codebase's x*W convention (equivalently W_row + scale * B*A).
struct LoraAdapter {
    std::string target; // ParamStore name of the base matrix
    int rank = 4;
    double scale = 2.0; // alpha / rank
};

struct LoraConfig {
    std::vector<std::string> targets;
    int rank = 4;
    double alpha = 8.0;
};

/// All attention q/k/v/o projection matrices of the denoiser.
std::vector<std::string> default_lora_targets(const DenoiserConfig& cfg);

/// Builds the adapter store ("lora.<target>.A" seeded-random std 0.02,
/// "lora.<target>.B" zero) and freezes every base tensor. Throws on
/// unknown targets. The returned descriptors mirror cfg.targets.
std::vector<LoraAdapter> attach_lora(nn::ParamStore& base, nn::ParamStore& adapters,
                                     const LoraConfig& cfg, std::uint64_t seed);

/// Tape subgraph for every adapter's effective weight, keyed by target name.
nn::VarOverrides lora_overrides(nn::Tape& tape, const nn::BoundStore& base,
                                const nn::BoundStore& adapters,
                                const std::vector<LoraAdapter>& lora);

/// Folds the adapters into a copy of the base weights.
nn::ParamStore merge_lora(const nn::ParamStore& base, const nn::ParamStore& adapters,
                          const std::vector<LoraAdapter>& lora);

/// Toy multi-view denoiser: channel-concatenated [z_t || conditioning
/// latent] tokens with positional, pose, and sinusoidal-t embeddings,
/// cross-view self-attention layers with cross-attention to the
/// conditioning tokens, predicting the clean latents (x0 form).
class MvDenoiser {
public:
    MvDenoiser(const DenoiserConfig& cfg, std::uint64_t seed);
    MvDenoiser(const DenoiserConfig& cfg, nn::ParamStore store);

    const DenoiserConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    /// Records the denoise on the tape and returns the predicted clean
    /// latent tokens ((views*h*w) x channels). `overrides` carries
    /// adapter-patched weights (empty for the base model).
    nn::Var forward(nn::Tape& tape, const nn::BoundStore& bound,
                    const nn::VarOverrides& overrides, const LatentGrid& z_t,
                    const LatentGrid& cond_latent, const FeatureTokens& cond_tokens,
                    const std::vector<PoseEncoding>& poses, int t,
                    const NoiseSchedule& sched) const;

    /// Convenience host-side prediction.
    LatentGrid predict(const LatentGrid& z_t, const LatentGrid& cond_latent,
                       const FeatureTokens& cond_tokens,
                       const std::vector<PoseEncoding>& poses, int t,
                       const NoiseSchedule& sched,
                       const nn::ParamStore* adapters = nullptr,
                       const std::vector<LoraAdapter>* lora = nullptr) const;

    /// Deterministic sampler: from seeded z_T, repeatedly predict the clean
    /// latents and re-noise to the next lower t via the schedule identity.
    LatentGrid sample(const ImageBuffer& conditioning, const std::vector<Camera>& cams,
                      int steps, std::uint64_t seed,
                      const nn::ParamStore* adapters = nullptr,
                      const std::vector<LoraAdapter>* lora = nullptr) const;

private:
    DenoiserConfig cfg_;
    nn::ParamStore params_;
};

} // namespace splat
