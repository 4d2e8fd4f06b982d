#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splat/decoder.hpp"
#include "splat/denoiser.hpp"
#include "splat/losses.hpp"
#include "splat/nn/adamw.hpp"
#include "splat/synthetic.hpp"

namespace splat {

/// Everything one run needs, serializable as a single JSON file. The
/// effective config is echoed into out_dir so logs never depend on
/// defaults hidden in code.
struct RunConfig {
    std::string out_dir = "out";
    std::string data_dir = "data";     // training set (manifest.json inside)

    DatasetConfig dataset;
    DecoderConfig decoder;
    DenoiserConfig denoiser;
    LossConfig loss;
    nn::AdamWConfig optim;             // lr 1e-5 unless a preset overrides

    int stage1_steps = 2000;
    int stage1_batch = 8;
    std::uint64_t stage1_seed = 1;

    int stage2_steps = 1000;
    int stage2_batch = 4;
    std::uint64_t stage2_seed = 2;
    int holdout = 0;                   // trailing objects reserved for eval
    LoraConfig lora;                   // empty targets -> all attention mats

    int sample_steps = 8;
    std::uint64_t sample_seed = 3;
    double infer_elevation_deg = 12.5; // orbit elevation for single-image runs
    std::uint64_t point_seed = 4;      // point sampling for geometry metrics

    void validate() const;
};

/// Named baselines: "full" (full-scale numbers kept for reference),
/// "overfit" (single object), "toy-distill" (32 train + 8 held-out),
/// "micro" (seconds-long smoke configuration).
RunConfig preset(const std::string& name);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

void save_lora_meta(const LoraConfig& cfg, const std::string& base_path);
LoraConfig load_lora_meta(const std::string& base_path);

struct Stage1Result {
    double final_loss = 0.0;
    double train_psnr = 0.0; // over every training view, post training
    double depth_mae = 0.0;  // masked, same views
    double extent = 0.0;     // ground-truth scene diameter the MAE is judged by
    std::string checkpoint;  // decoder store base path
};

/// Stage one: decoder regression onto rendered ground truth. Writes
/// <out_dir>/decoder.{bin,json}, stage1_log.jsonl, stage1_result.json and
/// the echoed config. Aborts with numerical_error on a non-finite loss.
Stage1Result train_decoder(const RunConfig& cfg);

struct Stage2Result {
    double init_l2d = 0.0;      // step-0 latent loss with adapters attached
    double init_l2d_base = 0.0; // same batch through the unpatched denoiser
    double init_holdout_l3d = 0.0;
    double final_holdout_l3d = 0.0;
    double init_holdout_chamfer = 0.0;
    double final_holdout_chamfer = 0.0;
    std::uint64_t decoder_checksum = 0;
    std::uint64_t denoiser_checksum = 0;
    std::string checkpoint; // adapter store base path
};

/// Stage two: LoRA distillation against the frozen decoder. The denoiser
/// checkpoint stands in for pretrained weights; an empty path means the
/// seeded default (stage2_seed). Frozen checksums are re-verified every
/// 1000 steps and at exit (contract_violation on drift). Writes
/// <out_dir>/adapters.{bin,json} + adapters.lora.json + stage2_log.jsonl.
Stage2Result distill(const RunConfig& cfg, const std::string& decoder_ckpt,
                     const std::string& denoiser_ckpt = "");

struct InferResult {
    GaussianScene scene;
    std::vector<Camera> cameras;
    std::vector<ImageBuffer> renders; // one per generated view
};

/// Single conditioning image -> sampled latents -> decoded scene -> renders.
/// Cameras are the input-view orbit poses at infer_elevation_deg.
InferResult infer(const RunConfig& cfg, const ImageBuffer& conditioning,
                  const std::string& decoder_ckpt,
                  const std::string& denoiser_ckpt,
                  const std::string& adapters_ckpt = "");

struct ViewScore {
    int view = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<ViewScore> views;
    double psnr = 0.0; // view means
    double ssim = 0.0;
    double chamfer = 0.0;
    double fscore = 0.0;
    double iou = 0.0;
    int points = 4096;
};

/// Renders the scene at the manifest's target views of one object (eval
/// sets skip the conditioning view) and scores appearance plus geometry
/// against the procedural ground truth. Images are compared after 8-bit
/// quantization, i.e. exactly what the PNG artifacts hold.
EvalReport evaluate_scene(const GaussianScene& scene, const DatasetManifest& m,
                          std::size_t object_index, std::uint64_t point_seed);

void write_eval_report(const EvalReport& report, const std::string& path);

struct AblateRow {
    int n_views = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double chamfer = 0.0;
};

/// Train/distill/evaluate once per frame count, sharing the dataset seed.
/// Writes per-N artifacts under <out_dir>/n<N>/ and a combined report.
std::vector<AblateRow> ablate_frames(const RunConfig& cfg,
                                     const std::vector<int>& n_values);

} // namespace splat
