#include "splat/denoiser.hpp"

#include <cmath>

#include "splat/errors.hpp"

namespace splat {

NoiseSchedule make_schedule(int T) {
    if (T < 1) throw invalid_parameter("make_schedule: T must be >= 1");
    const double s = 0.008;
    const auto f = [&](double t) {
        const double arg = ((t / T + s) / (1.0 + s)) * (kPi / 2.0);
        const double c = std::cos(arg);
        return c * c;
    };
    NoiseSchedule sched;
    sched.T = T;
    sched.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
    sched.alpha_bar[0] = 1.0;
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
        double v = std::min(f(t) / f0, 1.0);
        v = std::max(v, 1e-4);
        // the 1e-4 floor can flatten the tail; keep the sequence strictly
        // decreasing (the decrement is negligible against the floor)
        if (v >= prev) v = prev - 1e-12;
        sched.alpha_bar[static_cast<std::size_t>(t)] = v;
        prev = v;
    }
    return sched;
}

LatentGrid add_noise(const LatentGrid& z_gt, int t, const LatentGrid& eps,
                     const NoiseSchedule& sched) {
    if (eps.views != z_gt.views || eps.h != z_gt.h || eps.w != z_gt.w ||
        eps.c != z_gt.c)
        throw shape_error("add_noise: noise shape differs from latents");
    if (t < 0 || t > sched.T) throw invalid_parameter("add_noise: t out of range");
    const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    LatentGrid z_t = z_gt;
    for (std::size_t i = 0; i < z_t.data.size(); ++i)
        z_t.data[i] = a * z_gt.data[i] + b * eps.data[i];
    return z_t;
}

LatentGrid noise_like(const LatentGrid& like, std::uint64_t seed) {
    RngStream rng(seed);
    LatentGrid eps(like.views, like.h, like.w, like.c, like.patch);
    for (auto& v : eps.data) v = rng.gaussian();
    return eps;
}

void DenoiserConfig::validate() const {
    if (layers < 1) throw invalid_parameter("denoiser: layers must be >= 1");
    if (views < 1) throw invalid_parameter("denoiser: views must be >= 1");
    if (patch < 1) throw invalid_parameter("denoiser: patch must be >= 1");
    if (pose_freqs < 1) throw invalid_parameter("denoiser: pose_freqs must be >= 1");
    if (timesteps < 1) throw invalid_parameter("denoiser: timesteps must be >= 1");
    if (width < 4 || width % 4 != 0)
        throw invalid_parameter("denoiser: width must be a positive multiple of 4");
    if (heads < 1 || width % heads != 0)
        throw invalid_parameter("denoiser: width must be divisible by heads");
    if (cond_dim < 4 || cond_dim % 4 != 0)
        throw invalid_parameter("denoiser: cond_dim must be a positive multiple of 4");
    if (cond_patch < 1) throw invalid_parameter("denoiser: cond_patch must be >= 1");
}

std::vector<std::string> default_lora_targets(const DenoiserConfig& cfg) {
    std::vector<std::string> t;
    for (int i = 0; i < cfg.layers; ++i)
        for (const char* blk : {".self", ".cross"})
            for (const char* proj : {".q.w", ".k.w", ".v.w", ".o.w"})
                t.push_back("den.layer" + std::to_string(i) + blk + proj);
    return t;
}

std::vector<LoraAdapter> attach_lora(nn::ParamStore& base, nn::ParamStore& adapters,
                                     const LoraConfig& cfg, std::uint64_t seed) {
    if (cfg.rank < 1) throw invalid_parameter("attach_lora: rank must be >= 1");
    if (cfg.targets.empty()) throw invalid_parameter("attach_lora: no targets");
    RngStream rng(seed);
    std::vector<LoraAdapter> out;
    for (const auto& target : cfg.targets) {
        if (!base.has(target))
            throw invalid_parameter("attach_lora: unknown target " + target);
        const nn::Tensor& w = base.value(target);
        adapters.add("lora." + target + ".A",
                     nn::Tensor::randn(cfg.rank, w.rows, 0.02, rng));
        adapters.add("lora." + target + ".B", nn::Tensor::zeros(w.cols, cfg.rank));
        out.push_back(LoraAdapter{target, cfg.rank, cfg.alpha / cfg.rank});
    }
    base.freeze_all();
    return out;
}

nn::VarOverrides lora_overrides(nn::Tape& tape, const nn::BoundStore& base,
                                const nn::BoundStore& adapters,
                                const std::vector<LoraAdapter>& lora) {
    nn::VarOverrides ov;
    for (const auto& ad : lora) {
        const nn::Var a = adapters["lora." + ad.target + ".A"];
        const nn::Var b = adapters["lora." + ad.target + ".B"];
        // delta = (B*A)^T = A^T * B^T in the x*W convention
        const nn::Var delta =
            tape.matmul(tape.transpose(a), tape.transpose(b));
        ov[ad.target] = tape.add(base[ad.target], tape.scale(delta, ad.scale));
    }
    return ov;
}

nn::ParamStore merge_lora(const nn::ParamStore& base, const nn::ParamStore& adapters,
                          const std::vector<LoraAdapter>& lora) {
    nn::ParamStore merged = base;
    for (const auto& ad : lora) {
        nn::Tensor& w = merged.value(ad.target);
        const nn::Tensor& a = adapters.value("lora." + ad.target + ".A");
        const nn::Tensor& b = adapters.value("lora." + ad.target + ".B");
        w.map() += ad.scale * (a.map().transpose() * b.map().transpose());
    }
    return merged;
}

MvDenoiser::MvDenoiser(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    RngStream rng(seed);
    const int c = 3 * cfg_.patch * cfg_.patch;
    nn::register_linear(params_, "den.embed", 2 * c, cfg_.width, rng);
    nn::register_linear(params_, "den.temb", cfg_.width, cfg_.width, rng);
    nn::register_linear(params_, "den.pose", 4 * cfg_.pose_freqs, cfg_.width, rng);
    for (int i = 0; i < cfg_.layers; ++i) {
        const std::string p = "den.layer" + std::to_string(i);
        nn::register_attention_block(params_, p + ".self", cfg_.width, 0, rng);
        nn::register_attention_block(params_, p + ".cross", cfg_.width,
                                     cfg_.cond_dim, rng);
        nn::register_mlp_block(params_, p + ".mlp", cfg_.width, rng);
    }
    nn::register_layer_norm(params_, "den.out_ln", cfg_.width);
    // the head stays randomly initialized: a zero head would stop every
    // gradient into the attention weights the adapters patch
    nn::register_linear(params_, "den.head", cfg_.width, c, rng);
}

MvDenoiser::MvDenoiser(const DenoiserConfig& cfg, nn::ParamStore store)
    : cfg_(cfg), params_(std::move(store)) {
    cfg_.validate();
}

nn::Var MvDenoiser::forward(nn::Tape& tape, const nn::BoundStore& bound,
                            const nn::VarOverrides& overrides, const LatentGrid& z_t,
                            const LatentGrid& cond_latent,
                            const FeatureTokens& cond_tokens,
                            const std::vector<PoseEncoding>& poses, int t,
                            const NoiseSchedule& sched) const {
    const int c = 3 * cfg_.patch * cfg_.patch;
    if (z_t.views != cfg_.views)
        throw shape_error("denoiser: latent views != configured views");
    if (z_t.c != c) throw shape_error("denoiser: latent channels != 3*patch^2");
    if (cond_latent.views != 1 || cond_latent.h != z_t.h || cond_latent.w != z_t.w ||
        cond_latent.c != z_t.c)
        throw shape_error("denoiser: conditioning latent shape mismatch");
    if (static_cast<int>(poses.size()) != cfg_.views)
        throw shape_error("denoiser: pose count != views");
    for (const auto& p : poses)
        if (static_cast<int>(p.size()) != 4 * cfg_.pose_freqs)
            throw shape_error("denoiser: pose encoding length mismatch");
    if (cond_tokens.kind != FeatureKind::conditioning)
        throw invalid_parameter("denoiser: cond tokens must carry the conditioning tag");
    if (cond_tokens.tokens.cols != cfg_.cond_dim)
        throw shape_error("denoiser: conditioning width != cond_dim");
    if (t < 0 || t > sched.T) throw invalid_parameter("denoiser: t out of range");

    const int hw = z_t.h * z_t.w;
    nn::Tensor concat(static_cast<std::int64_t>(cfg_.views) * hw, 2 * c);
    for (int v = 0; v < cfg_.views; ++v)
        for (int cell = 0; cell < hw; ++cell) {
            const std::int64_t row = static_cast<std::int64_t>(v) * hw + cell;
            const std::size_t zi =
                (static_cast<std::size_t>(v) * hw + cell) * static_cast<std::size_t>(c);
            const std::size_t ci = static_cast<std::size_t>(cell) * c;
            for (int k = 0; k < c; ++k) {
                concat.at(row, k) = z_t.data[zi + static_cast<std::size_t>(k)];
                concat.at(row, c + k) = cond_latent.data[ci + static_cast<std::size_t>(k)];
            }
        }

    nn::Var x = nn::linear(bound, "den.embed", tape.constant(std::move(concat)));
    x = tape.add_tile_rows(x, tape.constant(posenc_2d(z_t.h, z_t.w, cfg_.width)),
                           cfg_.views);

    nn::Tensor pose_mat(cfg_.views, 4 * cfg_.pose_freqs);
    for (int v = 0; v < cfg_.views; ++v)
        for (std::size_t k = 0; k < poses[static_cast<std::size_t>(v)].size(); ++k)
            pose_mat.at(v, static_cast<std::int64_t>(k)) =
                poses[static_cast<std::size_t>(v)][k];
    nn::Var pose = nn::linear(bound, "den.pose", tape.constant(pose_mat));
    x = tape.add_per_view(x, pose, cfg_.views);

    nn::Tensor tfeat(1, cfg_.width);
    for (int k = 0; k < cfg_.width / 2; ++k) {
        const double omega = std::exp(-std::log(10000.0) * (2.0 * k / cfg_.width));
        tfeat.at(0, 2 * k) = std::sin(t * omega);
        tfeat.at(0, 2 * k + 1) = std::cos(t * omega);
    }
    nn::Var temb = nn::linear(bound, "den.temb", tape.constant(tfeat));
    x = tape.add_rowvec(x, temb);

    nn::Var ctx = tape.constant(cond_tokens.tokens);
    for (int i = 0; i < cfg_.layers; ++i) {
        const std::string p = "den.layer" + std::to_string(i);
        x = nn::attention_block(bound, p + ".self", x, std::nullopt, cfg_.heads,
                                overrides);
        x = nn::attention_block(bound, p + ".cross", x, ctx, cfg_.heads, overrides);
        x = nn::mlp_block(bound, p + ".mlp", x);
    }
    x = nn::layer_norm_op(bound, "den.out_ln", x);
    return nn::linear(bound, "den.head", x);
}

LatentGrid MvDenoiser::predict(const LatentGrid& z_t, const LatentGrid& cond_latent,
                               const FeatureTokens& cond_tokens,
                               const std::vector<PoseEncoding>& poses, int t,
                               const NoiseSchedule& sched,
                               const nn::ParamStore* adapters,
                               const std::vector<LoraAdapter>* lora) const {
    nn::Tape tape;
    nn::BoundStore bound = nn::bind(tape, params_);
    nn::VarOverrides ov;
    nn::BoundStore adapters_bound;
    if (adapters && lora) {
        adapters_bound = nn::bind(tape, *adapters);
        ov = lora_overrides(tape, bound, adapters_bound, *lora);
    }
    nn::Var out = forward(tape, bound, ov, z_t, cond_latent, cond_tokens, poses, t,
                          sched);
    return LatentGrid::from_tokens(tape.val(out), z_t.views, z_t.h, z_t.w, z_t.patch);
}

LatentGrid MvDenoiser::sample(const ImageBuffer& conditioning,
                              const std::vector<Camera>& cams, int steps,
                              std::uint64_t seed, const nn::ParamStore* adapters,
                              const std::vector<LoraAdapter>* lora) const {
    if (steps < 1) throw invalid_parameter("sample: steps must be >= 1");
    if (static_cast<int>(cams.size()) != cfg_.views)
        throw shape_error("sample: camera count != views");

    const LatentGrid cond_latent = encode_views({conditioning}, cfg_.patch);
    const FeatureTokens cond_tokens =
        extract_condition_features(conditioning, cfg_.cond_patch, cfg_.cond_dim);
    std::vector<PoseEncoding> poses;
    poses.reserve(cams.size());
    for (const auto& cam : cams) poses.push_back(encode_pose(cam, cfg_.pose_freqs));

    const NoiseSchedule sched = make_schedule(cfg_.timesteps);
    std::vector<int> ts;
    for (int k = 0; k <= steps; ++k) {
        const int t = static_cast<int>(
            std::lround(double(sched.T) * (steps - k) / double(steps)));
        if (ts.empty() || t != ts.back()) ts.push_back(t);
    }
    if (ts.back() != 0) ts.push_back(0);

    LatentGrid shape(cfg_.views, cond_latent.h, cond_latent.w, cond_latent.c,
                     cond_latent.patch);
    LatentGrid z = noise_like(shape, seed);
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
        const int t = ts[k], t_next = ts[k + 1];
        const LatentGrid z_hat =
            predict(z, cond_latent, cond_tokens, poses, t, sched, adapters, lora);
        const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
        const double ab_next = sched.alpha_bar[static_cast<std::size_t>(t_next)];
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        const double an = std::sqrt(ab_next), bn = std::sqrt(1.0 - ab_next);
        for (std::size_t i = 0; i < z.data.size(); ++i) {
            const double eps_hat = (z.data[i] - a * z_hat.data[i]) / b;
            z.data[i] = an * z_hat.data[i] + bn * eps_hat;
        }
    }
    return z;
}

} // namespace splat
