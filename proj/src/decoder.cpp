#include "splat/decoder.hpp"

#include <cmath>
#include <string>

#include "splat/errors.hpp"
#include "splat/util.hpp"

namespace splat {

namespace {

bool power_of_two(int v) { return v >= 1 && (v & (v - 1)) == 0; }

const double kLogScaleMin = std::log(kScaleMin);
const double kLogScaleMax = std::log(kScaleMax);

} // namespace

int DecoderConfig::shuffle_steps() const {
    int s = 0;
    for (int f = upsample; f > 1; f >>= 1) ++s;
    return s;
}

int DecoderConfig::head_width() const {
    int w = width;
    for (int s = 0; s < shuffle_steps(); ++s) w /= 4;
    return w;
}

void DecoderConfig::validate() const {
    if (layers < 1) throw invalid_parameter("decoder: layers must be >= 1");
    if (views < 1) throw invalid_parameter("decoder: views must be >= 1");
    if (patch < 1) throw invalid_parameter("decoder: patch must be >= 1");
    if (pose_freqs < 1) throw invalid_parameter("decoder: pose_freqs must be >= 1");
    if (!(near < far) || near <= 0.0)
        throw invalid_parameter("decoder: need 0 < near < far");
    if (!power_of_two(upsample))
        throw invalid_parameter("decoder: upsample must be a power of two");
    if (width < 4 || width % 4 != 0)
        throw invalid_parameter("decoder: width must be a positive multiple of 4");
    if (cond_dim < 4 || cond_dim % 4 != 0)
        throw invalid_parameter("decoder: cond_dim must be a positive multiple of 4");
    if (cond_patch < 1) throw invalid_parameter("decoder: cond_patch must be >= 1");
    int w = width;
    for (int s = 0; s < shuffle_steps(); ++s) {
        if (w % 4 != 0)
            throw invalid_parameter("decoder: width not divisible by 4^steps");
        w /= 4;
        if (w % heads != 0)
            throw invalid_parameter("decoder: upsampled width not divisible by heads");
    }
    if (heads < 1 || width % heads != 0)
        throw invalid_parameter("decoder: width must be divisible by heads");
}

nn::Tensor posenc_2d(int h, int w, int dim) {
    if (dim % 4 != 0) throw invalid_parameter("posenc_2d: dim must be divisible by 4");
    nn::Tensor pe(static_cast<std::int64_t>(h) * w, dim);
    const int half = dim / 2;
    const int pairs = half / 2;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const std::int64_t row = static_cast<std::int64_t>(r) * w + c;
            for (int k = 0; k < pairs; ++k) {
                const double omega =
                    std::exp(-std::log(10000.0) * (2.0 * k / half));
                pe.at(row, 2 * k) = std::sin(r * omega);
                pe.at(row, 2 * k + 1) = std::cos(r * omega);
                pe.at(row, half + 2 * k) = std::sin(c * omega);
                pe.at(row, half + 2 * k + 1) = std::cos(c * omega);
            }
        }
    return pe;
}

FeatureTokens extract_condition_features(const ImageBuffer& image, int patch,
                                         int dim, std::uint64_t seed) {
    if (patch < 1) throw invalid_parameter("condition features: patch must be >= 1");
    if (image.height % patch != 0 || image.width % patch != 0)
        throw shape_error("condition features: resolution not divisible by patch");
    const int gh = image.height / patch, gw = image.width / patch;
    const int d_in = 3 * patch * patch;

    RngStream rng(seed);
    nn::Tensor proj = nn::Tensor::randn(d_in, dim, 1.0 / std::sqrt(double(d_in)), rng);

    nn::Tensor patches(static_cast<std::int64_t>(gh) * gw, d_in);
    for (int pr = 0; pr < gh; ++pr)
        for (int pc = 0; pc < gw; ++pc) {
            const std::int64_t row = static_cast<std::int64_t>(pr) * gw + pc;
            int k = 0;
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx)
                    for (int ch = 0; ch < 3; ++ch)
                        patches.at(row, k++) =
                            image.at(pr * patch + dy, pc * patch + dx, ch);
        }

    FeatureTokens out;
    out.kind = FeatureKind::conditioning;
    out.tokens = nn::Tensor(patches.rows, dim);
    out.tokens.map() = patches.map() * proj.map();
    out.tokens.map() += posenc_2d(gh, gw, dim).map();
    return out;
}

Gaussian3D head_activate(const double* raw, const Ray& ray, double near,
                         double far) {
    Gaussian3D g;
    const double depth = near + sigmoid(raw[0]) * (far - near);
    g.mean = ray.origin + depth * ray.dir;
    for (int k = 0; k < 3; ++k)
        g.log_scale[k] = std::clamp(raw[1 + k], kLogScaleMin, kLogScaleMax);
    Eigen::Vector4d q(1.0 + raw[4], raw[5], raw[6], raw[7]);
    const double n = q.norm();
    g.rotation = n > 1e-8 ? Eigen::Vector4d(q / n) : Eigen::Vector4d(1, 0, 0, 0);
    g.opacity_logit = raw[8];
    for (int k = 0; k < 3; ++k) g.color[k] = sigmoid(raw[9 + k]);
    return g;
}

nn::Tensor head_backward(const SceneGrads& g, const nn::Tensor& raw,
                         const std::vector<Ray>& rays, double near, double far) {
    if (raw.cols != 14) throw shape_error("head_backward: raw must have 14 columns");
    if (static_cast<std::size_t>(raw.rows) != rays.size() ||
        rays.size() != g.d_mean.size())
        throw shape_error("head_backward: row count mismatch");

    nn::Tensor out(raw.rows, 14);
    for (std::int64_t i = 0; i < raw.rows; ++i) {
        const double s0 = sigmoid(raw.at(i, 0));
        const double d_depth = g.d_mean[i].dot(rays[i].dir);
        out.at(i, 0) = d_depth * (far - near) * s0 * (1.0 - s0);

        for (int k = 0; k < 3; ++k) {
            const double v = raw.at(i, 1 + k);
            out.at(i, 1 + k) =
                (v > kLogScaleMin && v < kLogScaleMax) ? g.d_log_scale[i][k] : 0.0;
        }

        Eigen::Vector4d q(1.0 + raw.at(i, 4), raw.at(i, 5), raw.at(i, 6),
                          raw.at(i, 7));
        const double n = q.norm();
        if (n > 1e-8) {
            const Eigen::Vector4d qn = q / n;
            const Eigen::Vector4d dq = g.d_rotation[i];
            const Eigen::Vector4d chained = (dq - qn * qn.dot(dq)) / n;
            for (int k = 0; k < 4; ++k) out.at(i, 4 + k) = chained[k];
        }

        out.at(i, 8) = g.d_opacity_logit[i];
        for (int k = 0; k < 3; ++k) {
            const double sc = sigmoid(raw.at(i, 9 + k));
            out.at(i, 9 + k) = g.d_color[i][k] * sc * (1.0 - sc);
        }
    }
    return out;
}

GaussianScene scene_from_raw(const nn::Tensor& raw, const std::vector<Ray>& rays,
                             double near, double far) {
    if (raw.cols != 14) throw shape_error("scene_from_raw: raw must have 14 columns");
    if (static_cast<std::size_t>(raw.rows) != rays.size())
        throw shape_error("scene_from_raw: ray count mismatch");
    GaussianScene scene;
    scene.gaussians.reserve(rays.size());
    double extent = 0.0;
    for (std::int64_t i = 0; i < raw.rows; ++i) {
        Gaussian3D g = head_activate(&raw.data[static_cast<std::size_t>(i) * 14],
                                     rays[static_cast<std::size_t>(i)], near, far);
        extent = std::max(extent, g.mean.norm());
        scene.gaussians.push_back(g);
    }
    scene.bound_radius = std::max(extent, 1e-6);
    return scene;
}

GsDecoder::GsDecoder(const DecoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    RngStream rng(seed);
    const int c_latent = 3 * cfg_.patch * cfg_.patch;
    nn::register_linear(params_, "dec.embed", c_latent, cfg_.width, rng);
    nn::register_linear(params_, "dec.pose", 4 * cfg_.pose_freqs, cfg_.width, rng);
    for (int i = 0; i < cfg_.layers; ++i) {
        const std::string p = "dec.trunk" + std::to_string(i);
        nn::register_attention_block(params_, p + ".self", cfg_.width, 0, rng);
        nn::register_attention_block(params_, p + ".cross", cfg_.width,
                                     cfg_.cond_dim, rng);
        nn::register_mlp_block(params_, p + ".mlp", cfg_.width, rng);
    }
    int w = cfg_.width;
    for (int s = 0; s < cfg_.shuffle_steps(); ++s) {
        w /= 4;
        const std::string p = "dec.up" + std::to_string(s);
        nn::register_attention_block(params_, p + ".self", w, 0, rng);
        nn::register_mlp_block(params_, p + ".mlp", w, rng);
    }
    nn::register_layer_norm(params_, "dec.out_ln", w);
    nn::register_linear(params_, "dec.head", w, 14, rng, /*zero_init=*/true);

    // The head starts at zero, so the initial scene is pure bias: mid-range
    // depth, small scale, mostly transparent, mid-gray color.
    nn::Tensor& hb = params_.value("dec.head.b");
    for (int k = 0; k < 3; ++k) hb.at(0, 1 + k) = std::log(0.1);
    hb.at(0, 8) = logit(0.1);
}

GsDecoder::GsDecoder(const DecoderConfig& cfg, nn::ParamStore store)
    : cfg_(cfg), params_(std::move(store)) {
    cfg_.validate();
}

DecoderForward GsDecoder::forward(nn::Tape& tape, const nn::BoundStore& bound,
                                  nn::Var z_tokens, int latent_h, int latent_w,
                                  const FeatureTokens& cond,
                                  const std::vector<Camera>& cams) const {
    if (static_cast<int>(cams.size()) != cfg_.views)
        throw shape_error("decoder: camera count != configured views");
    if (cond.kind != FeatureKind::conditioning)
        throw invalid_parameter("decoder: cond tokens must carry the conditioning tag");
    if (cond.tokens.cols != cfg_.cond_dim)
        throw shape_error("decoder: conditioning width != cond_dim");
    const nn::Tensor& zt = tape.val(z_tokens);
    if (zt.rows != static_cast<std::int64_t>(cfg_.views) * latent_h * latent_w)
        throw shape_error("decoder: latent token rows != views*h*w");
    if (zt.cols != 3 * cfg_.patch * cfg_.patch)
        throw shape_error("decoder: latent channels != 3*patch^2");

    nn::Var x = tape.add_rowvec(tape.matmul(z_tokens, bound["dec.embed.w"]),
                                bound["dec.embed.b"]);
    nn::Var pos = tape.constant(posenc_2d(latent_h, latent_w, cfg_.width));
    x = tape.add_tile_rows(x, pos, cfg_.views);

    nn::Tensor pose_mat(cfg_.views, 4 * cfg_.pose_freqs);
    for (int v = 0; v < cfg_.views; ++v) {
        PoseEncoding e = encode_pose(cams[static_cast<std::size_t>(v)], cfg_.pose_freqs);
        for (std::size_t k = 0; k < e.size(); ++k)
            pose_mat.at(v, static_cast<std::int64_t>(k)) = e[k];
    }
    nn::Var pose = nn::linear(bound, "dec.pose", tape.constant(pose_mat));
    x = tape.add_per_view(x, pose, cfg_.views);

    nn::Var ctx = tape.constant(cond.tokens);
    for (int i = 0; i < cfg_.layers; ++i) {
        const std::string p = "dec.trunk" + std::to_string(i);
        x = nn::attention_block(bound, p + ".self", x, std::nullopt, cfg_.heads);
        x = nn::attention_block(bound, p + ".cross", x, ctx, cfg_.heads);
        x = nn::mlp_block(bound, p + ".mlp", x);
    }

    int cur_h = latent_h, cur_w = latent_w;
    for (int s = 0; s < cfg_.shuffle_steps(); ++s) {
        x = tape.pixel_shuffle(x, cfg_.views, cur_h, cur_w, 2);
        cur_h *= 2;
        cur_w *= 2;
        const std::string p = "dec.up" + std::to_string(s);
        x = nn::attention_block(bound, p + ".self", x, std::nullopt, cfg_.heads);
        x = nn::mlp_block(bound, p + ".mlp", x);
    }

    x = nn::layer_norm_op(bound, "dec.out_ln", x);
    nn::Var raw = tape.add_rowvec(tape.matmul(x, bound["dec.head.w"]),
                                  bound["dec.head.b"]);

    DecoderForward out;
    out.raw = raw;
    out.rays.reserve(static_cast<std::size_t>(cfg_.views) * cur_h * cur_w);
    for (int v = 0; v < cfg_.views; ++v) {
        const Camera& cam = cams[static_cast<std::size_t>(v)];
        for (int i = 0; i < cur_h; ++i)
            for (int j = 0; j < cur_w; ++j) {
                const double u = (j + 0.5) * cam.width / double(cur_w);
                const double vpx = (i + 0.5) * cam.height / double(cur_h);
                auto [o, d] = cam.pixel_ray(u, vpx);
                out.rays.push_back(Ray{o, d});
            }
    }
    out.scene = scene_from_raw(tape.val(raw), out.rays, cfg_.near, cfg_.far);
    return out;
}

GaussianScene GsDecoder::decode(const LatentGrid& z, const FeatureTokens& cond,
                                const std::vector<Camera>& cams) const {
    nn::Tape tape;
    nn::BoundStore bound = nn::bind(tape, params_);
    nn::Var zt = tape.constant(z.tokens());
    return forward(tape, bound, zt, z.h, z.w, cond, cams).scene;
}

} // namespace splat
