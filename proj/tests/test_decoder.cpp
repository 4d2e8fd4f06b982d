#include "doctest.h"

#include <Eigen/Geometry>
#include <cmath>

#include "splat/decoder.hpp"
#include "splat/errors.hpp"
#include "splat/losses.hpp"
#include "splat/rasterizer.hpp"
#include "splat/util.hpp"

using namespace splat;

namespace {

ImageBuffer random_image(int res, std::uint64_t seed) {
    RngStream rng(seed);
    ImageBuffer img(res, res);
    for (auto& p : img.pixels) p = rng.uniform();
    return img;
}

DecoderConfig tiny_config() {
    DecoderConfig cfg;
    cfg.layers = 2;
    cfg.width = 32;
    cfg.heads = 2;
    cfg.upsample = 2;
    cfg.patch = 8;
    cfg.views = 4;
    cfg.cond_dim = 16;
    cfg.cond_patch = 8;
    cfg.pose_freqs = 2;
    return cfg;
}

std::vector<Camera> tiny_cameras(const DecoderConfig& cfg, int res) {
    const double focal = focal_from_fov(deg_to_rad(45.0), res);
    return make_orbit_cameras(cfg.views, deg_to_rad(10.0), 2.0, focal, res);
}

// break the identity init so the decoder actually reacts to its inputs
void scramble(nn::ParamStore& store, std::uint64_t seed) {
    RngStream rng(seed);
    for (std::size_t i = 0; i < store.size(); ++i) {
        nn::Tensor& t = store.entry(i).value;
        for (auto& v : t.data) v += 0.05 * rng.gaussian();
    }
}

bool same_gaussian(const Gaussian3D& a, const Gaussian3D& b, double tol) {
    return (a.mean - b.mean).norm() <= tol &&
           (a.log_scale - b.log_scale).norm() <= tol &&
           (a.rotation - b.rotation).norm() <= tol &&
           std::abs(a.opacity_logit - b.opacity_logit) <= tol &&
           (a.color - b.color).norm() <= tol;
}

} // namespace

TEST_CASE("condition features: shape, tag and determinism") {
    const ImageBuffer img = random_image(64, 11);
    const FeatureTokens a = extract_condition_features(img, 8, 32);
    CHECK(a.kind == FeatureKind::conditioning);
    CHECK(a.tokens.rows == 64);
    CHECK(a.tokens.cols == 32);

    const FeatureTokens b = extract_condition_features(img, 8, 32);
    CHECK(a.tokens.data == b.tokens.data);

    const FeatureTokens other = extract_condition_features(img, 8, 32, 1234);
    CHECK(a.tokens.data != other.tokens.data);
}

TEST_CASE("condition features: tokens only see their own patch") {
    ImageBuffer img = random_image(32, 5);
    const FeatureTokens before = extract_condition_features(img, 8, 16);
    img.at(2, 3, 1) += 0.25; // inside patch (0, 0)
    const FeatureTokens after = extract_condition_features(img, 8, 16);

    bool row0_changed = false;
    for (std::int64_t c = 0; c < 16; ++c)
        if (before.tokens.at(0, c) != after.tokens.at(0, c)) row0_changed = true;
    CHECK(row0_changed);
    for (std::int64_t r = 1; r < before.tokens.rows; ++r)
        for (std::int64_t c = 0; c < 16; ++c)
            CHECK(before.tokens.at(r, c) == after.tokens.at(r, c));
}

TEST_CASE("condition features: resolution must divide by the patch") {
    const ImageBuffer img = random_image(30, 1);
    CHECK_THROWS_AS(extract_condition_features(img, 8, 16), shape_error);
    CHECK_THROWS_AS(extract_condition_features(img, 0, 16), invalid_parameter);
}

TEST_CASE("posenc_2d: first half tracks the row, second half the column") {
    const nn::Tensor pos = posenc_2d(3, 5, 8);
    REQUIRE(pos.rows == 15);
    const auto token = [&](int r, int c) { return r * 5 + c; };
    for (int k = 0; k < 4; ++k) {
        CHECK(pos.at(token(1, 0), k) == pos.at(token(1, 4), k));
        CHECK(pos.at(token(0, 2), 4 + k) == pos.at(token(2, 2), 4 + k));
    }
    CHECK(pos.at(token(0, 0), 0) != pos.at(token(2, 0), 0));
    CHECK(pos.at(token(0, 0), 4) != pos.at(token(0, 3), 4));
    CHECK_THROWS_AS(posenc_2d(2, 2, 6), invalid_parameter);
}

TEST_CASE("head_activate: zero raw anchors the default gaussian mid-ray") {
    const double raw[14] = {};
    Ray ray;
    ray.origin = Eigen::Vector3d(0.1, -0.2, 0.3);
    ray.dir = Eigen::Vector3d(0, 0, 1);
    const Gaussian3D g = head_activate(raw, ray, 0.5, 3.5);

    CHECK(g.mean.isApprox(ray.origin + 2.0 * ray.dir, 1e-15));
    CHECK(g.log_scale == Eigen::Vector3d::Zero());
    CHECK(g.rotation == Eigen::Vector4d(1, 0, 0, 0));
    CHECK(g.opacity_logit == 0.0);
    CHECK(g.color == Eigen::Vector3d(0.5, 0.5, 0.5));
}

TEST_CASE("head_activate: saturations respect the documented clamps") {
    Ray ray;
    double raw[14] = {};

    raw[0] = 40.0;
    CHECK(head_activate(raw, ray, 0.5, 3.5).mean.z() == doctest::Approx(3.5));
    raw[0] = -40.0;
    CHECK(head_activate(raw, ray, 0.5, 3.5).mean.z() == doctest::Approx(0.5));

    raw[1] = -100.0;
    raw[2] = 100.0;
    const Gaussian3D g = head_activate(raw, ray, 0.5, 3.5);
    CHECK(g.log_scale[0] == std::log(kScaleMin));
    CHECK(g.log_scale[1] == std::log(kScaleMax));

    raw[4] = -1.0; // cancels the +1 seed exactly -> fallback rotation
    CHECK(head_activate(raw, ray, 0.5, 3.5).rotation ==
          Eigen::Vector4d(1, 0, 0, 0));
}

TEST_CASE("head_activate: means stay on their pixel ray") {
    RngStream rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        double raw[14];
        for (auto& v : raw) v = rng.uniform(-3.0, 3.0);
        Ray ray;
        ray.origin = Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian());
        ray.dir = Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian())
                      .normalized();
        const Gaussian3D g = head_activate(raw, ray, 0.5, 3.5);
        const Eigen::Vector3d off = g.mean - ray.origin;
        CHECK(off.cross(ray.dir).norm() <= 1e-12);
        const double depth = off.dot(ray.dir);
        CHECK(depth >= 0.5);
        CHECK(depth <= 3.5);
        CHECK(g.rotation.norm() == doctest::Approx(1.0).epsilon(1e-12));
        for (int k = 0; k < 3; ++k) {
            CHECK(g.color[k] > 0.0);
            CHECK(g.color[k] < 1.0);
        }
    }
}

TEST_CASE("head_backward matches finite differences of the activation") {
    RngStream rng(31);
    const int n = 3;
    nn::Tensor raw(n, 14);
    // stay inside the scale clamp and away from the quaternion fallback
    for (auto& v : raw.data) v = rng.uniform(-0.4, 0.4);
    std::vector<Ray> rays(n);
    for (auto& ray : rays) {
        ray.origin = Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian());
        ray.dir = Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian())
                      .normalized();
    }
    SceneGrads g;
    g.resize(n);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            g.d_mean[i][k] = rng.gaussian();
            g.d_log_scale[i][k] = rng.gaussian();
            g.d_color[i][k] = rng.gaussian();
        }
        for (int k = 0; k < 4; ++k) g.d_rotation[i][k] = rng.gaussian();
        g.d_opacity_logit[i] = rng.gaussian();
    }

    // phi = <g, activated parameters>, the inner product head_backward chains
    const auto phi = [&](const nn::Tensor& r) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const Gaussian3D gs = head_activate(&r.data[i * 14u], rays[i], 0.5, 3.5);
            acc += g.d_mean[i].dot(gs.mean) + g.d_log_scale[i].dot(gs.log_scale) +
                   g.d_rotation[i].dot(gs.rotation) +
                   g.d_opacity_logit[i] * gs.opacity_logit +
                   g.d_color[i].dot(gs.color);
        }
        return acc;
    };

    const nn::Tensor grad = head_backward(g, raw, rays, 0.5, 3.5);
    const double h = 1e-6;
    for (std::size_t j = 0; j < raw.data.size(); ++j) {
        nn::Tensor plus = raw, minus = raw;
        plus.data[j] += h;
        minus.data[j] -= h;
        const double fd = (phi(plus) - phi(minus)) / (2.0 * h);
        CHECK(grad.data[j] == doctest::Approx(fd).epsilon(1e-5));
    }
    // reserved channels carry no gradient
    for (std::int64_t i = 0; i < raw.rows; ++i) {
        CHECK(grad.at(i, 12) == 0.0);
        CHECK(grad.at(i, 13) == 0.0);
    }
}

TEST_CASE("decoder: one gaussian per upsampled latent cell") {
    const DecoderConfig cfg = tiny_config();
    const GsDecoder dec(cfg, 7);

    const int res = 32; // latent grid 4x4 per view
    std::vector<ImageBuffer> views;
    for (int v = 0; v < cfg.views; ++v) views.push_back(random_image(res, 100 + v));
    const LatentGrid z = encode_views(views, cfg.patch);
    const FeatureTokens cond =
        extract_condition_features(views[0], cfg.cond_patch, cfg.cond_dim);
    const std::vector<Camera> cams = tiny_cameras(cfg, res);

    const GaussianScene scene = dec.decode(z, cond, cams);
    CHECK(scene.size() == static_cast<std::size_t>(cfg.views * 8 * 8));
    CHECK(scene.bound_radius > 0.0);
    for (const auto& g : scene.gaussians) {
        CHECK(g.rotation.norm() == doctest::Approx(1.0).epsilon(1e-12));
        for (int k = 0; k < 3; ++k) {
            CHECK(g.log_scale[k] >= std::log(kScaleMin));
            CHECK(g.log_scale[k] <= std::log(kScaleMax));
            CHECK(g.color[k] >= 0.0);
            CHECK(g.color[k] <= 1.0);
        }
    }

    // a fresh decoder is the identity around the head bias: scale 0.1,
    // opacity 0.1, mid-ray depth on every gaussian
    for (const auto& g : scene.gaussians) {
        CHECK(g.activated_scale().x() == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(g.activated_opacity() == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(g.color.x() == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("decoder: seeded construction decodes deterministically") {
    const DecoderConfig cfg = tiny_config();
    const int res = 32;
    std::vector<ImageBuffer> views;
    for (int v = 0; v < cfg.views; ++v) views.push_back(random_image(res, 200 + v));
    const LatentGrid z = encode_views(views, cfg.patch);
    const FeatureTokens cond =
        extract_condition_features(views[0], cfg.cond_patch, cfg.cond_dim);
    const std::vector<Camera> cams = tiny_cameras(cfg, res);

    GsDecoder a(cfg, 7), b(cfg, 7), c(cfg, 8);
    scramble(a.params(), 9);
    scramble(b.params(), 9);
    scramble(c.params(), 9);

    const GaussianScene sa = a.decode(z, cond, cams);
    const GaussianScene sb = b.decode(z, cond, cams);
    const GaussianScene sc = c.decode(z, cond, cams);
    REQUIRE(sa.size() == sb.size());
    bool differs_from_c = false;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(same_gaussian(sa.gaussians[i], sb.gaussians[i], 0.0));
        if (!same_gaussian(sa.gaussians[i], sc.gaussians[i], 1e-12))
            differs_from_c = true;
    }
    CHECK(differs_from_c);
}

TEST_CASE("decoder: reacts to both the latents and the conditioning") {
    const DecoderConfig cfg = tiny_config();
    const int res = 32;
    std::vector<ImageBuffer> views;
    for (int v = 0; v < cfg.views; ++v) views.push_back(random_image(res, 300 + v));
    const LatentGrid z = encode_views(views, cfg.patch);
    const FeatureTokens cond =
        extract_condition_features(views[0], cfg.cond_patch, cfg.cond_dim);
    const std::vector<Camera> cams = tiny_cameras(cfg, res);

    GsDecoder dec(cfg, 7);
    scramble(dec.params(), 13);
    const GaussianScene base = dec.decode(z, cond, cams);

    std::vector<ImageBuffer> other = views;
    other[2] = random_image(res, 999);
    const GaussianScene z_moved =
        dec.decode(encode_views(other, cfg.patch), cond, cams);
    bool changed = false;
    for (std::size_t i = 0; i < base.size(); ++i)
        if (!same_gaussian(base.gaussians[i], z_moved.gaussians[i], 1e-12))
            changed = true;
    CHECK(changed);

    const FeatureTokens cond2 = extract_condition_features(
        random_image(res, 555), cfg.cond_patch, cfg.cond_dim);
    const GaussianScene cond_moved = dec.decode(z, cond2, cams);
    changed = false;
    for (std::size_t i = 0; i < base.size(); ++i)
        if (!same_gaussian(base.gaussians[i], cond_moved.gaussians[i], 1e-12))
            changed = true;
    CHECK(changed);
}

TEST_CASE("decoder: jointly permuting views and cameras permutes the output") {
    const DecoderConfig cfg = tiny_config();
    const int res = 32;
    std::vector<ImageBuffer> views;
    for (int v = 0; v < cfg.views; ++v) views.push_back(random_image(res, 400 + v));
    const FeatureTokens cond =
        extract_condition_features(views[0], cfg.cond_patch, cfg.cond_dim);
    const std::vector<Camera> cams = tiny_cameras(cfg, res);

    GsDecoder dec(cfg, 7);
    scramble(dec.params(), 21);

    const GaussianScene base = dec.decode(encode_views(views, cfg.patch), cond, cams);

    const std::vector<int> perm = {2, 0, 3, 1};
    std::vector<ImageBuffer> pviews;
    std::vector<Camera> pcams;
    for (int v : perm) {
        pviews.push_back(views[static_cast<std::size_t>(v)]);
        pcams.push_back(cams[static_cast<std::size_t>(v)]);
    }
    const GaussianScene permuted =
        dec.decode(encode_views(pviews, cfg.patch), cond, pcams);

    // attention reduces over views in a different order, so only to tolerance
    const std::size_t per_view = base.size() / static_cast<std::size_t>(cfg.views);
    for (int v = 0; v < cfg.views; ++v)
        for (std::size_t i = 0; i < per_view; ++i) {
            const Gaussian3D& a = permuted.gaussians[v * per_view + i];
            const Gaussian3D& b =
                base.gaussians[static_cast<std::size_t>(perm[v]) * per_view + i];
            CHECK(same_gaussian(a, b, 1e-9));
        }
}

TEST_CASE("decoder: rejects mismatched inputs") {
    const DecoderConfig cfg = tiny_config();
    const GsDecoder dec(cfg, 7);
    const int res = 32;
    std::vector<ImageBuffer> views;
    for (int v = 0; v < cfg.views; ++v) views.push_back(random_image(res, 500 + v));
    const LatentGrid z = encode_views(views, cfg.patch);
    const FeatureTokens cond =
        extract_condition_features(views[0], cfg.cond_patch, cfg.cond_dim);
    std::vector<Camera> cams = tiny_cameras(cfg, res);

    std::vector<Camera> short_cams(cams.begin(), cams.end() - 1);
    CHECK_THROWS_AS(dec.decode(z, cond, short_cams), shape_error);

    FeatureTokens trunk_tagged = cond;
    trunk_tagged.kind = FeatureKind::trunk;
    CHECK_THROWS_AS(dec.decode(z, trunk_tagged, cams), invalid_parameter);

    const FeatureTokens narrow =
        extract_condition_features(views[0], cfg.cond_patch, cfg.cond_dim / 2);
    CHECK_THROWS_AS(dec.decode(z, narrow, cams), shape_error);

    const LatentGrid z3 =
        encode_views({views[0], views[1], views[2]}, cfg.patch);
    CHECK_THROWS_AS(dec.decode(z3, cond, cams), shape_error);
}

TEST_CASE("decoder: analytic gradients survive the full render chain") {
    DecoderConfig cfg;
    cfg.layers = 2;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.upsample = 1;
    cfg.patch = 8;
    cfg.views = 2;
    cfg.cond_dim = 8;
    cfg.cond_patch = 8;
    cfg.pose_freqs = 2;

    const int res = 16; // latent grid 2x2 -> 4 gaussians per view
    std::vector<ImageBuffer> views;
    for (int v = 0; v < cfg.views; ++v) views.push_back(random_image(res, 600 + v));
    const LatentGrid z = encode_views(views, cfg.patch);
    const FeatureTokens cond =
        extract_condition_features(views[0], cfg.cond_patch, cfg.cond_dim);
    const std::vector<Camera> cams = tiny_cameras(cfg, res);

    GsDecoder dec(cfg, 3);
    scramble(dec.params(), 17);

    std::vector<ImageBuffer> gt_images;
    std::vector<DepthBuffer> gt_depths;
    RngStream rng(23);
    for (int v = 0; v < cfg.views; ++v) {
        gt_images.push_back(random_image(res, 700 + v));
        DepthBuffer d(res, res);
        for (auto& x : d.depth) x = rng.uniform(0.5, 3.5);
        for (int i = 0; i < res * res; ++i) d.alpha[i] = (i % 3 == 0) ? 1.0 : 0.0;
        gt_depths.push_back(std::move(d));
    }
    std::vector<Mask> masks;
    for (const auto& d : gt_depths) masks.push_back(coverage_mask(d));

    const Eigen::Vector3d bg(1.0, 1.0, 1.0);
    const LossConfig lcfg;

    const auto loss_of = [&](const nn::ParamStore& store) {
        const GsDecoder probe(cfg, store);
        const GaussianScene scene = probe.decode(z, cond, cams);
        std::vector<ImageBuffer> imgs;
        std::vector<DepthBuffer> depths;
        for (const auto& cam : cams) {
            RenderOutput out = render(scene, cam, bg);
            imgs.push_back(std::move(out.image));
            depths.push_back(std::move(out.depth));
        }
        return loss_3d(rgb_loss(imgs, gt_images),
                       depth_loss(depths, gt_depths, masks), lcfg);
    };

    // analytic pass: tape -> scene -> per-view render_backward -> head chain
    nn::Tape tape;
    nn::BoundStore bound = nn::bind(tape, dec.params());
    DecoderForward fwd = dec.forward(tape, bound, tape.constant(z.tokens()),
                                     z.h, z.w, cond, cams);
    std::vector<RenderOutput> outs;
    std::vector<ImageBuffer> imgs;
    std::vector<DepthBuffer> depths;
    for (const auto& cam : cams) {
        outs.push_back(render(fwd.scene, cam, bg));
        imgs.push_back(outs.back().image);
        depths.push_back(outs.back().depth);
    }
    std::vector<ImageBuffer> d_imgs;
    const double base_rgb = rgb_loss_grad(imgs, gt_images, d_imgs);
    std::vector<std::vector<double>> d_depths;
    const double base_depth = depth_loss_grad(depths, gt_depths, masks, d_depths);
    const double base_loss = loss_3d(base_rgb, base_depth, lcfg);
    CHECK(base_loss == doctest::Approx(loss_of(dec.params())).epsilon(1e-12));

    SceneGrads total;
    total.resize(fwd.scene.size());
    for (std::size_t v = 0; v < cams.size(); ++v) {
        for (auto& g : d_depths[v]) g *= lcfg.lambda_depth;
        total.accumulate(
            render_backward(fwd.scene, cams[v], outs[v], d_imgs[v], d_depths[v]),
            1.0);
    }
    const nn::Tensor d_raw =
        head_backward(total, tape.val(fwd.raw), fwd.rays, cfg.near, cfg.far);
    tape.backward({{fwd.raw, d_raw}});
    const std::vector<nn::Tensor> grads =
        nn::harvest_grads(tape, dec.params(), bound.vars);

    // probe a spread of parameters with central differences
    RngStream pick(41);
    int checked = 0;
    for (int trial = 0; trial < 200 && checked < 24; ++trial) {
        const std::size_t e =
            static_cast<std::size_t>(pick.uniform_int(0, dec.params().size() - 1));
        if (grads[e].data.empty()) continue;
        const std::size_t j = static_cast<std::size_t>(
            pick.uniform_int(0, static_cast<std::int64_t>(grads[e].data.size()) - 1));
        const double an = grads[e].data[j];

        nn::ParamStore store = dec.params();
        const double h = 1e-4;
        store.entry(e).value.data[j] += h;
        const double up = loss_of(store);
        store.entry(e).value.data[j] -= 2.0 * h;
        const double dn = loss_of(store);
        const double fd = (up - dn) / (2.0 * h);

        const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        CHECK(std::abs(fd - an) / denom <= 1e-3);
        ++checked;
    }
    CHECK(checked == 24);
}
