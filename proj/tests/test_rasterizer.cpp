#include <cmath>

#include "doctest.h"
#include "splat/rasterizer.hpp"
#include "splat/util.hpp"
#include "test_util.hpp"

using namespace splat;
using testutil::rel_err;

namespace {

Camera test_camera(int res = 32, double radius = 2.0, double azimuth_deg = 30.0,
                   double elevation_deg = 15.0) {
    auto cams = make_orbit_cameras(12, deg_to_rad(elevation_deg), radius,
                                   focal_from_fov(deg_to_rad(45.0), res), res);
    const int idx = static_cast<int>(azimuth_deg / 360.0 * 12.0);
    return cams[idx];
}

GaussianScene random_scene(std::uint64_t seed, int count, double color_margin = 0.0) {
    RngStream rng(seed);
    GaussianScene scene;
    for (int i = 0; i < count; ++i) {
        Gaussian3D g;
        g.mean = Eigen::Vector3d(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                                 rng.uniform(-0.6, 0.6));
        g.log_scale = Eigen::Vector3d(rng.uniform(-3.0, -1.0), rng.uniform(-3.0, -1.0),
                                      rng.uniform(-3.0, -1.0));
        g.rotation = Eigen::Vector4d(rng.gaussian(), rng.gaussian(), rng.gaussian(),
                                     rng.gaussian());
        if (g.rotation.norm() < 1e-3) g.rotation = Eigen::Vector4d(1, 0, 0, 0);
        g.opacity_logit = rng.uniform(-1.5, 1.5);
        g.color = Eigen::Vector3d(rng.uniform(color_margin, 1.0 - color_margin),
                                  rng.uniform(color_margin, 1.0 - color_margin),
                                  rng.uniform(color_margin, 1.0 - color_margin));
        scene.gaussians.push_back(g);
    }
    return scene;
}

double image_max_abs_diff(const ImageBuffer& a, const ImageBuffer& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
    return m;
}

} // namespace

TEST_CASE("on-axis projection matches the pinhole closed form") {
    Camera cam = test_camera(64);
    // place the Gaussian on the optical axis at known camera depth
    const double z = 1.8;
    Eigen::Vector3d fwd = cam.rotation.row(2).transpose();
    Gaussian3D g;
    g.mean = cam.center() + z * fwd;
    const double sigma = 0.05;
    g.log_scale = Eigen::Vector3d::Constant(std::log(sigma));
    auto splat = project_gaussian(g, cam);
    REQUIRE(splat.has_value());
    CHECK(splat->camera_depth == doctest::Approx(z).epsilon(1e-9));
    const double want = std::pow(cam.focal * sigma / z, 2) + 0.3;
    CHECK(splat->cov2d(0, 0) == doctest::Approx(want).epsilon(0.01));
    CHECK(splat->cov2d(1, 1) == doctest::Approx(want).epsilon(0.01));
    CHECK(std::abs(splat->cov2d(0, 1)) < 0.01 * want);
}

TEST_CASE("gaussians behind the near plane are culled") {
    Camera cam = test_camera();
    Gaussian3D g;
    g.mean = cam.center() - cam.rotation.row(2).transpose(); // behind the camera
    CHECK_FALSE(project_gaussian(g, cam).has_value());
    Gaussian3D at_plane;
    at_plane.mean = cam.center();
    CHECK_FALSE(project_gaussian(at_plane, cam).has_value());
}

TEST_CASE("world origin projects to the image center") {
    for (const auto& cam : make_orbit_cameras(9, deg_to_rad(20.0), 2.5,
                                              focal_from_fov(deg_to_rad(45.0), 48),
                                              48)) {
        Gaussian3D g; // mean at origin
        auto splat = project_gaussian(g, cam);
        REQUIRE(splat.has_value());
        CHECK(splat->mean2d.x() == doctest::Approx(24.0).epsilon(1e-9));
        CHECK(splat->mean2d.y() == doctest::Approx(24.0).epsilon(1e-9));
    }
}

TEST_CASE("empty scene renders the background") {
    Camera cam = test_camera();
    GaussianScene scene;
    auto out = render(scene, cam, Eigen::Vector3d::Zero());
    for (double v : out.image.pixels) CHECK(v == 0.0);
    for (double v : out.depth.depth) CHECK(v == 0.0);
    for (double v : out.depth.alpha) CHECK(v == 0.0);
    auto out_bg = render(scene, cam, Eigen::Vector3d(0.25, 0.5, 0.75));
    CHECK(out_bg.image.at(3, 4, 0) == 0.25);
    CHECK(out_bg.image.at(3, 4, 1) == 0.5);
    CHECK(out_bg.image.at(3, 4, 2) == 0.75);
}

TEST_CASE("single splat compositing closed form") {
    const int res = 33; // odd so a pixel center sits exactly on the axis
    Camera cam = test_camera(res);
    Gaussian3D g;
    const double z = 2.0;
    g.mean = cam.center() + z * cam.rotation.row(2).transpose();
    g.log_scale = Eigen::Vector3d::Constant(std::log(0.08));
    g.opacity_logit = 0.8;
    g.color = Eigen::Vector3d(0.9, 0.2, 0.4);
    GaussianScene scene;
    scene.gaussians.push_back(g);
    const Eigen::Vector3d bg(0.1, 0.1, 0.1);
    auto out = render(scene, cam, bg);

    // the on-axis pixel: mean2d lands on the center-pixel center at (res/2, res/2)
    const int pr = res / 2, pc = res / 2;
    const double alpha = sigmoid(0.8); // exactly at the mean
    for (int ch = 0; ch < 3; ++ch)
        CHECK(out.image.at(pr, pc, ch) ==
              doctest::Approx(g.color[ch] * alpha + bg[ch] * (1 - alpha))
                  .epsilon(1e-9));
    CHECK(out.depth.depth_at(pr, pc) == doctest::Approx(z * alpha).epsilon(1e-9));
    CHECK(out.depth.alpha_at(pr, pc) == doctest::Approx(alpha).epsilon(1e-9));
}

TEST_CASE("two coincident splats composite front to back") {
    const int res = 33;
    Camera cam = test_camera(res);
    Eigen::Vector3d fwd = cam.rotation.row(2).transpose();
    Gaussian3D front, back;
    front.mean = cam.center() + 1.5 * fwd;
    back.mean = cam.center() + 2.5 * fwd;
    for (Gaussian3D* g : {&front, &back})
        g->log_scale = Eigen::Vector3d::Constant(std::log(0.08));
    front.opacity_logit = 0.3;
    front.color = Eigen::Vector3d(1.0, 0.0, 0.0);
    back.opacity_logit = -0.4;
    back.color = Eigen::Vector3d(0.0, 1.0, 0.0);
    GaussianScene scene;
    scene.gaussians.push_back(back); // insertion order must not matter
    scene.gaussians.push_back(front);
    const Eigen::Vector3d bg(0.0, 0.0, 1.0);
    auto out = render(scene, cam, bg);
    const int p = res / 2;
    const double a1 = sigmoid(0.3), a2 = sigmoid(-0.4);
    const Eigen::Vector3d want = front.color * a1 + back.color * a2 * (1 - a1) +
                                 bg * (1 - a1) * (1 - a2);
    for (int ch = 0; ch < 3; ++ch)
        CHECK(out.image.at(p, p, ch) == doctest::Approx(want[ch]).epsilon(1e-9));
    CHECK(out.depth.depth_at(p, p) ==
          doctest::Approx(1.5 * a1 + 2.5 * a2 * (1 - a1)).epsilon(1e-9));
}

TEST_CASE("non-finite scenes are rejected") {
    Camera cam = test_camera();
    GaussianScene scene = random_scene(1, 3);
    scene.gaussians[1].mean.x() = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(render(scene, cam, Eigen::Vector3d::Zero()), numerical_error);
}

TEST_CASE("render output ranges are valid") {
    Camera cam = test_camera();
    GaussianScene scene = random_scene(2, 40);
    auto out = render(scene, cam, Eigen::Vector3d(1, 1, 1));
    for (double v : out.image.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (double a : out.depth.alpha) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
}

TEST_CASE("tiled renderer matches the brute-force oracle bit for bit") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        Camera cam = test_camera(32, 2.0, 30.0 * static_cast<double>(seed % 4),
                                 seed % 2 ? 25.0 : -5.0);
        GaussianScene scene = random_scene(100 + seed, 64);
        const Eigen::Vector3d bg(0.2, 0.3, 0.4);
        auto fast = render(scene, cam, bg);
        auto oracle = render_reference(scene, cam, bg);
        CHECK(image_max_abs_diff(fast.image, oracle.image) == 0.0);
        CHECK(fast.depth.depth == oracle.depth.depth);
        CHECK(fast.depth.alpha == oracle.depth.alpha);
    }
}

TEST_CASE("rendering is deterministic") {
    Camera cam = test_camera();
    GaussianScene scene = random_scene(3, 50);
    auto a = render(scene, cam, Eigen::Vector3d(0.5, 0.5, 0.5));
    auto b = render(scene, cam, Eigen::Vector3d(0.5, 0.5, 0.5));
    CHECK(a.image.pixels == b.image.pixels);
    CHECK(a.depth.depth == b.depth.depth);
}

TEST_CASE("backward pass rejects a mismatched forward record") {
    Camera cam = test_camera();
    Camera other = test_camera(32, 2.0, 90.0);
    GaussianScene scene = random_scene(4, 8);
    auto out = render(scene, cam, Eigen::Vector3d::Zero());
    ImageBuffer d_image(cam.height, cam.width);
    std::vector<double> d_depth(static_cast<std::size_t>(cam.height) * cam.width, 0.0);
    CHECK_THROWS_AS(render_backward(scene, other, out, d_image, d_depth),
                    contract_violation);
}

namespace {

// L = sum((render - I*)^2) + sum((depth - D*)^2), the shape of the losses the
// trainer feeds back; returns L and fills the upstream derivative buffers.
double render_loss(const GaussianScene& scene, const Camera& cam,
                   const Eigen::Vector3d& bg, const ImageBuffer& target_img,
                   const std::vector<double>& target_depth,
                   ImageBuffer* d_image = nullptr,
                   std::vector<double>* d_depth = nullptr) {
    auto out = render(scene, cam, bg);
    double loss = 0.0;
    if (d_image) *d_image = ImageBuffer(cam.height, cam.width);
    if (d_depth)
        d_depth->assign(static_cast<std::size_t>(cam.height) * cam.width, 0.0);
    for (std::size_t i = 0; i < out.image.pixels.size(); ++i) {
        const double d = out.image.pixels[i] - target_img.pixels[i];
        loss += d * d;
        if (d_image) d_image->pixels[i] = 2.0 * d;
    }
    for (std::size_t i = 0; i < out.depth.depth.size(); ++i) {
        const double d = out.depth.depth[i] - target_depth[i];
        loss += d * d;
        if (d_depth) (*d_depth)[i] = 2.0 * d;
    }
    return loss;
}

void fd_check_scene(GaussianScene& scene, const Camera& cam,
                    const Eigen::Vector3d& bg, const ImageBuffer& target_img,
                    const std::vector<double>& target_depth, double h = 1e-4,
                    double tol = 1e-3) {
    ImageBuffer d_image;
    std::vector<double> d_depth;
    render_loss(scene, cam, bg, target_img, target_depth, &d_image, &d_depth);
    auto out = render(scene, cam, bg);
    SceneGrads grads = render_backward(scene, cam, out, d_image, d_depth);

    auto fd = [&](double* p) {
        const double saved = *p;
        *p = saved + h;
        const double fp = render_loss(scene, cam, bg, target_img, target_depth);
        *p = saved - h;
        const double fm = render_loss(scene, cam, bg, target_img, target_depth);
        *p = saved;
        return (fp - fm) / (2.0 * h);
    };
    for (std::size_t i = 0; i < scene.size(); ++i) {
        Gaussian3D& g = scene.gaussians[i];
        for (int k = 0; k < 3; ++k) {
            INFO("gaussian ", i, " mean[", k, "]");
            CHECK(rel_err(fd(&g.mean[k]), grads.d_mean[i][k]) <= tol);
        }
        for (int k = 0; k < 3; ++k) {
            INFO("gaussian ", i, " log_scale[", k, "]");
            CHECK(rel_err(fd(&g.log_scale[k]), grads.d_log_scale[i][k]) <= tol);
        }
        for (int k = 0; k < 4; ++k) {
            INFO("gaussian ", i, " rotation[", k, "]");
            CHECK(rel_err(fd(&g.rotation[k]), grads.d_rotation[i][k]) <= tol);
        }
        {
            INFO("gaussian ", i, " opacity_logit");
            CHECK(rel_err(fd(&g.opacity_logit), grads.d_opacity_logit[i]) <= tol);
        }
        for (int k = 0; k < 3; ++k) {
            INFO("gaussian ", i, " color[", k, "]");
            CHECK(rel_err(fd(&g.color[k]), grads.d_color[i][k]) <= tol);
        }
    }
}

} // namespace

TEST_CASE("analytic gradients match finite differences") {
    const int res = 16;
    Camera cam = test_camera(res, 1.8, 60.0, 10.0);
    // colors kept inside (0,1) so the output clamp never binds
    GaussianScene scene = random_scene(5, 6, 0.15);
    GaussianScene target_scene = random_scene(6, 6, 0.15);
    const Eigen::Vector3d bg(0.35, 0.45, 0.55);
    auto target = render(target_scene, cam, bg);
    fd_check_scene(scene, cam, bg, target.image, target.depth.depth);
}

TEST_CASE("gradients flow through the depth channel alone") {
    const int res = 16;
    Camera cam = test_camera(res, 2.2, 120.0, -5.0);
    GaussianScene scene = random_scene(7, 4, 0.15);
    auto out = render(scene, cam, Eigen::Vector3d(0.5, 0.5, 0.5));
    ImageBuffer d_image(res, res); // zero image upstream
    std::vector<double> d_depth(res * res, 1.0);
    SceneGrads grads = render_backward(scene, cam, out, d_image, d_depth);
    double total = 0.0;
    for (const auto& v : grads.d_mean) total += v.cwiseAbs().sum();
    CHECK(total > 0.0);
    // against finite differences of sum(depth)
    auto depth_sum = [&]() {
        auto o = render(scene, cam, Eigen::Vector3d(0.5, 0.5, 0.5));
        double s = 0.0;
        for (double d : o.depth.depth) s += d;
        return s;
    };
    Gaussian3D& g = scene.gaussians[0];
    const double h = 1e-4;
    for (int k = 0; k < 3; ++k) {
        const double saved = g.mean[k];
        g.mean[k] = saved + h;
        const double fp = depth_sum();
        g.mean[k] = saved - h;
        const double fm = depth_sum();
        g.mean[k] = saved;
        CHECK(rel_err((fp - fm) / (2 * h), grads.d_mean[0][k]) <= 1e-3);
    }
}

TEST_CASE("backward pass is deterministic") {
    Camera cam = test_camera();
    GaussianScene scene = random_scene(8, 30);
    auto out = render(scene, cam, Eigen::Vector3d::Zero());
    ImageBuffer d_image(cam.height, cam.width);
    for (std::size_t i = 0; i < d_image.pixels.size(); ++i)
        d_image.pixels[i] = static_cast<double>(i % 7) - 3.0;
    std::vector<double> d_depth(static_cast<std::size_t>(cam.height) * cam.width, 0.3);
    auto g1 = render_backward(scene, cam, out, d_image, d_depth);
    auto g2 = render_backward(scene, cam, out, d_image, d_depth);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        CHECK(g1.d_mean[i] == g2.d_mean[i]);
        CHECK(g1.d_rotation[i] == g2.d_rotation[i]);
    }
}
