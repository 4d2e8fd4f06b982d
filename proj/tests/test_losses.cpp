#include "doctest.h"

#include <cmath>
#include <vector>

#include "splat/errors.hpp"
#include "splat/latent.hpp"
#include "splat/losses.hpp"
#include "splat/util.hpp"

using namespace splat;

TEST_CASE("rgb loss on identical buffers is zero") {
    std::vector<ImageBuffer> a{ImageBuffer(4, 4, 0.3), ImageBuffer(4, 4, 0.9)};
    CHECK(rgb_loss(a, a) == 0.0);
}

TEST_CASE("one unit error in a 2x2 image gives 1/12") {
    std::vector<ImageBuffer> out{ImageBuffer(2, 2, 0.0)};
    std::vector<ImageBuffer> gt{ImageBuffer(2, 2, 0.0)};
    out[0].at(1, 0, 2) = 1.0;
    CHECK(rgb_loss(out, gt) == doctest::Approx(1.0 / 12.0).epsilon(1e-12));
    CHECK(rgb_loss(gt, out) == rgb_loss(out, gt));
}

TEST_CASE("rgb loss averages over all buffers") {
    // Two views, error only in the first: the denominator still counts both.
    std::vector<ImageBuffer> out{ImageBuffer(2, 2, 1.0), ImageBuffer(2, 2, 0.0)};
    std::vector<ImageBuffer> gt{ImageBuffer(2, 2, 0.0), ImageBuffer(2, 2, 0.0)};
    CHECK(rgb_loss(out, gt) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("rgb loss rejects shape mismatches") {
    std::vector<ImageBuffer> a{ImageBuffer(2, 2)};
    std::vector<ImageBuffer> b{ImageBuffer(2, 3)};
    CHECK_THROWS_AS(rgb_loss(a, b), shape_error);
    std::vector<ImageBuffer> c{ImageBuffer(2, 2), ImageBuffer(2, 2)};
    CHECK_THROWS_AS(rgb_loss(a, c), shape_error);
}

TEST_CASE("rgb gradient matches finite differences") {
    RngStream rng(7);
    std::vector<ImageBuffer> out{ImageBuffer(2, 3)}, gt{ImageBuffer(2, 3)};
    for (auto& p : out[0].pixels) p = rng.uniform();
    for (auto& p : gt[0].pixels) p = rng.uniform();
    std::vector<ImageBuffer> grad;
    const double base = rgb_loss_grad(out, gt, grad);
    CHECK(base == rgb_loss(out, gt));
    const double h = 1e-6;
    for (std::size_t i = 0; i < out[0].pixels.size(); ++i) {
        auto probe = out;
        probe[0].pixels[i] += h;
        const double up = rgb_loss(probe, gt);
        probe[0].pixels[i] -= 2 * h;
        const double dn = rgb_loss(probe, gt);
        CHECK(grad[0].pixels[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("depth loss identities") {
    std::vector<DepthBuffer> d{DepthBuffer(2, 2)};
    std::vector<Mask> m{Mask(2, 2)};
    m[0].on.assign(4, 1);
    CHECK(depth_loss(d, d, m) == 0.0);

    std::vector<Mask> empty{Mask(2, 2)};
    std::vector<DepthBuffer> e{DepthBuffer(2, 2)};
    e[0].depth_at(0, 0) = 5.0;
    CHECK(depth_loss(e, d, empty) == 0.0);
}

TEST_CASE("single masked error of 0.5 among four masked pixels") {
    std::vector<DepthBuffer> out{DepthBuffer(2, 2)}, gt{DepthBuffer(2, 2)};
    std::vector<Mask> m{Mask(2, 2)};
    m[0].on.assign(4, 1);
    out[0].depth_at(0, 1) = 0.5;
    CHECK(depth_loss(out, gt, m) == doctest::Approx(0.0625).epsilon(1e-12));
}

TEST_CASE("masked-out pixels carry no loss and no gradient") {
    std::vector<DepthBuffer> out{DepthBuffer(2, 2)}, gt{DepthBuffer(2, 2)};
    std::vector<Mask> m{Mask(2, 2)};
    m[0].on[0] = 1;
    out[0].depth_at(0, 0) = 1.0; // masked in
    out[0].depth_at(1, 1) = 9.0; // masked out
    CHECK(depth_loss(out, gt, m) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<std::vector<double>> grad;
    depth_loss_grad(out, gt, m, grad);
    CHECK(grad[0][0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(grad[0][3] == 0.0);
}

TEST_CASE("depth gradient matches finite differences") {
    RngStream rng(9);
    std::vector<DepthBuffer> out{DepthBuffer(3, 2)}, gt{DepthBuffer(3, 2)};
    std::vector<Mask> m{Mask(3, 2)};
    for (std::size_t i = 0; i < 6; ++i) {
        out[0].depth[i] = rng.uniform() * 3.0;
        gt[0].depth[i] = rng.uniform() * 3.0;
        m[0].on[i] = rng.uniform() < 0.7 ? 1 : 0;
    }
    m[0].on[0] = 1;
    std::vector<std::vector<double>> grad;
    const double base = depth_loss_grad(out, gt, m, grad);
    CHECK(base == depth_loss(out, gt, m));
    const double h = 1e-6;
    for (std::size_t i = 0; i < 6; ++i) {
        auto probe = out;
        probe[0].depth[i] += h;
        const double up = depth_loss(probe, gt, m);
        probe[0].depth[i] -= 2 * h;
        const double dn = depth_loss(probe, gt, m);
        CHECK(grad[0][i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("3d loss composition") {
    LossConfig cfg;
    CHECK(loss_3d(1.0, 1.0, cfg) == doctest::Approx(1.2).epsilon(1e-12));
    CHECK(loss_3d(0.0, 0.0, cfg) == 0.0);
    CHECK(loss_3d(0.0, 3.5, cfg) == doctest::Approx(0.2 * 3.5).epsilon(1e-12));
}

TEST_CASE("latent mse identities") {
    LatentGrid z(2, 2, 2, 12, 2);
    RngStream rng(4);
    for (auto& v : z.data) v = rng.gaussian();
    CHECK(loss_2d(z, z) == 0.0);

    LatentGrid shifted = z;
    for (auto& v : shifted.data) v += 0.25;
    CHECK(loss_2d(shifted, z) == doctest::Approx(0.0625).epsilon(1e-12));
    CHECK(loss_2d(z, shifted) >= 0.0);

    LatentGrid other(1, 2, 2, 12, 2);
    CHECK_THROWS_AS(loss_2d(z, other), shape_error);
}

TEST_CASE("latent mse gradient matches finite differences") {
    LatentGrid z(1, 2, 2, 3, 1), gt(1, 2, 2, 3, 1);
    RngStream rng(6);
    for (auto& v : z.data) v = rng.gaussian();
    for (auto& v : gt.data) v = rng.gaussian();
    LatentGrid grad;
    const double base = loss_2d_grad(z, gt, grad);
    CHECK(base == loss_2d(z, gt));
    const double h = 1e-6;
    for (std::size_t i = 0; i < z.size(); ++i) {
        auto probe = z;
        probe.data[i] += h;
        const double up = loss_2d(probe, gt);
        probe.data[i] -= 2 * h;
        const double dn = loss_2d(probe, gt);
        CHECK(grad.data[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("distillation loss composition") {
    LossConfig cfg;
    CHECK(loss_distill(1.0, 1.0, cfg) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(loss_distill(0.7, 0.0, cfg) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(loss_distill(0.0, 2.0, cfg) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("negative weights are rejected") {
    LossConfig bad;
    bad.lambda_depth = -0.1;
    CHECK_THROWS_AS(loss_3d(1.0, 1.0, bad), invalid_parameter);
    LossConfig bad2;
    bad2.lambda_3d = -1.0;
    CHECK_THROWS_AS(loss_distill(1.0, 1.0, bad2), invalid_parameter);
}

TEST_CASE("coverage mask thresholds the alpha plane") {
    DepthBuffer gt(2, 2);
    gt.alpha_at(0, 0) = 0.9;
    gt.alpha_at(0, 1) = 0.5; // not strictly above
    gt.alpha_at(1, 0) = 0.51;
    Mask m = coverage_mask(gt);
    CHECK(m.on[0] == 1);
    CHECK(m.on[1] == 0);
    CHECK(m.on[2] == 1);
    CHECK(m.on[3] == 0);
    CHECK(m.count() == 2u);
}
