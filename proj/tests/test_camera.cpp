#include <Eigen/LU>
#include "doctest.h"
#include "splat/camera.hpp"
#include "splat/errors.hpp"
#include "splat/util.hpp"

using namespace splat;

TEST_CASE("orbit cameras cover azimuth uniformly") {
    auto cams = make_orbit_cameras(4, deg_to_rad(10.0), 2.0, 100.0, 64);
    REQUIRE(cams.size() == 4);
    for (int i = 0; i < 4; ++i)
        CHECK(cams[i].azimuth == doctest::Approx(i * kPi / 2.0).epsilon(1e-12));
}

TEST_CASE("orbit camera looks at the origin") {
    auto cams = make_orbit_cameras(7, deg_to_rad(25.0), 1.7, 80.0, 32);
    for (const auto& c : cams) {
        Eigen::Vector3d to_origin = c.rotation * (Eigen::Vector3d::Zero() - c.center());
        CHECK(std::abs(to_origin.x()) < 1e-12);
        CHECK(std::abs(to_origin.y()) < 1e-12);
        CHECK(to_origin.z() > 0.0);
    }
}

TEST_CASE("84-view orbit ring geometry") {
    auto cams = make_orbit_cameras(84, deg_to_rad(10.0), 1.5, 120.0, 64);
    REQUIRE(cams.size() == 84);
    double max_gap = 0.0;
    for (std::size_t i = 0; i < cams.size(); ++i) {
        CHECK(cams[i].center().norm() == doctest::Approx(1.5).epsilon(1e-12));
        const double next =
            i + 1 < cams.size() ? cams[i + 1].azimuth : cams[0].azimuth + 2 * kPi;
        max_gap = std::max(max_gap, next - cams[i].azimuth);
    }
    CHECK(max_gap == doctest::Approx(2 * kPi / 84).epsilon(1e-9));
}

TEST_CASE("orbit camera rotations are orthonormal") {
    auto cams = make_orbit_cameras(9, deg_to_rad(-5.0), 2.2, 90.0, 48);
    for (const auto& c : cams) {
        CHECK((c.rotation.transpose() * c.rotation - Eigen::Matrix3d::Identity())
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
        CHECK(c.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("make_orbit_cameras rejects zero count") {
    CHECK_THROWS_AS(make_orbit_cameras(0, 0.0, 1.0, 50.0, 32), invalid_parameter);
}

TEST_CASE("select_input_views divisible case") {
    CHECK(select_input_views(8, 4) == std::vector<int>{0, 2, 4, 6});
}

TEST_CASE("select_input_views 84 to 16") {
    const std::vector<int> want = {0,  5,  10, 15, 21, 26, 31, 36,
                                   42, 47, 52, 57, 63, 68, 73, 78};
    CHECK(select_input_views(84, 16) == want);
}

TEST_CASE("select_input_views identity case") {
    CHECK(select_input_views(5, 5) == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("select_input_views is strictly increasing and starts at zero") {
    auto idx = select_input_views(37, 11);
    REQUIRE(idx.size() == 11);
    CHECK(idx.front() == 0);
    for (std::size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] > idx[i - 1]);
    CHECK_THROWS_AS(select_input_views(4, 5), invalid_parameter);
}

TEST_CASE("pose encoding at zero angles") {
    Camera c;
    c.azimuth = 0.0;
    c.elevation = 0.0;
    auto enc = encode_pose(c, 2);
    REQUIRE(enc.size() == 8);
    // layout: per angle, sin/cos interleaved over frequencies
    for (std::size_t i = 0; i < enc.size(); i += 2) {
        CHECK(enc[i] == 0.0);
        CHECK(enc[i + 1] == 1.0);
    }
}

TEST_CASE("pose encoding of azimuth pi") {
    Camera c;
    c.azimuth = kPi;
    c.elevation = 0.0;
    auto enc = encode_pose(c, 1);
    REQUIRE(enc.size() == 4);
    CHECK(enc[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(enc[1] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("pose encoding is 2-pi periodic") {
    Camera a, b;
    a.azimuth = 0.37;
    a.elevation = -0.2;
    b = a;
    b.azimuth += 2 * kPi;
    auto ea = encode_pose(a, 4);
    auto eb = encode_pose(b, 4);
    REQUIRE(ea.size() == eb.size());
    for (std::size_t i = 0; i < ea.size(); ++i)
        CHECK(ea[i] == doctest::Approx(eb[i]).epsilon(1e-12));
}

TEST_CASE("pose encoding entries stay in unit range") {
    auto cams = make_orbit_cameras(13, deg_to_rad(17.0), 1.3, 70.0, 32);
    for (const auto& c : cams)
        for (double v : encode_pose(c, 6)) CHECK(std::abs(v) <= 1.0);
}

TEST_CASE("focal from vertical field of view") {
    CHECK(focal_from_fov(deg_to_rad(90.0), 64) == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(focal_from_fov(deg_to_rad(45.0), 64) ==
          doctest::Approx(32.0 / std::tan(deg_to_rad(22.5))).epsilon(1e-12));
}

TEST_CASE("center pixel ray points along the camera forward axis") {
    auto cams = make_orbit_cameras(5, deg_to_rad(12.0), 1.9, 60.0, 48);
    for (const auto& c : cams) {
        auto [origin, dir] = c.pixel_ray(c.width / 2.0, c.height / 2.0);
        Eigen::Vector3d fwd = c.rotation.row(2).transpose();
        CHECK((dir - fwd).norm() < 1e-12);
        CHECK((origin - c.center()).norm() < 1e-12);
    }
}
