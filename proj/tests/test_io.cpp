#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "splat/errors.hpp"
#include "splat/imageio.hpp"
#include "splat/ply.hpp"
#include "splat/util.hpp"

using namespace splat;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "splat_io_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

ImageBuffer noisy_image(int h, int w, std::uint64_t seed) {
    RngStream rng(seed);
    ImageBuffer img(h, w);
    for (auto& p : img.pixels) p = rng.uniform_int(0, 255) / 255.0;
    return img;
}

} // namespace

TEST_CASE("png round trip recovers every 8-bit pixel") {
    ImageBuffer img = noisy_image(13, 31, 21); // odd sizes cross block edges
    const auto path = scratch("rt.png");
    write_png(path.string(), img);
    ImageBuffer back = read_png(path.string());
    REQUIRE(back.height == img.height);
    REQUIRE(back.width == img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(back.pixels[i] == img.pixels[i]);
}

TEST_CASE("png bytes are a pure function of the pixels") {
    ImageBuffer img = noisy_image(16, 16, 3);
    const auto a = scratch("det_a.png"), b = scratch("det_b.png");
    write_png(a.string(), img);
    write_png(b.string(), img);
    CHECK(slurp(a) == slurp(b));
}

TEST_CASE("png writer quantizes by rounding") {
    ImageBuffer img(1, 1);
    img.at(0, 0, 0) = 0.5;   // -> 128 (lround half away from zero)
    img.at(0, 0, 1) = 1.0;   // -> 255
    img.at(0, 0, 2) = 0.001; // -> 0
    const auto path = scratch("quant.png");
    write_png(path.string(), img);
    ImageBuffer back = read_png(path.string());
    CHECK(back.at(0, 0, 0) == 128.0 / 255.0);
    CHECK(back.at(0, 0, 1) == 1.0);
    CHECK(back.at(0, 0, 2) == 0.0);
}

TEST_CASE("png reader rejects foreign files") {
    const auto path = scratch("junk.png");
    std::ofstream(path, std::ios::binary) << "not a png at all";
    CHECK_THROWS_AS(read_png(path.string()), data_error);
    CHECK_THROWS_AS(read_png(scratch("missing.png").string()), data_error);
}

TEST_CASE("large image spans several stored deflate blocks") {
    ImageBuffer img = noisy_image(96, 256, 8); // > 64 KiB of scanline data
    const auto path = scratch("big.png");
    write_png(path.string(), img);
    ImageBuffer back = read_png(path.string());
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(back.pixels[i] == img.pixels[i]);
}

TEST_CASE("depth plane round trip is float32-exact") {
    RngStream rng(17);
    const int h = 7, w = 5;
    std::vector<double> vals(static_cast<std::size_t>(h) * w);
    for (auto& v : vals) v = static_cast<double>(static_cast<float>(rng.gaussian() * 3.0));
    const auto path = scratch("plane.bin");
    write_depth(path.string(), vals, h, w);
    int rh = 0, rw = 0;
    auto back = read_depth(path.string(), &rh, &rw);
    CHECK(rh == h);
    CHECK(rw == w);
    REQUIRE(back.size() == vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) CHECK(back[i] == vals[i]);
}

TEST_CASE("depth reader validates the header") {
    const auto path = scratch("bad.bin");
    std::ofstream(path, std::ios::binary) << "DPTHxxxx";
    CHECK_THROWS_AS(read_depth(path.string(), nullptr, nullptr), data_error);
    std::ofstream(path, std::ios::binary) << "NOPE";
    CHECK_THROWS_AS(read_depth(path.string(), nullptr, nullptr), data_error);
}

TEST_CASE("ply round trip preserves the scene at float precision") {
    RngStream rng(29);
    GaussianScene scene;
    scene.bound_radius = 1.75;
    for (int i = 0; i < 23; ++i) {
        Gaussian3D g;
        g.mean = Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian());
        g.log_scale = Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian()) * 0.3;
        g.rotation = Eigen::Vector4d(rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian());
        g.opacity_logit = rng.gaussian();
        g.color = Eigen::Vector3d(rng.uniform(), rng.uniform(), rng.uniform());
        scene.gaussians.push_back(g);
    }
    const auto path = scratch("scene.ply");
    export_ply(scene, path.string());
    GaussianScene back = import_ply(path.string());
    REQUIRE(back.size() == scene.size());
    CHECK(back.bound_radius == scene.bound_radius);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto& a = scene.gaussians[i];
        const auto& b = back.gaussians[i];
        for (int k = 0; k < 3; ++k) {
            CHECK(b.mean[k] == static_cast<double>(static_cast<float>(a.mean[k])));
            CHECK(b.log_scale[k] == static_cast<double>(static_cast<float>(a.log_scale[k])));
            CHECK(b.color[k] == static_cast<double>(static_cast<float>(a.color[k])));
        }
        for (int k = 0; k < 4; ++k)
            CHECK(b.rotation[k] == static_cast<double>(static_cast<float>(a.rotation[k])));
        CHECK(b.opacity_logit == static_cast<double>(static_cast<float>(a.opacity_logit)));
    }
}

TEST_CASE("ply header follows the splat layout") {
    GaussianScene scene;
    scene.gaussians.emplace_back();
    const auto path = scratch("header.ply");
    export_ply(scene, path.string());
    auto bytes = slurp(path);
    std::string head(bytes.begin(), bytes.begin() + std::min<std::size_t>(bytes.size(), 512));
    CHECK(head.rfind("ply\n", 0) == 0);
    CHECK(head.find("format binary_little_endian 1.0") != std::string::npos);
    CHECK(head.find("element vertex 1") != std::string::npos);
    CHECK(head.find("property float x") != std::string::npos);
    CHECK(head.find("property float opacity") != std::string::npos);
    CHECK(head.find("end_header\n") != std::string::npos);
}

TEST_CASE("ply export is deterministic") {
    RngStream rng(2);
    GaussianScene scene;
    for (int i = 0; i < 5; ++i) {
        Gaussian3D g;
        g.mean = Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian());
        scene.gaussians.push_back(g);
    }
    const auto a = scratch("det_a.ply"), b = scratch("det_b.ply");
    export_ply(scene, a.string());
    export_ply(scene, b.string());
    CHECK(slurp(a) == slurp(b));
}

TEST_CASE("ply import rejects malformed files") {
    const auto path = scratch("bad.ply");
    std::ofstream(path, std::ios::binary) << "ply\nformat ascii 1.0\nend_header\n";
    CHECK_THROWS_AS(import_ply(path.string()), data_error);
    std::ofstream(path, std::ios::binary) << "garbage";
    CHECK_THROWS_AS(import_ply(path.string()), data_error);
}
