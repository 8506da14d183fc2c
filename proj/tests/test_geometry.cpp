// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "voxocc/geometry.hpp"

using namespace voxocc;

namespace {

Camera axis_camera(double fx = 40.0, int dims = 64) {
    Camera cam;
    cam.fx = cam.fy = fx;
    cam.width = cam.height = dims;
    cam.cx = 0.5 * (dims - 1);
    cam.cy = 0.5 * (dims - 1);
    cam.near = 0.1;
    cam.far = 100.0;
    // Looks along world +x; image right is world +y, image down is world -z.
    cam.rotation.m = {0, 1, 0, 0, 0, -1, 1, 0, 0};
    cam.translation = {0, 0, 0};
    cam.validate();
    return cam;
}

} // namespace

TEST_CASE("on-axis point projects to the principal point at its depth") {
    const Camera cam = axis_camera();
    const Projection p = project_point(cam, {7.5, 0.0, 0.0});
    CHECK(p.valid);
    CHECK(p.pixel.x == doctest::Approx(cam.cx).epsilon(1e-12));
    CHECK(p.pixel.y == doctest::Approx(cam.cy).epsilon(1e-12));
    CHECK(p.depth == doctest::Approx(7.5));
}

TEST_CASE("points behind the camera are invalid, never a fault") {
    const Camera cam = axis_camera();
    CHECK_FALSE(project_point(cam, {-3.0, 0.0, 0.0}).valid);
    CHECK_FALSE(project_point(cam, {0.0, 0.0, 0.0}).valid);
}

TEST_CASE("generate_ray at the principal point follows the forward axis") {
    const Camera cam = axis_camera();
    const Ray ray = generate_ray(cam, {cam.cx, cam.cy});
    const Vec3 fwd = cam.forward_axis();
    CHECK(ray.direction.x == doctest::Approx(fwd.x).epsilon(1e-12));
    CHECK(ray.direction.y == doctest::Approx(fwd.y).epsilon(1e-12));
    CHECK(ray.direction.z == doctest::Approx(fwd.z).epsilon(1e-12));
    CHECK(ray.direction.norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adjacent pixels separate by about 1/focal radians") {
    const Camera cam = axis_camera(40.0);
    const Ray a = generate_ray(cam, {cam.cx, cam.cy});
    const Ray b = generate_ray(cam, {cam.cx + 1.0, cam.cy});
    const double angle = std::acos(std::clamp(a.direction.dot(b.direction), -1.0, 1.0));
    CHECK(angle == doctest::Approx(1.0 / cam.fx).epsilon(1e-3));
}

TEST_CASE("corner rays are symmetric about the forward axis") {
    const Camera cam = axis_camera();
    const Vec3 fwd = cam.forward_axis();
    const double w = cam.width - 1, h = cam.height - 1;
    const double c00 = generate_ray(cam, {0, 0}).direction.dot(fwd);
    const double c10 = generate_ray(cam, {w, 0}).direction.dot(fwd);
    const double c01 = generate_ray(cam, {0, h}).direction.dot(fwd);
    const double c11 = generate_ray(cam, {w, h}).direction.dot(fwd);
    CHECK(c00 == doctest::Approx(c10).epsilon(1e-12));
    CHECK(c00 == doctest::Approx(c01).epsilon(1e-12));
    CHECK(c00 == doctest::Approx(c11).epsilon(1e-12));
}

TEST_CASE("out-of-bounds pixels are an error") {
    const Camera cam = axis_camera();
    CHECK_THROWS_AS(generate_ray(cam, {-1.0, 5.0}), std::invalid_argument);
    CHECK_THROWS_AS(generate_ray(cam, {5.0, double(cam.height)}), std::invalid_argument);
}

TEST_CASE("projection and ray generation are dual on 1000 random triples") {
    const CameraRig rig = make_ring_rig(5, 9.0, 4.0, {0, 0, 1}, 64, 64, 30.0, 0.2, 40.0);
    Rng rng(123);
    for (int trial = 0; trial < 1000; ++trial) {
        const Camera& cam = rig.cameras[size_t(trial) % rig.cameras.size()];
        const Vec2 pixel{rng.uniform(0.0, cam.width - 1.0), rng.uniform(0.0, cam.height - 1.0)};
        const Ray ray = generate_ray(cam, pixel);
        const double t = rng.uniform(ray.near + 0.1, ray.far - 0.1);
        const Projection proj = project_point(cam, ray.at(t));
        REQUIRE(proj.valid);
        CHECK(std::abs(proj.pixel.x - pixel.x) < 1e-6);
        CHECK(std::abs(proj.pixel.y - pixel.y) < 1e-6);
    }
}

TEST_CASE("positional encoding basics") {
    PositionalEncodingConfig cfg;
    cfg.n_frequencies = 6;
    cfg.include_input = true;
    CHECK(cfg.output_dim() == 39); // 3 * (1 + 2*6)

    const std::vector<double> at_zero = positional_encoding({0, 0, 0}, cfg);
    for (int c = 0; c < 3; ++c) {
        const int base = c * 13;
        CHECK(at_zero[size_t(base)] == 0.0);
        for (int k = 0; k < 6; ++k) {
            CHECK(at_zero[size_t(base + 1 + 2 * k)] == doctest::Approx(0.0)); // sin terms
            CHECK(at_zero[size_t(base + 2 + 2 * k)] == doctest::Approx(1.0)); // cos terms
        }
    }

    PositionalEncodingConfig raw;
    raw.n_frequencies = 0;
    raw.include_input = true;
    const std::vector<double> identity = positional_encoding({0.3, -0.7, 2.0}, raw);
    CHECK(identity == std::vector<double>{0.3, -0.7, 2.0});
}

TEST_CASE("positional encoding is Lipschitz-bounded per frequency band") {
    PositionalEncodingConfig cfg;
    cfg.n_frequencies = 5;
    cfg.include_input = false;
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec3 x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        const Vec3 y{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        const auto gx = positional_encoding(x, cfg);
        const auto gy = positional_encoding(y, cfg);
        const double dist = (x - y).norm();
        for (int c = 0; c < 3; ++c)
            for (int k = 0; k < 5; ++k) {
                const double bound = std::pow(2.0, k) * M_PI * dist + 1e-12;
                const int base = c * 10 + 2 * k;
                CHECK(std::abs(gx[size_t(base)] - gy[size_t(base)]) <= bound);
                CHECK(std::abs(gx[size_t(base + 1)] - gy[size_t(base + 1)]) <= bound);
            }
    }
}

TEST_CASE("bilinear sampling hits lattice points exactly and blends midpoints") {
    FeatureMap fm;
    fm.height = 2;
    fm.width = 2;
    fm.channels = 1;
    fm.data = {0.0, 0.0, 1.0, 1.0}; // row y=0: 0,0 ; row y=1: 1,1
    CHECK(bilinear_sample(fm, {1.0, 0.0})[0] == 0.0);
    CHECK(bilinear_sample(fm, {0.0, 1.0})[0] == 1.0);
    CHECK(bilinear_sample(fm, {0.5, 0.5})[0] == doctest::Approx(0.5)); // hand evaluation

    FeatureMap constant;
    constant.height = 3;
    constant.width = 4;
    constant.channels = 2;
    constant.data.assign(24, 3.25);
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        const auto v = bilinear_sample(constant, {rng.uniform(-1, 5), rng.uniform(-1, 4)});
        CHECK(v[0] == doctest::Approx(3.25));
        CHECK(v[1] == doctest::Approx(3.25));
    }
}

TEST_CASE("bilinear sampling is exact on affine feature maps") {
    FeatureMap fm;
    fm.height = 5;
    fm.width = 6;
    fm.channels = 1;
    fm.data.resize(30);
    const double a = 0.7, b = -1.3, c = 0.25;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x) fm.data[size_t(y * 6 + x)] = a * x + b * y + c;
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        const double px = rng.uniform(0.0, 5.0), py = rng.uniform(0.0, 4.0);
        CHECK(bilinear_sample(fm, {px, py})[0] ==
              doctest::Approx(a * px + b * py + c).epsilon(1e-12));
    }
}

TEST_CASE("camera rig text round trip") {
    const CameraRig rig = make_ring_rig(4, 10.0, 5.0, {0.5, -0.5, 1.0}, 48, 48, 25.0, 0.3, 55.0);
    save_rig("/tmp/voxocc_rig.txt", rig);
    const CameraRig loaded = load_rig("/tmp/voxocc_rig.txt");
    REQUIRE(loaded.size() == rig.size());
    for (size_t i = 0; i < rig.size(); ++i) {
        CHECK(loaded.cameras[i].fx == rig.cameras[i].fx);
        CHECK(loaded.cameras[i].width == rig.cameras[i].width);
        for (int j = 0; j < 9; ++j)
            CHECK(loaded.cameras[i].rotation.m[size_t(j)] ==
                  doctest::Approx(rig.cameras[i].rotation.m[size_t(j)]).epsilon(1e-15));
        CHECK(loaded.cameras[i].translation.z ==
              doctest::Approx(rig.cameras[i].translation.z).epsilon(1e-15));
    }
}

TEST_CASE("camera validation rejects bad parameters") {
    Camera cam = axis_camera();
    cam.fx = -1.0;
    CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
    cam = axis_camera();
    cam.near = 5.0;
    cam.far = 1.0;
    CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
    cam = axis_camera();
    cam.rotation.m[0] = 0.5; // breaks orthonormality
    CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
}
