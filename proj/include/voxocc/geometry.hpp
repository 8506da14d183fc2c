// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "voxocc/core.hpp"
#include "voxocc/tensor.hpp"

namespace voxocc {

// Row-major 3x3 rotation.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    Vec3 apply(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Vec3 apply_transposed(const Vec3& v) const {
        return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
                m[1] * v.x + m[4] * v.y + m[7] * v.z,
                m[2] * v.x + m[5] * v.y + m[8] * v.z};
    }
};

// Pinhole camera. Extrinsics map world points into the camera frame:
// x_cam = R * x_world + t, with +z the viewing direction and pixel (x, y) in
// the continuous lattice [0, width-1] x [0, height-1].
struct Camera {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    Mat3 rotation;
    Vec3 translation;
    int width = 0, height = 0;
    double near = 0.1, far = 100.0;

    Vec3 center() const { return rotation.apply_transposed(translation * -1.0); }
    Vec3 forward_axis() const { return rotation.apply_transposed({0.0, 0.0, 1.0}); }
    void validate() const;
};

struct CameraRig {
    std::vector<Camera> cameras;
    size_t size() const { return cameras.size(); }
};

struct Ray {
    Vec3 origin;
    Vec3 direction; // unit length
    double near = 0.0, far = 0.0;

    Vec3 at(double t) const { return origin + direction * t; }
};

struct Projection {
    Vec2 pixel;
    double depth = 0.0;
    bool valid = false;
};

// Perspective projection. valid means in front of the camera within
// [near, far] and pixel inside image bounds; invalid projections still carry
// the computed pixel/depth where finite.
Projection project_point(const Camera& cam, const Vec3& x);

// Ray through a pixel; throws on out-of-bounds pixels.
Ray generate_ray(const Camera& cam, const Vec2& pixel);

struct PositionalEncodingConfig {
    int n_frequencies = 6;
    bool include_input = true;

    int output_dim() const { return 3 * ((include_input ? 1 : 0) + 2 * n_frequencies); }
};

// Per coordinate: optional raw value, then sin/cos pairs at frequencies
// 2^k * pi for k = 0..n_frequencies-1.
void positional_encoding(const Vec3& x, const PositionalEncodingConfig& cfg, double* out);
std::vector<double> positional_encoding(const Vec3& x, const PositionalEncodingConfig& cfg);

// Plain (non-autodiff) single-sample bilinear lookup with clamp-to-border.
struct FeatureMap {
    int height = 0, width = 0, channels = 0;
    std::vector<double> data; // [H, W, C]

    double at(int y, int x, int c) const {
        return data[size_t((y * width + x) * channels + c)];
    }
};

std::vector<double> bilinear_sample(const FeatureMap& fmap, const Vec2& pixel);

// Inward-facing ring of cameras around a target point.
CameraRig make_ring_rig(int n_cameras, double radius, double height, const Vec3& target,
                        int image_width, int image_height, double focal_px, double near,
                        double far);

// Structured text round trip; keys documented in the README.
void save_rig(const std::string& path, const CameraRig& rig);
CameraRig load_rig(const std::string& path);

} // namespace voxocc
