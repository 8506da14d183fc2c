// SPDX-License-Identifier: Apache-2.0
#include "voxocc/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace voxocc {

void Camera::validate() const {
    if (fx <= 0.0 || fy <= 0.0) throw std::invalid_argument("camera: focal lengths must be > 0");
    if (!(0.0 < near && near < far))
        throw std::invalid_argument("camera: requires 0 < near < far");
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera: empty image");
    // Orthonormality: R * R^T == I within 1e-9.
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k)
                dot += rotation.m[size_t(r * 3 + k)] * rotation.m[size_t(c * 3 + k)];
            const double expect = (r == c) ? 1.0 : 0.0;
            if (std::abs(dot - expect) > 1e-9)
                throw std::invalid_argument("camera: rotation is not orthonormal");
        }
    }
}

Projection project_point(const Camera& cam, const Vec3& x) {
    Projection p;
    const Vec3 xc = cam.rotation.apply(x) + cam.translation;
    p.depth = xc.z;
    if (xc.z <= 0.0) return p; // behind camera, pixel undefined
    p.pixel.x = cam.fx * xc.x / xc.z + cam.cx;
    p.pixel.y = cam.fy * xc.y / xc.z + cam.cy;
    const bool in_bounds = p.pixel.x >= 0.0 && p.pixel.x <= double(cam.width - 1) &&
                           p.pixel.y >= 0.0 && p.pixel.y <= double(cam.height - 1);
    p.valid = xc.z >= cam.near && xc.z <= cam.far && in_bounds;
    return p;
}

Ray generate_ray(const Camera& cam, const Vec2& pixel) {
    if (pixel.x < 0.0 || pixel.x > double(cam.width - 1) || pixel.y < 0.0 ||
        pixel.y > double(cam.height - 1))
        throw std::invalid_argument("generate_ray: pixel outside image bounds");
    const Vec3 dir_cam{(pixel.x - cam.cx) / cam.fx, (pixel.y - cam.cy) / cam.fy, 1.0};
    Ray ray;
    ray.origin = cam.center();
    ray.direction = cam.rotation.apply_transposed(dir_cam).normalized();
    // near/far are planes at camera depth; convert to distances along the
    // (tilted) ray so t in [near_t, far_t] spans the same depth range.
    const double cos_scale = 1.0 / dir_cam.norm();
    ray.near = cam.near / cos_scale;
    ray.far = cam.far / cos_scale;
    return ray;
}

void positional_encoding(const Vec3& x, const PositionalEncodingConfig& cfg, double* out) {
    int o = 0;
    const double coords[3] = {x.x, x.y, x.z};
    for (int c = 0; c < 3; ++c) {
        if (cfg.include_input) out[o++] = coords[c];
        double freq = M_PI;
        for (int k = 0; k < cfg.n_frequencies; ++k) {
            out[o++] = std::sin(freq * coords[c]);
            out[o++] = std::cos(freq * coords[c]);
            freq *= 2.0;
        }
    }
}

std::vector<double> positional_encoding(const Vec3& x, const PositionalEncodingConfig& cfg) {
    std::vector<double> out(static_cast<size_t>(cfg.output_dim()));
    positional_encoding(x, cfg, out.data());
    return out;
}

std::vector<double> bilinear_sample(const FeatureMap& fmap, const Vec2& pixel) {
    const double px = std::clamp(pixel.x, 0.0, double(fmap.width - 1));
    const double py = std::clamp(pixel.y, 0.0, double(fmap.height - 1));
    const int x0 = std::min(int(std::floor(px)), fmap.width - 1);
    const int y0 = std::min(int(std::floor(py)), fmap.height - 1);
    const int x1 = std::min(x0 + 1, fmap.width - 1);
    const int y1 = std::min(y0 + 1, fmap.height - 1);
    const double fx = px - x0, fy = py - y0;
    std::vector<double> out(static_cast<size_t>(fmap.channels));
    for (int c = 0; c < fmap.channels; ++c) {
        out[size_t(c)] = (1 - fx) * (1 - fy) * fmap.at(y0, x0, c) +
                         fx * (1 - fy) * fmap.at(y0, x1, c) +
                         (1 - fx) * fy * fmap.at(y1, x0, c) + fx * fy * fmap.at(y1, x1, c);
    }
    return out;
}

CameraRig make_ring_rig(int n_cameras, double radius, double height, const Vec3& target,
                        int image_width, int image_height, double focal_px, double near,
                        double far) {
    CameraRig rig;
    for (int i = 0; i < n_cameras; ++i) {
        const double angle = 2.0 * M_PI * double(i) / double(n_cameras);
        const Vec3 pos{target.x + radius * std::cos(angle), target.y + radius * std::sin(angle),
                       height};
        const Vec3 fwd = (target - pos).normalized();
        // Build an orthonormal camera frame: +z forward, +y pointing down-ish
        // so images read top-to-bottom.
        Vec3 world_up{0.0, 0.0, 1.0};
        Vec3 right = fwd.cross(world_up).normalized();
        Vec3 down = fwd.cross(right).normalized();
        Camera cam;
        cam.fx = cam.fy = focal_px;
        cam.cx = 0.5 * double(image_width - 1);
        cam.cy = 0.5 * double(image_height - 1);
        cam.width = image_width;
        cam.height = image_height;
        cam.near = near;
        cam.far = far;
        cam.rotation.m = {right.x, right.y, right.z, down.x, down.y, down.z,
                          fwd.x, fwd.y, fwd.z};
        cam.translation = cam.rotation.apply(pos) * -1.0;
        cam.validate();
        rig.cameras.push_back(cam);
    }
    return rig;
}

void save_rig(const std::string& path, const CameraRig& rig) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open rig file for writing: " + path);
    os.precision(17);
    os << "cameras " << rig.cameras.size() << "\n";
    for (const Camera& c : rig.cameras) {
        os << "fx " << c.fx << "\nfy " << c.fy << "\ncx " << c.cx << "\ncy " << c.cy << "\n";
        os << "rotation";
        for (double v : c.rotation.m) os << " " << v;
        os << "\ntranslation " << c.translation.x << " " << c.translation.y << " "
           << c.translation.z << "\n";
        os << "width " << c.width << "\nheight " << c.height << "\n";
        os << "near " << c.near << "\nfar " << c.far << "\n";
    }
}

CameraRig load_rig(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open rig file: " + path);
    std::string key;
    size_t count = 0;
    if (!(is >> key >> count) || key != "cameras")
        throw std::runtime_error("rig file must start with 'cameras <n>': " + path);
    CameraRig rig;
    for (size_t i = 0; i < count; ++i) {
        Camera c;
        auto expect = [&](const char* want) {
            if (!(is >> key) || key != want)
                throw std::runtime_error("rig file: expected key '" + std::string(want) + "'");
        };
        expect("fx"); is >> c.fx;
        expect("fy"); is >> c.fy;
        expect("cx"); is >> c.cx;
        expect("cy"); is >> c.cy;
        expect("rotation");
        for (double& v : c.rotation.m) is >> v;
        expect("translation");
        is >> c.translation.x >> c.translation.y >> c.translation.z;
        expect("width"); is >> c.width;
        expect("height"); is >> c.height;
        expect("near"); is >> c.near;
        expect("far"); is >> c.far;
        if (!is) throw std::runtime_error("rig file truncated: " + path);
        c.validate();
        rig.cameras.push_back(c);
    }
    return rig;
}

} // namespace voxocc
