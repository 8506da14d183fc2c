// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxocc/core.hpp"
#include "voxocc/geometry.hpp"

namespace voxocc {

struct SceneSpec {
    int n_boxes = 3;
    int n_walls = 2;
    double occluder_fraction = 0.5;
    int class_count = 6; // includes class 0 = free
    GridDims grid{64, 64, 16};
    double voxel_size = 0.25;
    Vec3 origin{-8.0, -8.0, 0.0};
    int n_cameras = 4;
    int image_size = 64;

    void validate() const;
};

// Voxelized world with semantic labels; class 0 is free space and occupancy
// is defined as semantics != 0.
struct GroundTruthScene {
    GridDims grid;
    double voxel_size = 0.0;
    Vec3 origin;
    int class_count = 0;
    std::vector<std::uint8_t> semantics; // x-fastest order
    CameraRig rig;
    std::uint64_t seed = 0;

    bool occupied(std::int64_t idx) const { return semantics[size_t(idx)] != 0; }
    bool occupied(const Vec3i& v) const { return occupied(grid.index(v)); }
    std::int64_t occupied_count() const;

    Vec3 voxel_center(const Vec3i& v) const {
        return {origin.x + (v.x + 0.5) * voxel_size, origin.y + (v.y + 0.5) * voxel_size,
                origin.z + (v.z + 0.5) * voxel_size};
    }
    // Floor mapping; result may be outside the grid.
    Vec3i world_to_voxel(const Vec3& p) const {
        return {int(std::floor((p.x - origin.x) / voxel_size)),
                int(std::floor((p.y - origin.y) / voxel_size)),
                int(std::floor((p.z - origin.z) / voxel_size))};
    }
    Vec3 world_min() const { return origin; }
    Vec3 world_max() const {
        return {origin.x + grid.h * voxel_size, origin.y + grid.w * voxel_size,
                origin.z + grid.z * voxel_size};
    }
};

struct DepthMap {
    int height = 0, width = 0;
    std::vector<double> depth;       // meters along the ray; 0 where invalid
    std::vector<std::uint8_t> valid; // explicit no-return flag

    double at(int y, int x) const { return depth[size_t(y * width + x)]; }
    bool has_return(int y, int x) const { return valid[size_t(y * width + x)] != 0; }
};

struct Image {
    int height = 0, width = 0;
    std::vector<double> rgb; // [H, W, 3]
};

struct VisibilityGrid {
    GridDims grid;
    std::vector<std::uint8_t> visible_occupied; // first DDA hit of some pixel ray
    std::vector<std::uint8_t> observed_free;    // traversed before a hit
};

// Amanatides & Woo grid walk. Calls visit(voxel, t_entry, t_exit, entry_axis)
// for every voxel the segment [ray.near, ray.far] passes through, in order;
// stop early by returning false. entry_axis is 0/1/2 for the face crossed
// entering the voxel (-1 when the segment starts inside it).
template <typename Visitor>
void dda_traverse(const Ray& ray, const GridDims& grid, const Vec3& origin,
                  double voxel_size, Visitor&& visit) {
    const Vec3 gmin = origin;
    const Vec3 gmax{origin.x + grid.h * voxel_size, origin.y + grid.w * voxel_size,
                    origin.z + grid.z * voxel_size};
    double t0 = ray.near, t1 = ray.far;
    int entry_axis = -1;
    const double o[3] = {ray.origin.x, ray.origin.y, ray.origin.z};
    const double d[3] = {ray.direction.x, ray.direction.y, ray.direction.z};
    const double lo[3] = {gmin.x, gmin.y, gmin.z};
    const double hi[3] = {gmax.x, gmax.y, gmax.z};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (o[a] < lo[a] || o[a] >= hi[a]) return;
            continue;
        }
        double ta = (lo[a] - o[a]) / d[a];
        double tb = (hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
            t0 = ta;
            entry_axis = a;
        }
        t1 = std::min(t1, tb);
    }
    if (t0 > t1) return;

    const double t_eps = 1e-9 * std::max(1.0, std::abs(t0));
    const Vec3 start = ray.at(t0 + t_eps);
    int v[3] = {int(std::floor((start.x - gmin.x) / voxel_size)),
                int(std::floor((start.y - gmin.y) / voxel_size)),
                int(std::floor((start.z - gmin.z) / voxel_size))};
    const int dims[3] = {grid.h, grid.w, grid.z};
    for (int a = 0; a < 3; ++a) v[a] = std::clamp(v[a], 0, dims[a] - 1);

    int step[3];
    double t_max[3], t_delta[3];
    for (int a = 0; a < 3; ++a) {
        if (d[a] > 1e-15) {
            step[a] = 1;
            t_delta[a] = voxel_size / d[a];
            t_max[a] = (lo[a] + (v[a] + 1) * voxel_size - o[a]) / d[a];
        } else if (d[a] < -1e-15) {
            step[a] = -1;
            t_delta[a] = -voxel_size / d[a];
            t_max[a] = (lo[a] + v[a] * voxel_size - o[a]) / d[a];
        } else {
            step[a] = 0;
            t_delta[a] = std::numeric_limits<double>::infinity();
            t_max[a] = std::numeric_limits<double>::infinity();
        }
    }

    double t_curr = t0;
    while (true) {
        int axis = 0;
        if (t_max[1] < t_max[axis]) axis = 1;
        if (t_max[2] < t_max[axis]) axis = 2;
        const double t_next = std::min(t_max[axis], t1);
        if (!visit(Vec3i{v[0], v[1], v[2]}, t_curr, t_next, entry_axis)) return;
        if (t_max[axis] >= t1) return;
        t_curr = t_max[axis];
        entry_axis = axis;
        v[axis] += step[axis];
        if (v[axis] < 0 || v[axis] >= dims[axis]) return;
        t_max[axis] += t_delta[axis];
    }
}

// Deterministic synthetic scene: floor/wall slabs plus boxes, a fraction of
// which are closed shells with an interior core no camera ray can reach.
GroundTruthScene generate_scene(const SceneSpec& spec, std::uint64_t seed);

// Exact depth to the first occupied voxel per pixel (DDA walk).
DepthMap render_gt_depth(const GroundTruthScene& scene, int camera_index);

// Shaded semantic rendering used as the model's camera input: per-class color
// scaled by the orientation of the hit face; background pixels are black.
Image render_image(const GroundTruthScene& scene, int camera_index);

VisibilityGrid gt_visibility(const GroundTruthScene& scene);

// Fixed palette mapping a class id to rgb in [0,1].
void class_color(int class_id, double rgb[3]);

// Flat binary scene format (version 1) and predicted-volume extension
// (version 2, adds a u8 class grid plus an f32 occupancy channel).
void save_scene(const std::string& path, const GroundTruthScene& scene);
GroundTruthScene load_scene(const std::string& path);

void save_volume(const std::string& path, const GridDims& grid, double voxel_size,
                 const Vec3& origin, const std::vector<std::uint8_t>& classes,
                 const std::vector<float>& occupancy);
void load_volume(const std::string& path, GridDims& grid, double& voxel_size, Vec3& origin,
                 std::vector<std::uint8_t>& classes, std::vector<float>& occupancy);

void save_depth_map(const std::string& path, const DepthMap& dm);
DepthMap load_depth_map(const std::string& path);

} // namespace voxocc
