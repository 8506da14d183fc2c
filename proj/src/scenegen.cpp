// SPDX-License-Identifier: Apache-2.0
#include "voxocc/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "voxocc/kernels.hpp"

namespace voxocc {

void SceneSpec::validate() const {
    if (grid.h <= 0 || grid.w <= 0 || grid.z <= 0)
        throw std::invalid_argument("scene spec: grid dims must be positive");
    if (class_count < 2)
        throw std::invalid_argument("scene spec: class_count must be >= 2");
    if (occluder_fraction < 0.0 || occluder_fraction > 1.0)
        throw std::invalid_argument("scene spec: occluder_fraction must be in [0,1]");
    if (n_boxes < 0 || n_walls < 0)
        throw std::invalid_argument("scene spec: negative object count");
    if (voxel_size <= 0.0) throw std::invalid_argument("scene spec: voxel_size must be > 0");
    if (n_cameras < 1) throw std::invalid_argument("scene spec: needs at least one camera");
}

std::int64_t GroundTruthScene::occupied_count() const {
    std::int64_t n = 0;
    for (std::uint8_t c : semantics) n += (c != 0);
    return n;
}

namespace {

struct BoxExtent {
    int lo[3];
    int hi[3]; // exclusive
};

void fill_box(std::vector<std::uint8_t>& sem, const GridDims& grid, const BoxExtent& b,
              std::uint8_t cls) {
    for (int z = b.lo[2]; z < b.hi[2]; ++z)
        for (int y = b.lo[1]; y < b.hi[1]; ++y)
            for (int x = b.lo[0]; x < b.hi[0]; ++x)
                sem[size_t(grid.index({x, y, z}))] = cls;
}

int rand_extent(Rng& rng, int lo, int hi, int cap) {
    const int e = lo + int(rng.uniform_index(std::uint64_t(hi - lo + 1)));
    return std::min(e, cap);
}

std::uint8_t rand_class(Rng& rng, int class_count) {
    return std::uint8_t(1 + rng.uniform_index(std::uint64_t(class_count - 1)));
}

CameraRig rig_for_spec(const SceneSpec& spec) {
    const double ext_x = spec.grid.h * spec.voxel_size;
    const double ext_y = spec.grid.w * spec.voxel_size;
    const double ext_z = spec.grid.z * spec.voxel_size;
    const Vec3 center{spec.origin.x + 0.5 * ext_x, spec.origin.y + 0.5 * ext_y,
                      spec.origin.z + 0.25 * ext_z};
    const double radius = 0.72 * std::max(ext_x, ext_y) + 2.0 * spec.voxel_size;
    const double height = spec.origin.z + 1.35 * ext_z;
    const double far = radius + std::sqrt(ext_x * ext_x + ext_y * ext_y + ext_z * ext_z) + 1.0;
    const double focal = 0.44 * double(spec.image_size);
    return make_ring_rig(spec.n_cameras, radius, height, center, spec.image_size,
                         spec.image_size, focal, 0.2, far);
}

} // namespace

GroundTruthScene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    GroundTruthScene scene;
    scene.grid = spec.grid;
    scene.voxel_size = spec.voxel_size;
    scene.origin = spec.origin;
    scene.class_count = spec.class_count;
    scene.seed = seed;
    scene.semantics.assign(size_t(spec.grid.count()), 0);
    scene.rig = rig_for_spec(spec);

    Rng rng(mix_seed(seed, 0x5c3e9e11u));
    const int dims[3] = {spec.grid.h, spec.grid.w, spec.grid.z};

    // Walls first: a one-voxel floor slab, then vertical partial slabs.
    for (int wall = 0; wall < spec.n_walls; ++wall) {
        const std::uint8_t cls = rand_class(rng, spec.class_count);
        if (wall == 0) {
            // Ground platform covering part of the footprint.
            BoxExtent floor;
            for (int a = 0; a < 2; ++a) {
                const int span = std::max(2, int(rng.uniform(0.3, 0.55) * dims[a]));
                const int start =
                    int(rng.uniform_index(std::uint64_t(std::max(1, dims[a] - span + 1))));
                floor.lo[a] = start;
                floor.hi[a] = std::min(start + span, dims[a]);
            }
            floor.lo[2] = 0;
            floor.hi[2] = 1;
            fill_box(scene.semantics, spec.grid, floor, cls);
            continue;
        }
        const int axis = int(rng.uniform_index(2)); // 0: x-normal, 1: y-normal
        const int other = 1 - axis;
        const int pos = 2 + int(rng.uniform_index(std::uint64_t(std::max(1, dims[axis] - 4))));
        const int span = std::max(2, int(rng.uniform(0.4, 1.0) * dims[other]));
        const int start = int(rng.uniform_index(std::uint64_t(std::max(1, dims[other] - span + 1))));
        const int top = std::max(2, int(rng.uniform(0.45, 0.95) * dims[2]));
        BoxExtent b;
        b.lo[axis] = pos;
        b.hi[axis] = std::min(pos + 1, dims[axis]);
        b.lo[other] = start;
        b.hi[other] = std::min(start + span, dims[other]);
        b.lo[2] = 0;
        b.hi[2] = top;
        fill_box(scene.semantics, spec.grid, b, cls);
    }

    // Boxes; occluders are closed shells with a sealed interior core.
    const int n_occluders =
        (spec.n_boxes >= 2 && spec.occluder_fraction > 0.0)
            ? std::max(1, int(std::lround(spec.occluder_fraction * spec.n_boxes)))
            : 0;
    for (int bi = 0; bi < spec.n_boxes; ++bi) {
        const bool occluder = bi < n_occluders && dims[0] >= 5 && dims[1] >= 5 && dims[2] >= 4;
        const std::uint8_t cls = rand_class(rng, spec.class_count);
        BoxExtent b;
        for (int a = 0; a < 3; ++a) {
            const int min_ext = occluder ? (a == 2 ? 4 : 5) : 2;
            const int max_ext = std::max(min_ext, dims[a] / 5);
            const int ext = rand_extent(rng, min_ext, max_ext, dims[a]);
            const int lo = int(rng.uniform_index(std::uint64_t(dims[a] - ext + 1)));
            b.lo[a] = lo;
            b.hi[a] = lo + ext;
        }
        b.lo[2] = std::min(b.lo[2], 1); // objects rest on or near the floor
        fill_box(scene.semantics, spec.grid, b, cls);
        if (occluder) {
            BoxExtent cavity{{b.lo[0] + 1, b.lo[1] + 1, b.lo[2] + 1},
                             {b.hi[0] - 1, b.hi[1] - 1, b.hi[2] - 1}};
            fill_box(scene.semantics, spec.grid, cavity, 0);
            std::uint8_t core_cls = rand_class(rng, spec.class_count);
            if (spec.class_count > 2 && core_cls == cls)
                core_cls = std::uint8_t(1 + (core_cls % (spec.class_count - 1)));
            BoxExtent core = cavity;
            for (int a = 0; a < 3; ++a) {
                const int cav = cavity.hi[a] - cavity.lo[a];
                const int ext = std::max(1, cav - int(rng.uniform_index(2)));
                core.lo[a] = cavity.lo[a] + int(rng.uniform_index(std::uint64_t(cav - ext + 1)));
                core.hi[a] = core.lo[a] + ext;
            }
            fill_box(scene.semantics, spec.grid, core, core_cls);
        }
    }
    return scene;
}

namespace {

struct Hit {
    bool found = false;
    double t = 0.0;
    int axis = -1;
    Vec3i voxel;
};

Hit first_hit(const GroundTruthScene& scene, const Ray& ray) {
    Hit hit;
    dda_traverse(ray, scene.grid, scene.origin, scene.voxel_size,
                 [&](const Vec3i& v, double t_entry, double, int axis) {
                     if (scene.occupied(v)) {
                         hit.found = true;
                         hit.t = std::max(t_entry, ray.near);
                         hit.axis = axis;
                         hit.voxel = v;
                         return false;
                     }
                     return true;
                 });
    return hit;
}

} // namespace

DepthMap render_gt_depth(const GroundTruthScene& scene, int camera_index) {
    if (camera_index < 0 || size_t(camera_index) >= scene.rig.size())
        throw std::invalid_argument("render_gt_depth: camera index out of range");
    const Camera& cam = scene.rig.cameras[size_t(camera_index)];
    DepthMap dm;
    dm.height = cam.height;
    dm.width = cam.width;
    dm.depth.assign(size_t(cam.height * cam.width), 0.0);
    dm.valid.assign(size_t(cam.height * cam.width), 0);
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled())
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Ray ray = generate_ray(cam, {double(x), double(y)});
            const Hit hit = first_hit(scene, ray);
            if (hit.found) {
                dm.depth[size_t(y * cam.width + x)] = hit.t;
                dm.valid[size_t(y * cam.width + x)] = 1;
            }
        }
    }
    return dm;
}

void class_color(int class_id, double rgb[3]) {
    if (class_id == 0) {
        rgb[0] = rgb[1] = rgb[2] = 0.0;
        return;
    }
    // Golden-angle hue walk, full saturation.
    const double hue = std::fmod(0.13 + 0.61803398875 * double(class_id - 1), 1.0) * 6.0;
    const int sector = int(hue);
    const double f = hue - sector;
    const double q = 1.0 - f;
    switch (sector % 6) {
        case 0: rgb[0] = 1.0; rgb[1] = f;   rgb[2] = 0.15; break;
        case 1: rgb[0] = q;   rgb[1] = 1.0; rgb[2] = 0.15; break;
        case 2: rgb[0] = 0.15; rgb[1] = 1.0; rgb[2] = f;   break;
        case 3: rgb[0] = 0.15; rgb[1] = q;   rgb[2] = 1.0; break;
        case 4: rgb[0] = f;   rgb[1] = 0.15; rgb[2] = 1.0; break;
        default: rgb[0] = 1.0; rgb[1] = 0.15; rgb[2] = q;  break;
    }
}

Image render_image(const GroundTruthScene& scene, int camera_index) {
    if (camera_index < 0 || size_t(camera_index) >= scene.rig.size())
        throw std::invalid_argument("render_image: camera index out of range");
    const Camera& cam = scene.rig.cameras[size_t(camera_index)];
    Image img;
    img.height = cam.height;
    img.width = cam.width;
    img.rgb.assign(size_t(cam.height * cam.width * 3), 0.0);
    static const double kAxisShade[3] = {0.65, 0.8, 1.0};
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled())
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Ray ray = generate_ray(cam, {double(x), double(y)});
            const Hit hit = first_hit(scene, ray);
            if (!hit.found) continue;
            double rgb[3];
            class_color(scene.semantics[size_t(scene.grid.index(hit.voxel))], rgb);
            const double shade = hit.axis < 0 ? 1.0 : kAxisShade[hit.axis];
            double* px = img.rgb.data() + size_t((y * cam.width + x) * 3);
            px[0] = rgb[0] * shade;
            px[1] = rgb[1] * shade;
            px[2] = rgb[2] * shade;
        }
    }
    return img;
}

VisibilityGrid gt_visibility(const GroundTruthScene& scene) {
    VisibilityGrid vis;
    vis.grid = scene.grid;
    vis.visible_occupied.assign(size_t(scene.grid.count()), 0);
    vis.observed_free.assign(size_t(scene.grid.count()), 0);
    for (const Camera& cam : scene.rig.cameras) {
        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Ray ray = generate_ray(cam, {double(x), double(y)});
                dda_traverse(ray, scene.grid, scene.origin, scene.voxel_size,
                             [&](const Vec3i& v, double, double, int) {
                                 const std::int64_t idx = scene.grid.index(v);
                                 if (scene.occupied(idx)) {
                                     vis.visible_occupied[size_t(idx)] = 1;
                                     return false;
                                 }
                                 vis.observed_free[size_t(idx)] = 1;
                                 return true;
                             });
            }
        }
    }
    return vis;
}

namespace {

constexpr char kSceneMagic[12] = {'V', 'O', 'X', 'O', 'C', 'C', 'S', 'C', 'E', 'N', 'E', '\0'};
constexpr char kDepthMagic[12] = {'V', 'O', 'X', 'O', 'C', 'C', 'D', 'E', 'P', 'T', 'H', '\0'};

template <typename T>
void wpod(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void rpod(std::ifstream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void write_scene_header(std::ofstream& os, std::uint32_t version, const GridDims& grid,
                        double voxel_size, const Vec3& origin) {
    os.write(kSceneMagic, 12);
    wpod(os, version);
    wpod(os, std::uint32_t(grid.h));
    wpod(os, std::uint32_t(grid.w));
    wpod(os, std::uint32_t(grid.z));
    wpod(os, float(voxel_size));
    wpod(os, float(origin.x));
    wpod(os, float(origin.y));
    wpod(os, float(origin.z));
}

std::uint32_t read_scene_header(std::ifstream& is, GridDims& grid, double& voxel_size,
                                Vec3& origin, const std::string& path) {
    char magic[12];
    is.read(magic, 12);
    if (!is || std::memcmp(magic, kSceneMagic, 12) != 0)
        throw std::runtime_error("bad scene magic: " + path);
    std::uint32_t version = 0, h = 0, w = 0, z = 0;
    float vs = 0, ox = 0, oy = 0, oz = 0;
    rpod(is, version);
    rpod(is, h);
    rpod(is, w);
    rpod(is, z);
    rpod(is, vs);
    rpod(is, ox);
    rpod(is, oy);
    rpod(is, oz);
    grid = {int(h), int(w), int(z)};
    voxel_size = vs;
    origin = {ox, oy, oz};
    return version;
}

} // namespace

void save_scene(const std::string& path, const GroundTruthScene& scene) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write scene: " + path);
    write_scene_header(os, 1, scene.grid, scene.voxel_size, scene.origin);
    os.write(reinterpret_cast<const char*>(scene.semantics.data()),
             std::streamsize(scene.semantics.size()));
    if (!os) throw std::runtime_error("scene write failed: " + path);
}

GroundTruthScene load_scene(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open scene: " + path);
    GroundTruthScene scene;
    const std::uint32_t version =
        read_scene_header(is, scene.grid, scene.voxel_size, scene.origin, path);
    if (version != 1) throw std::runtime_error("unsupported scene version: " + path);
    scene.semantics.resize(size_t(scene.grid.count()));
    is.read(reinterpret_cast<char*>(scene.semantics.data()),
            std::streamsize(scene.semantics.size()));
    if (!is) throw std::runtime_error("scene truncated: " + path);
    int max_cls = 1;
    for (std::uint8_t c : scene.semantics) max_cls = std::max(max_cls, int(c));
    scene.class_count = max_cls + 1;
    return scene;
}

void save_volume(const std::string& path, const GridDims& grid, double voxel_size,
                 const Vec3& origin, const std::vector<std::uint8_t>& classes,
                 const std::vector<float>& occupancy) {
    if (std::int64_t(classes.size()) != grid.count() ||
        std::int64_t(occupancy.size()) != grid.count())
        throw std::invalid_argument("save_volume: array size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write volume: " + path);
    write_scene_header(os, 2, grid, voxel_size, origin);
    os.write(reinterpret_cast<const char*>(classes.data()), std::streamsize(classes.size()));
    os.write(reinterpret_cast<const char*>(occupancy.data()),
             std::streamsize(occupancy.size() * 4));
    if (!os) throw std::runtime_error("volume write failed: " + path);
}

void load_volume(const std::string& path, GridDims& grid, double& voxel_size, Vec3& origin,
                 std::vector<std::uint8_t>& classes, std::vector<float>& occupancy) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open volume: " + path);
    const std::uint32_t version = read_scene_header(is, grid, voxel_size, origin, path);
    if (version != 2) throw std::runtime_error("unsupported volume version: " + path);
    classes.resize(size_t(grid.count()));
    occupancy.resize(size_t(grid.count()));
    is.read(reinterpret_cast<char*>(classes.data()), std::streamsize(classes.size()));
    is.read(reinterpret_cast<char*>(occupancy.data()), std::streamsize(occupancy.size() * 4));
    if (!is) throw std::runtime_error("volume truncated: " + path);
}

void save_depth_map(const std::string& path, const DepthMap& dm) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write depth map: " + path);
    os.write(kDepthMagic, 12);
    wpod(os, std::uint32_t(1));
    wpod(os, std::uint32_t(dm.height));
    wpod(os, std::uint32_t(dm.width));
    for (double d : dm.depth) wpod(os, float(d));
    os.write(reinterpret_cast<const char*>(dm.valid.data()), std::streamsize(dm.valid.size()));
    if (!os) throw std::runtime_error("depth map write failed: " + path);
}

DepthMap load_depth_map(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open depth map: " + path);
    char magic[12];
    is.read(magic, 12);
    if (!is || std::memcmp(magic, kDepthMagic, 12) != 0)
        throw std::runtime_error("bad depth map magic: " + path);
    std::uint32_t version = 0, h = 0, w = 0;
    rpod(is, version);
    rpod(is, h);
    rpod(is, w);
    if (version != 1) throw std::runtime_error("unsupported depth map version: " + path);
    DepthMap dm;
    dm.height = int(h);
    dm.width = int(w);
    dm.depth.resize(size_t(h * w));
    dm.valid.resize(size_t(h * w));
    for (double& d : dm.depth) {
        float f = 0;
        rpod(is, f);
        d = f;
    }
    is.read(reinterpret_cast<char*>(dm.valid.data()), std::streamsize(dm.valid.size()));
    if (!is) throw std::runtime_error("depth map truncated: " + path);
    return dm;
}

} // namespace voxocc
