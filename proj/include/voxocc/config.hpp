// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxocc {

// Full experiment description. Every field has a default; the plain-text
// config format is `key value` lines with '#' comments, unknown keys are
// rejected. List-valued keys take comma-separated integers.
struct ExperimentConfig {
    // Scene generation.
    int scene_boxes = 3;
    int scene_walls = 2;
    double occluder_fraction = 0.5;
    int classes = 6;
    int grid_h = 64, grid_w = 64, grid_z = 16;
    double voxel_size = 0.25;
    double origin_x = -8.0, origin_y = -8.0, origin_z = 0.0;
    int cameras = 4;
    int image_size = 64;

    // Data split.
    int train_scenes = 16;
    int eval_scenes = 4;
    std::uint64_t seed = 1;

    // Pyramid / model.
    int levels = 4;
    int channels = 32;
    int heads = 2;
    std::vector<int> layers = {6, 3, 1, 3};
    std::vector<int> points = {8, 4, 4, 4};
    std::vector<int> max_queries = {128, 512, 1280, 2560};
    int posenc_frequencies = 6;
    std::vector<int> field_hidden = {32, 32};

    // NeRF branch.
    std::string sampling = "occupancy_aware"; // hierarchical | probabilistic | occupancy_aware
    int coarse_samples = 128;
    int ray_samples = 32;
    int rays_per_camera = 32;
    int bce_voxels = 192;
    bool use_nerf = true;
    bool use_attention = true;
    bool use_sparse_conv = true;

    // Loss.
    double theta = 0.5;
    double beta = 0.5;
    double silog_lambda = 0.85;
    double alpha_decay = 0.5;
    double occ_bce_weight = 1.0;
    double miss_probability = 1e-3;
    double free_class_weight = 0.35; // cross-entropy weight of the free class

    // Optimizer.
    double lr = 2e-4;
    double momentum = 0.9;
    int steps = 2000;

    // Evaluation / output.
    std::string eval_protocol = "all_occupied"; // or visible_only
    std::string out_dir = "out";

    void apply(const std::string& key, const std::string& value);
    void load_file(const std::string& path);
    void validate() const;
    std::string to_text() const;
};

// Thrown for malformed configs; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace voxocc
