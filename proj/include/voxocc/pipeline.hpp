// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "voxocc/attention.hpp"
#include "voxocc/config.hpp"
#include "voxocc/loss.hpp"
#include "voxocc/metrics.hpp"
#include "voxocc/nerf.hpp"
#include "voxocc/scenegen.hpp"
#include "voxocc/voxels.hpp"

namespace voxocc {

enum class SamplingStrategy { kHierarchical, kProbabilistic, kOccupancyAware };

SamplingStrategy sampling_from_string(const std::string& s);

SceneSpec scene_spec_from_config(const ExperimentConfig& cfg);

// All learnable state of the dual-branch model.
struct Model {
    ExperimentConfig cfg;
    LossConfig loss_cfg;
    SamplingStrategy sampling = SamplingStrategy::kOccupancyAware;

    ConvEncoder encoder;
    ad::Value level1_embedding;  // [1, C]
    ad::Value level1_pos_proj;   // [posenc_dim, C]
    ad::Value hybrid_embedding;  // [1, C] fallback for parent-less queries
    std::vector<LiftLevelParams> lift; // per level
    std::vector<Mlp> heads;            // per level, C -> K+1
    ImplicitField field;

    std::vector<ad::Value> params;

    static Model create(const ExperimentConfig& cfg);
    void save(const std::string& path) const;
    void load(const std::string& path);
};

// Per-scene precomputation shared across steps.
struct SceneBundle {
    GroundTruthScene scene;
    std::vector<Image> images;
    std::vector<DepthMap> depth_maps;
    std::vector<std::vector<int>> valid_pixels; // per camera, linear pixel ids with a return
    std::vector<LevelGroundTruth> level_gt;     // per level 1..L
    VisibilityGrid visibility;                  // filled when build_visibility

    static SceneBundle build(const GroundTruthScene& scene, int levels, bool build_visibility);
};

struct ForwardResult {
    ad::Value total_loss;
    ad::Value explicit_loss;
    ad::Value implicit_loss;
    std::vector<double> level_explicit; // per level 1..L
    std::vector<double> level_implicit; // per level 1..L (level 1 always 0)

    // Finest-level prediction.
    std::vector<Vec3i> final_indices;
    std::vector<int> final_classes;    // argmax over K, may be 0
    std::vector<double> final_occupancy;

    // Per-level introspection (1-based level l at index l-1).
    std::vector<std::vector<Vec3i>> level_active;
    std::vector<std::vector<std::uint8_t>> level_hybrid_mask;
};

// One full forward pass: encode images, refine the pyramid level by level
// with hybrid query proposals, render the NeRF branch, assemble both losses.
// with_loss=false skips the loss graphs (pure inference).
ForwardResult forward_pipeline(const Model& model, const SceneBundle& bundle,
                               std::uint64_t step_seed, bool with_loss);

// Dense class/occupancy grids at the finest level from a forward result.
struct DensePrediction {
    std::vector<std::uint8_t> classes;
    std::vector<std::uint8_t> occupied;
    std::vector<float> occupancy_scores;
};
DensePrediction densify_prediction(const ForwardResult& fr, const GridDims& finest);

} // namespace voxocc
