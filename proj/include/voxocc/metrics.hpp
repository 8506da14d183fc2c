// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "voxocc/scenegen.hpp"

namespace voxocc {

struct MetricsReport {
    double sc_iou = 0.0;
    std::vector<double> per_class_iou; // aligned with classes_present
    std::vector<int> classes_present;  // semantic classes included in the mean
    double ssc_miou = 0.0;
    double occluded_recall = 0.0; // fraction of invisible-occupied gt voxels predicted
    bool has_occluded = false;
    double train_seconds = 0.0;
    double eval_seconds = 0.0;
};

// |pred & gt| / |pred | gt| over the (optionally masked) voxels; an empty
// union counts as 1. Throws on shape mismatch.
double compute_iou(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                   const std::vector<std::uint8_t>* mask = nullptr);

struct MiouResult {
    double miou = 0.0;
    std::vector<double> per_class;
    std::vector<int> classes;
};

// Per-class IoU over semantic classes (free class 0 excluded); classes absent
// from both prediction and ground truth are left out of the mean.
MiouResult compute_miou(const std::vector<std::uint8_t>& pred_classes,
                        const std::vector<std::uint8_t>& gt_classes, int class_count,
                        const std::vector<std::uint8_t>* mask = nullptr);

// Recall of gt-occupied voxels invisible from every camera.
double occluded_voxel_recall(const std::vector<std::uint8_t>& pred_occupied,
                             const GroundTruthScene& scene, const VisibilityGrid& vis,
                             bool* defined = nullptr);

} // namespace voxocc
