// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "voxocc/autodiff.hpp"
#include "voxocc/core.hpp"
#include "voxocc/mlp.hpp"
#include "voxocc/scenegen.hpp"

namespace voxocc {

// Sparse voxel query set at one pyramid level. Indices are strictly sorted
// lexicographically on (x, y, z) with no duplicates; features align row-wise.
struct QueryProposalSet {
    int level = 1;
    GridDims dims;
    std::vector<Vec3i> indices;
    ad::Value features; // [N, C]

    std::int64_t size() const { return std::int64_t(indices.size()); }
    void validate() const;
    // Row of a coordinate via binary search, -1 when absent.
    std::int64_t find(const Vec3i& v) const;
};

// One pyramid level: dense occupancy scores plus the sparse active set with
// its semantic logits.
struct VoxelVolume {
    int level = 1;
    GridDims dims;
    double voxel_size = 0.0;
    std::vector<double> occupancy; // dense, in [0,1], zero where inactive
    QueryProposalSet active;
    ad::Value semantic_logits; // [N, K] aligned with active.indices

    void validate() const;
};

// Dense binary mask: occupancy >= theta stays occupied (strictly below is
// empty).
std::vector<std::uint8_t> threshold_occupancy(const VoxelVolume& volume, double theta);
std::vector<std::uint8_t> threshold_occupancy(const std::vector<double>& occupancy,
                                              double theta);

// Nearest-neighbor 2x upsampling: each voxel expands to its 8 children with
// the parent feature replicated. max_level guards the pyramid top.
QueryProposalSet upsample2x(const QueryProposalSet& q, int max_level);

struct SemanticHeadOutput {
    std::vector<Vec3i> indices; // union support, sorted
    ad::Value logits;           // [N, K]
    ad::Value occupancy;        // [N, 1], sigmoid of the dedicated head output
};

// Skip-connected per-voxel head: h(q + up_q) with index-aligned addition over
// the union support (missing operands are zero). The head MLP must output
// K + 1 columns; the last column becomes the occupancy score.
SemanticHeadOutput semantic_head(const QueryProposalSet& q, const QueryProposalSet& up_q,
                                 const Mlp& head, int class_count);

// Submanifold sparse 3D convolution: the active set is unchanged and each
// output aggregates only active neighbors in the 3x3x3 stencil. kernel is
// [27*C, C] with tap order (dx, dy, dz) in {-1,0,1}^3, x slowest.
QueryProposalSet sparse_conv3d(const QueryProposalSet& q, const ad::Value& kernel);

inline int conv_tap_index(int dx, int dy, int dz) {
    return (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1);
}

struct LevelGroundTruth {
    GridDims dims;
    std::vector<std::uint8_t> occupancy;
    std::vector<std::uint8_t> classes; // majority class among occupied children
};

// Max-pooled occupancy and majority-vote semantics for pyramid level `level`
// out of `levels` total, where the finest level matches the scene grid.
LevelGroundTruth downsample_gt(const GroundTruthScene& scene, int level, int levels);

// Dims of pyramid level `level` given the finest grid.
GridDims level_dims(const GridDims& finest, int level, int levels);

} // namespace voxocc
