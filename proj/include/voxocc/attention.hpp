// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "voxocc/autodiff.hpp"
#include "voxocc/core.hpp"
#include "voxocc/geometry.hpp"
#include "voxocc/scenegen.hpp"
#include "voxocc/voxels.hpp"

namespace voxocc {

struct DeformAttnConfig {
    int n_heads = 2;
    std::vector<int> layer_counts = {6, 3, 1, 3};
    std::vector<int> point_counts = {8, 4, 4, 4};

    void validate(int levels) const;
    int layers_at(int level) const { return layer_counts[size_t(level - 1)]; }
    int points_at(int level) const { return point_counts[size_t(level - 1)]; }
};

// Small strided convolutional encoder standing in for the image backbone:
// one stride-2 conv per pyramid level, so level dims halve level to level.
struct ConvEncoder {
    int levels = 4;
    std::int64_t channels = 32;
    std::vector<ad::Value> weights; // [3*3*cin, C] per level
    std::vector<ad::Value> biases;  // [C] per level

    static ConvEncoder create(const std::string& name, std::int64_t in_channels,
                              std::int64_t channels, int levels, Rng& rng);
    std::vector<ad::Value> forward(const Image& image) const;
    void collect_params(std::vector<ad::Value>& out) const;
};

struct FeaturePyramid {
    // maps[camera][level-1] is an [H, W, C] graph value.
    std::vector<std::vector<ad::Value>> maps;

    int cameras() const { return int(maps.size()); }
    const ad::Value& level(int camera, int level) const {
        return maps[size_t(camera)][size_t(level - 1)];
    }
};

FeaturePyramid encode_images(const std::vector<Image>& images, const ConvEncoder& encoder);

// One deformable cross-attention layer's parameters: learned offsets and
// attention logits from the query, per-head value and output projections.
struct DeformAttnLayer {
    int heads = 2;
    int points = 4;
    std::int64_t channels = 32;
    ad::Value w_offset; // [C, M*K*2]
    ad::Value b_offset; // [M*K*2]
    ad::Value w_attn;   // [C, M*K]
    ad::Value b_attn;   // [M*K]
    ad::Value w_value;  // [C, M*Ch]
    ad::Value w_output; // [M*Ch, C]

    static DeformAttnLayer create(const std::string& name, std::int64_t channels, int heads,
                                  int points, Rng& rng);
    void collect_params(std::vector<ad::Value>& out) const;
};

// DeformAtt(q, X) = sum_m W_m sum_k A_mk W'_m X(p + dp_mk); A_mk is a softmax
// over k per head. queries [N,C], reference pixels [N,2] in feature-map
// coordinates (constant), fmap [H,W,C].
ad::Value deform_attn(const ad::Value& queries, const ad::Value& reference_pixels,
                      const ad::Value& fmap, const DeformAttnLayer& layer);

struct LevelGeometry {
    Vec3 origin;
    double voxel_size = 0.0;

    Vec3 voxel_center(const Vec3i& v) const {
        return {origin.x + (v.x + 0.5) * voxel_size, origin.y + (v.y + 0.5) * voxel_size,
                origin.z + (v.z + 0.5) * voxel_size};
    }
};

struct LiftLevelParams {
    std::vector<DeformAttnLayer> layers;
    ad::Value conv_kernel; // sparse conv applied after the attention stack
    bool use_sparse_conv = true;

    void collect_params(std::vector<ad::Value>& out) const;
};

// Per-level refinement: for every layer, project each voxel center into every
// camera, run deformable attention per hitting camera on this level's feature
// maps, average over hitting cameras and add residually (queries seen by no
// camera pass through unchanged). Ends with the level's sparse convolution.
// The active set never changes.
QueryProposalSet lift_level(const QueryProposalSet& q, const FeaturePyramid& pyramid,
                            const CameraRig& rig, int level, const LevelGeometry& geom,
                            const LiftLevelParams& params);

} // namespace voxocc
