// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "voxocc/autodiff.hpp"
#include "voxocc/geometry.hpp"
#include "voxocc/mlp.hpp"

namespace voxocc {

// World -> [-1, 1]^3 mapping applied before positional encoding.
struct SceneNormalizer {
    Vec3 center;
    double inv_half = 1.0;

    Vec3 apply(const Vec3& p) const {
        return {(p.x - center.x) * inv_half, (p.y - center.y) * inv_half,
                (p.z - center.z) * inv_half};
    }
};

// Implicit occupancy/depth field: mlp(concat(posenc(x), feature(x))) with a
// softplus sigma head and a depth head squashed into [near, far].
struct ImplicitField {
    Mlp mlp; // widths: [posenc + feature_dim, hidden..., 2]
    PositionalEncodingConfig encoding;
    SceneNormalizer normalizer;

    static ImplicitField create(const std::string& name, const PositionalEncodingConfig& enc,
                                const SceneNormalizer& norm, std::int64_t feature_dim,
                                const std::vector<std::int64_t>& hidden, Rng& rng);
    void collect_params(std::vector<ad::Value>& out) const { mlp.collect_params(out); }
};

// Sample positions along one ray; ts strictly increasing, deltas[i] is the
// spacing to the previous point with deltas[0] = ts[0] - near.
struct RaySamples {
    Ray ray;
    std::vector<double> ts;
    std::vector<double> deltas;

    int count() const { return int(ts.size()); }
    Vec3 point(int i) const { return ray.at(ts[size_t(i)]); }
};

RaySamples sample_uniform(const Ray& ray, int m, Rng& rng);

// Restrict [near, far] to the segment inside an axis-aligned volume; returns
// false when the ray misses it entirely.
bool clip_ray_to_volume(Ray& ray, const Vec3& origin, const GridDims& dims,
                        double voxel_size);

// Inverse-CDF resampling proportional to the coarse weights (piecewise
// constant over bins between coarse midpoints). All-zero weights fall back to
// uniform sampling.
RaySamples sample_hierarchical(const Ray& ray, const RaySamples& coarse,
                               const std::vector<double>& coarse_weights, int n, Rng& rng);

// Hierarchical resampling on a Gaussian-smoothed PDF (bandwidth one stratum);
// the surface-concentrated baseline.
RaySamples sample_probabilistic(const Ray& ray, const RaySamples& coarse,
                                const std::vector<double>& coarse_weights, int n, Rng& rng);

struct OccupancyGuide {
    GridDims dims;
    Vec3 origin;
    double voxel_size = 0.0;
    const std::vector<std::uint8_t>* mask = nullptr;

    bool occupied_at(const Vec3& p) const {
        const Vec3i v{int(std::floor((p.x - origin.x) / voxel_size)),
                      int(std::floor((p.y - origin.y) / voxel_size)),
                      int(std::floor((p.z - origin.z) / voxel_size))};
        if (!dims.contains(v)) return false;
        return (*mask)[size_t(dims.index(v))] != 0;
    }
};

// Candidate-then-filter sampling: m_candidates uniform candidates are
// partitioned by the guide's occupancy; up to n occupied ones are kept and
// any shortfall is filled from the unoccupied pool. A ray that misses the
// guide volume entirely falls back to plain uniform sampling.
RaySamples sample_occupancy_aware(const Ray& ray, const OccupancyGuide& guide,
                                  int m_candidates, int n, Rng& rng);

// Plain transmittance math: w_i = T_i * (1 - exp(-sigma_i * delta_i)) with
// T_i = exp(-sum_{j<i} sigma_j delta_j). Serial reference used by samplers
// and tests.
std::vector<double> render_weights(const std::vector<double>& sigmas,
                                   const std::vector<double>& deltas);
double render_depth_value(const std::vector<double>& weights, const std::vector<double>& ds);

// Graph rendering over a ray batch; sigma/d/deltas are [R, N].
struct RenderedRays {
    ad::Value weights;    // [R, N]
    ad::Value depth;      // [R, 1], Eq-style sum of w_i d_i
    ad::Value weight_sum; // [R, 1]
};
RenderedRays render_depth_batch(const ad::Value& sigma, const ad::Value& d,
                                const ad::Value& deltas);

// Batched field evaluation against one camera's feature map (graph path).
// Off-image or behind-camera points sample at border-clamped pixels.
struct FieldEval {
    ad::Value sigma; // [N, 1]
    ad::Value depth; // [N, 1]
};
FieldEval eval_field(const ImplicitField& field, const std::vector<Vec3>& points,
                     const ad::Value& fmap, const Camera& cam, double near, double far);

// No-grad twin of eval_field reading raw parameter data; returns sigma values.
std::vector<double> eval_field_sigma_plain(const ImplicitField& field,
                                           const std::vector<Vec3>& points,
                                           const Tensor& fmap_data, const Camera& cam);

// Continuous image pixel -> feature-map pixel for a feature level of the
// given spatial dims.
Vec2 image_to_feature_pixel(const Vec2& image_px, int image_h, int image_w, int feat_h,
                            int feat_w);

// Per-voxel fusion of per-camera sigma evaluations. sigma < 0 marks "not
// seen by this camera"; voxels seen by no camera stay empty. A voxel is
// occupied when max-cam opacity 1 - exp(-sigma * voxel_size) >= theta.
std::vector<std::uint8_t> fuse_multicam_occupancy(
    const std::vector<std::vector<double>>& per_camera_sigma, double voxel_size, double theta,
    std::vector<double>* fused_scores = nullptr);

} // namespace voxocc
