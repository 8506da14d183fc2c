// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "voxocc/autodiff.hpp"
#include "voxocc/voxels.hpp"

namespace voxocc {

struct LossConfig {
    double beta = 0.5;         // NeRF-branch weight
    double theta = 0.5;        // occupancy threshold
    double silog_lambda = 0.85;
    double alpha_decay = 0.5;  // alpha_l = decay^(L - l), finest level gets 1
    double occ_bce_weight = 1.0;
    // Cross-entropy cost charged for a gt-occupied voxel absent from the
    // active set, as if the true class had been predicted at this probability.
    double miss_probability = 1e-3;
    std::vector<double> class_weights; // optional, indexed by class id

    std::vector<double> alphas(int levels) const {
        std::vector<double> a(static_cast<size_t>(levels));
        for (int l = 1; l <= levels; ++l)
            a[size_t(l - 1)] = std::pow(alpha_decay, double(levels - l));
        return a;
    }
    double miss_penalty() const { return -std::log(miss_probability); }
};

// Union-of-masks query construction (Eq-5 style): indices are the sorted
// union of the two dense masks; each voxel takes its coarser-level parent's
// feature when that parent is active, otherwise the learned embedding row.
QueryProposalSet hybrid_queries(const std::vector<std::uint8_t>& imp_mask,
                                const std::vector<std::uint8_t>& exp_mask,
                                const GridDims& dims, int level,
                                const QueryProposalSet* parent,
                                const ad::Value& fallback_embedding);

struct ExplicitLevelPrediction {
    const std::vector<Vec3i>* indices = nullptr; // active support
    ad::Value logits;                            // [N, K]
    ad::Value occupancy;                         // [N, 1] scores in [0,1]
};

// Sum over levels of alpha_l * (semantic cross-entropy over the union of the
// active set and gt-occupied voxels, plus BCE of the occupancy head). Missed
// gt voxels are charged the confidently-free penalty. per_level, when given,
// receives each level's weighted term value.
ad::Value loss_explicit(const std::vector<ExplicitLevelPrediction>& preds,
                        const std::vector<LevelGroundTruth>& gt, const LossConfig& cfg,
                        std::vector<double>* per_level = nullptr);

// Scale-invariant log loss; depth_pred is [R,1] and must be positive on every
// supervised ray, as must depth_gt.
ad::Value loss_silog(const ad::Value& depth_pred, const std::vector<double>& depth_gt,
                     double lambda);

struct ImplicitLevelTerms {
    ad::Value depth_pred;          // [R,1]; undefined when no supervised rays
    std::vector<double> depth_gt;
    ad::Value occ_opacity;         // [N,1] opacity at sampled voxel centers
    std::vector<double> occ_gt;    // 0/1 targets
};

// Sum over levels 2..L of alpha_l * (SILog + occupancy BCE). Index 0 of
// `terms` corresponds to level 2. per_level, when given, is sized to the
// full level count with level 1 fixed at zero.
ad::Value loss_implicit(const std::vector<ImplicitLevelTerms>& terms, const LossConfig& cfg,
                        int levels, std::vector<double>* per_level = nullptr);

} // namespace voxocc
