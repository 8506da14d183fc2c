// SPDX-License-Identifier: Apache-2.0
#include "voxocc/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace voxocc {

QueryProposalSet hybrid_queries(const std::vector<std::uint8_t>& imp_mask,
                                const std::vector<std::uint8_t>& exp_mask,
                                const GridDims& dims, int level,
                                const QueryProposalSet* parent,
                                const ad::Value& fallback_embedding) {
    if (std::int64_t(imp_mask.size()) != dims.count() ||
        std::int64_t(exp_mask.size()) != dims.count())
        throw std::invalid_argument("hybrid_queries: mask dims mismatch");
    QueryProposalSet out;
    out.level = level;
    out.dims = dims;
    for (int x = 0; x < dims.h; ++x)
        for (int y = 0; y < dims.w; ++y)
            for (int z = 0; z < dims.z; ++z) {
                const Vec3i v{x, y, z};
                const std::int64_t idx = dims.index(v);
                if (imp_mask[size_t(idx)] || exp_mask[size_t(idx)]) out.indices.push_back(v);
            }
    // The (x, y, z) loop order above emits indices already lexicographically
    // sorted.
    const std::int64_t n = out.size();
    if (n == 0) {
        out.features = ad::constant(Tensor({0, fallback_embedding.cols()}), "empty_hybrid");
        return out;
    }

    std::vector<std::int64_t> avail_pos, avail_parent_rows, missing_pos;
    for (std::int64_t i = 0; i < n; ++i) {
        const Vec3i& v = out.indices[size_t(i)];
        const Vec3i pv{v.x / 2, v.y / 2, v.z / 2};
        const std::int64_t prow = parent ? parent->find(pv) : -1;
        if (prow >= 0) {
            avail_pos.push_back(i);
            avail_parent_rows.push_back(prow);
        } else {
            missing_pos.push_back(i);
        }
    }
    ad::Value feats;
    if (!avail_pos.empty())
        feats = ad::scatter_rows(ad::gather_rows(parent->features, std::move(avail_parent_rows)),
                                 std::move(avail_pos), n);
    if (!missing_pos.empty()) {
        const ad::Value fills = ad::gather_rows(
            fallback_embedding, std::vector<std::int64_t>(missing_pos.size(), 0));
        const ad::Value placed = ad::scatter_rows(fills, std::move(missing_pos), n);
        feats = feats.defined() ? ad::add(feats, placed) : placed;
    }
    out.features = feats;
    return out;
}

ad::Value loss_explicit(const std::vector<ExplicitLevelPrediction>& preds,
                        const std::vector<LevelGroundTruth>& gt, const LossConfig& cfg,
                        std::vector<double>* per_level) {
    if (preds.size() != gt.size())
        throw std::invalid_argument("loss_explicit: level count mismatch");
    const int levels = int(preds.size());
    const std::vector<double> alphas = cfg.alphas(levels);
    if (per_level) per_level->assign(size_t(levels), 0.0);
    ad::Value total;
    for (int li = 0; li < levels; ++li) {
        const ExplicitLevelPrediction& pred = preds[size_t(li)];
        const LevelGroundTruth& lvl_gt = gt[size_t(li)];
        const std::int64_t n_active = pred.indices ? std::int64_t(pred.indices->size()) : 0;
        const std::int64_t k = n_active > 0 ? pred.logits.cols() : 0;

        // Union support: every active voxel plus every gt-occupied voxel the
        // prediction missed (charged as a confidently-free prediction).
        std::vector<std::uint8_t> covered(static_cast<size_t>(lvl_gt.dims.count()), 0);
        double class_weight_sum = 0.0;
        Tensor onehot({std::max<std::int64_t>(n_active, 1), std::max<std::int64_t>(k, 1)});
        std::vector<double> occ_targets(static_cast<size_t>(std::max<std::int64_t>(n_active, 1)), 0.0);
        for (std::int64_t i = 0; i < n_active; ++i) {
            const Vec3i& v = (*pred.indices)[size_t(i)];
            const std::int64_t idx = lvl_gt.dims.index(v);
            covered[size_t(idx)] = 1;
            const int cls = lvl_gt.classes[size_t(idx)];
            const double w = cls < int(cfg.class_weights.size())
                                 ? cfg.class_weights[size_t(cls)]
                                 : 1.0;
            onehot.at2(i, cls) = w;
            class_weight_sum += w;
            occ_targets[size_t(i)] = lvl_gt.occupancy[size_t(idx)] ? 1.0 : 0.0;
        }
        double miss_sum = 0.0;
        std::int64_t miss_count = 0;
        for (std::int64_t idx = 0; idx < lvl_gt.dims.count(); ++idx) {
            if (!lvl_gt.occupancy[size_t(idx)] || covered[size_t(idx)]) continue;
            const int cls = lvl_gt.classes[size_t(idx)];
            const double w = cls < int(cfg.class_weights.size())
                                 ? cfg.class_weights[size_t(cls)]
                                 : 1.0;
            miss_sum += w * cfg.miss_penalty();
            ++miss_count;
        }
        const double denom = double(std::max<std::int64_t>(n_active + miss_count, 1));

        ad::Value level_loss;
        if (n_active > 0) {
            const ad::Value ce = ad::scale(
                ad::sum_all(ad::mul(ad::log_softmax_rows(pred.logits),
                                    ad::constant(std::move(onehot), "ce_targets"))),
                -1.0 / denom);
            level_loss = ce;
            if (cfg.occ_bce_weight != 0.0 && pred.occupancy.defined()) {
                const double neg_w =
                    cfg.class_weights.empty() ? 1.0 : cfg.class_weights[0];
                const ad::Value bce = ad::bce_mean(pred.occupancy, occ_targets, neg_w);
                level_loss = ad::add(level_loss, ad::scale(bce, cfg.occ_bce_weight));
            }
        }
        if (miss_sum > 0.0) {
            const ad::Value miss =
                ad::constant(Tensor::scalar(miss_sum / denom), "miss_penalty");
            level_loss = level_loss.defined() ? ad::add(level_loss, miss) : miss;
        }
        if (!level_loss.defined()) level_loss = ad::constant(Tensor::scalar(0.0), "zero");
        const ad::Value scaled = ad::scale(level_loss, alphas[size_t(li)]);
        if (per_level) (*per_level)[size_t(li)] = scaled.scalar();
        total = total.defined() ? ad::add(total, scaled) : scaled;
        (void)class_weight_sum;
    }
    return total;
}

ad::Value loss_silog(const ad::Value& depth_pred, const std::vector<double>& depth_gt,
                     double lambda) {
    const std::int64_t r = depth_pred.numel();
    if (std::int64_t(depth_gt.size()) != r)
        throw std::invalid_argument("loss_silog: ray count mismatch");
    for (std::int64_t i = 0; i < r; ++i) {
        if (depth_pred.data().at(i) <= 0.0)
            throw std::invalid_argument("loss_silog: nonpositive predicted depth on a supervised ray");
        if (depth_gt[size_t(i)] <= 0.0)
            throw std::invalid_argument("loss_silog: nonpositive ground-truth depth");
    }
    std::vector<double> log_gt(depth_gt.size());
    for (size_t i = 0; i < depth_gt.size(); ++i) log_gt[i] = std::log(depth_gt[i]);
    const ad::Value g = ad::sub(ad::log_v(depth_pred),
                                ad::constant(Tensor({r, 1}, std::move(log_gt)), "log_gt"));
    return ad::sub(ad::mean_all(ad::square(g)),
                   ad::scale(ad::square(ad::mean_all(g)), lambda));
}

ad::Value loss_implicit(const std::vector<ImplicitLevelTerms>& terms, const LossConfig& cfg,
                        int levels, std::vector<double>* per_level) {
    if (int(terms.size()) != levels - 1)
        throw std::invalid_argument("loss_implicit: expects terms for levels 2..L");
    const std::vector<double> alphas = cfg.alphas(levels);
    if (per_level) per_level->assign(size_t(levels), 0.0);
    ad::Value total;
    for (int level = 2; level <= levels; ++level) {
        const ImplicitLevelTerms& t = terms[size_t(level - 2)];
        ad::Value level_loss;
        if (t.depth_pred.defined() && !t.depth_gt.empty())
            level_loss = loss_silog(t.depth_pred, t.depth_gt, cfg.silog_lambda);
        if (t.occ_opacity.defined() && !t.occ_gt.empty()) {
            const ad::Value bce = ad::bce_mean(t.occ_opacity, t.occ_gt);
            level_loss = level_loss.defined() ? ad::add(level_loss, bce) : bce;
        }
        if (!level_loss.defined()) continue;
        const ad::Value scaled = ad::scale(level_loss, alphas[size_t(level - 1)]);
        if (per_level) (*per_level)[size_t(level - 1)] = scaled.scalar();
        total = total.defined() ? ad::add(total, scaled) : scaled;
    }
    if (!total.defined()) total = ad::constant(Tensor::scalar(0.0), "zero_implicit");
    return total;
}

} // namespace voxocc
