// SPDX-License-Identifier: Apache-2.0
#include "voxocc/metrics.hpp"

#include <stdexcept>

namespace voxocc {

double compute_iou(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                   const std::vector<std::uint8_t>* mask) {
    if (pred.size() != gt.size() || (mask && mask->size() != pred.size()))
        throw std::invalid_argument("compute_iou: shape mismatch");
    std::int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += (p && g);
        uni += (p || g);
    }
    if (uni == 0) return 1.0;
    return double(inter) / double(uni);
}

MiouResult compute_miou(const std::vector<std::uint8_t>& pred_classes,
                        const std::vector<std::uint8_t>& gt_classes, int class_count,
                        const std::vector<std::uint8_t>* mask) {
    if (pred_classes.size() != gt_classes.size() ||
        (mask && mask->size() != pred_classes.size()))
        throw std::invalid_argument("compute_miou: shape mismatch");
    for (std::uint8_t c : pred_classes)
        if (int(c) >= class_count) throw std::invalid_argument("compute_miou: class id >= K");
    for (std::uint8_t c : gt_classes)
        if (int(c) >= class_count) throw std::invalid_argument("compute_miou: class id >= K");

    MiouResult out;
    double sum = 0.0;
    for (int c = 1; c < class_count; ++c) {
        std::int64_t inter = 0, uni = 0;
        for (size_t i = 0; i < pred_classes.size(); ++i) {
            if (mask && !(*mask)[i]) continue;
            const bool p = pred_classes[i] == c, g = gt_classes[i] == c;
            inter += (p && g);
            uni += (p || g);
        }
        if (uni == 0) continue; // class absent from both sides
        out.classes.push_back(c);
        out.per_class.push_back(double(inter) / double(uni));
        sum += out.per_class.back();
    }
    out.miou = out.classes.empty() ? 1.0 : sum / double(out.classes.size());
    return out;
}

double occluded_voxel_recall(const std::vector<std::uint8_t>& pred_occupied,
                             const GroundTruthScene& scene, const VisibilityGrid& vis,
                             bool* defined) {
    if (std::int64_t(pred_occupied.size()) != scene.grid.count())
        throw std::invalid_argument("occluded_voxel_recall: shape mismatch");
    std::int64_t hidden = 0, recalled = 0;
    for (std::int64_t i = 0; i < scene.grid.count(); ++i) {
        if (!scene.occupied(i) || vis.visible_occupied[size_t(i)]) continue;
        ++hidden;
        recalled += pred_occupied[size_t(i)] != 0;
    }
    if (defined) *defined = hidden > 0;
    if (hidden == 0) return 0.0;
    return double(recalled) / double(hidden);
}

} // namespace voxocc
