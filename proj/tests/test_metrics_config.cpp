// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "voxocc/config.hpp"
#include "voxocc/metrics.hpp"

using namespace voxocc;

namespace {

// Exhaustive set-arithmetic oracle.
double iou_oracle(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                  const std::vector<std::uint8_t>* mask) {
    std::int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        inter += (pred[i] && gt[i]);
        uni += (pred[i] || gt[i]);
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

} // namespace

TEST_CASE("iou basics") {
    const std::vector<std::uint8_t> a{1, 1, 0, 0}, b{1, 1, 0, 0};
    CHECK(compute_iou(a, b) == 1.0);
    const std::vector<std::uint8_t> c{1, 0, 0, 0}, d{0, 1, 0, 0};
    CHECK(compute_iou(c, d) == 0.0);
    // Prediction covers gt plus an equal-sized extra set.
    const std::vector<std::uint8_t> gt{1, 1, 0, 0}, pred{1, 1, 1, 1};
    CHECK(compute_iou(pred, gt) == 0.5);
    // Empty union is defined as 1.
    const std::vector<std::uint8_t> z{0, 0};
    CHECK(compute_iou(z, z) == 1.0);
    CHECK_THROWS_AS(compute_iou(a, z), std::invalid_argument);
}

TEST_CASE("iou and miou match the exhaustive oracle on randomized 4^3 grids") {
    Rng rng(17);
    const int n = 64;
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<std::uint8_t> pred(n), gt(n), mask(n);
        std::vector<std::uint8_t> pred_cls(n), gt_cls(n);
        const int k = 2 + int(rng.uniform_index(4));
        for (int i = 0; i < n; ++i) {
            pred_cls[size_t(i)] = std::uint8_t(rng.uniform_index(std::uint64_t(k)));
            gt_cls[size_t(i)] = std::uint8_t(rng.uniform_index(std::uint64_t(k)));
            pred[size_t(i)] = pred_cls[size_t(i)] != 0;
            gt[size_t(i)] = gt_cls[size_t(i)] != 0;
            mask[size_t(i)] = rng.uniform() < 0.7;
        }
        CHECK(compute_iou(pred, gt) == iou_oracle(pred, gt, nullptr));
        CHECK(compute_iou(pred, gt, &mask) == iou_oracle(pred, gt, &mask));

        const MiouResult m = compute_miou(pred_cls, gt_cls, k, &mask);
        double sum = 0.0;
        int counted = 0;
        for (int c = 1; c < k; ++c) {
            std::vector<std::uint8_t> pc(n), gc(n);
            for (int i = 0; i < n; ++i) {
                pc[size_t(i)] = pred_cls[size_t(i)] == c;
                gc[size_t(i)] = gt_cls[size_t(i)] == c;
            }
            bool any = false;
            for (int i = 0; i < n; ++i)
                if (mask[size_t(i)] && (pc[size_t(i)] || gc[size_t(i)])) any = true;
            if (!any) continue;
            sum += iou_oracle(pc, gc, &mask);
            ++counted;
        }
        const double expect = counted == 0 ? 1.0 : sum / counted;
        CHECK(m.miou == doctest::Approx(expect).epsilon(1e-12));
        CHECK(int(m.classes.size()) == counted);
    }
}

TEST_CASE("miou handles perfect and half-missed predictions") {
    // Classes: 1 perfectly predicted, 2 present in gt but never predicted.
    const std::vector<std::uint8_t> gt{1, 1, 2, 2, 0, 0};
    const std::vector<std::uint8_t> pred{1, 1, 0, 0, 0, 0};
    const MiouResult m = compute_miou(pred, gt, 3);
    REQUIRE(m.classes == std::vector<int>{1, 2});
    CHECK(m.per_class[0] == 1.0);
    CHECK(m.per_class[1] == 0.0);
    CHECK(m.miou == doctest::Approx(0.5));

    const MiouResult perfect = compute_miou(gt, gt, 3);
    CHECK(perfect.miou == 1.0);
    // Class ids beyond K are rejected.
    CHECK_THROWS_AS(compute_miou({5}, {0}, 3), std::invalid_argument);
}

TEST_CASE("the two protocols differ only through masked voxels") {
    Rng rng(23);
    const int n = 4 * 4 * 4;
    std::vector<std::uint8_t> pred(n), gt(n), mask(n);
    for (int i = 0; i < n; ++i) {
        pred[size_t(i)] = rng.uniform() < 0.4;
        gt[size_t(i)] = rng.uniform() < 0.4;
        mask[size_t(i)] = rng.uniform() < 0.6;
    }
    // Forcing agreement outside the mask makes the two protocols coincide.
    std::vector<std::uint8_t> pred_aligned = pred;
    for (int i = 0; i < n; ++i)
        if (!mask[size_t(i)]) pred_aligned[size_t(i)] = gt[size_t(i)];
    // Outside-mask voxels are the only place the masked and unmasked scores
    // can diverge.
    CHECK(compute_iou(pred_aligned, gt, &mask) == compute_iou(pred, gt, &mask));
}

TEST_CASE("occluded recall counts only invisible occupied voxels") {
    GroundTruthScene scene;
    scene.grid = {2, 2, 1};
    scene.voxel_size = 1.0;
    scene.origin = {0, 0, 0};
    scene.class_count = 2;
    scene.semantics = {1, 1, 0, 1};
    VisibilityGrid vis;
    vis.grid = scene.grid;
    vis.visible_occupied = {1, 0, 0, 0}; // voxels 1 and 3 are hidden
    vis.observed_free = {0, 0, 0, 0};
    bool defined = false;
    const std::vector<std::uint8_t> pred{0, 1, 0, 0}; // recalls one of two hidden
    CHECK(occluded_voxel_recall(pred, scene, vis, &defined) == doctest::Approx(0.5));
    CHECK(defined);
}

TEST_CASE("config: defaults validate, unknown keys rejected, file round trip") {
    ExperimentConfig cfg;
    cfg.validate();
    CHECK_THROWS_AS(cfg.apply("no_such_key", "1"), ConfigError);
    CHECK_THROWS_AS(cfg.apply("steps", "abc"), ConfigError);

    cfg.steps = 42;
    cfg.sampling = "hierarchical";
    cfg.layers = {2, 2, 1, 1};
    {
        std::ofstream os("/tmp/voxocc_cfg.txt");
        os << cfg.to_text();
    }
    ExperimentConfig loaded;
    loaded.load_file("/tmp/voxocc_cfg.txt");
    CHECK(loaded.steps == 42);
    CHECK(loaded.sampling == "hierarchical");
    CHECK(loaded.layers == std::vector<int>{2, 2, 1, 1});
    CHECK(loaded.to_text() == cfg.to_text());

    // Malformed lines and bad values.
    {
        std::ofstream os("/tmp/voxocc_bad.txt");
        os << "steps\n";
    }
    ExperimentConfig bad;
    CHECK_THROWS_AS(bad.load_file("/tmp/voxocc_bad.txt"), ConfigError);

    ExperimentConfig invalid;
    invalid.grid_h = 60; // not divisible by 2^(levels-1)
    CHECK_THROWS_AS(invalid.validate(), ConfigError);
    invalid = ExperimentConfig{};
    invalid.sampling = "magic";
    CHECK_THROWS_AS(invalid.validate(), ConfigError);
    invalid = ExperimentConfig{};
    invalid.theta = 1.0;
    CHECK_THROWS_AS(invalid.validate(), ConfigError);
}
