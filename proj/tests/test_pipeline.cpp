// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "voxocc/harness.hpp"

using namespace voxocc;
namespace ad = voxocc::ad;

namespace {

ExperimentConfig toy_config() {
    ExperimentConfig cfg;
    cfg.grid_h = 16;
    cfg.grid_w = 16;
    cfg.grid_z = 4;
    cfg.voxel_size = 0.5;
    cfg.origin_x = -4.0;
    cfg.origin_y = -4.0;
    cfg.origin_z = 0.0;
    cfg.levels = 2;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.layers = {1, 1};
    cfg.points = {2, 2};
    cfg.max_queries = {256, 2048};
    cfg.posenc_frequencies = 2;
    cfg.field_hidden = {8};
    cfg.classes = 3;
    cfg.scene_boxes = 1;
    cfg.scene_walls = 1;
    cfg.occluder_fraction = 0.0;
    cfg.cameras = 2;
    cfg.image_size = 20;
    cfg.train_scenes = 2;
    cfg.eval_scenes = 1;
    cfg.rays_per_camera = 4;
    cfg.ray_samples = 4;
    cfg.coarse_samples = 16;
    cfg.bce_voxels = 16;
    cfg.steps = 4;
    cfg.seed = 11;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

} // namespace

TEST_CASE("forward pass runs, is finite, and is deterministic") {
    const ExperimentConfig cfg = toy_config();
    Model model = Model::create(cfg);
    const SceneSpec spec = scene_spec_from_config(cfg);
    const SceneBundle bundle =
        SceneBundle::build(generate_scene(spec, 5), cfg.levels, false);

    const ForwardResult a = forward_pipeline(model, bundle, 42, true);
    CHECK(std::isfinite(a.total_loss.scalar()));
    CHECK(a.total_loss.scalar() > 0.0);
    CHECK(a.level_explicit.size() == 2);
    CHECK(a.level_implicit.size() == 2);
    CHECK(a.level_implicit[0] == 0.0); // no NeRF term at level 1

    const ForwardResult b = forward_pipeline(model, bundle, 42, true);
    CHECK(a.total_loss.scalar() == b.total_loss.scalar());
    CHECK(a.final_indices == b.final_indices);

    // A different step seed draws different rays.
    const ForwardResult c = forward_pipeline(model, bundle, 43, true);
    CHECK(a.total_loss.scalar() != c.total_loss.scalar());
}

TEST_CASE("pyramid containment: every active set refines the coarser hybrid mask") {
    const ExperimentConfig cfg = toy_config();
    Model model = Model::create(cfg);
    const SceneSpec spec = scene_spec_from_config(cfg);
    const SceneBundle bundle =
        SceneBundle::build(generate_scene(spec, 9), cfg.levels, false);
    const ForwardResult fr = forward_pipeline(model, bundle, 7, true);
    REQUIRE(fr.level_active.size() == 2);
    REQUIRE(fr.level_hybrid_mask.size() == 2);
    const GridDims coarse_dims = level_dims(bundle.scene.grid, 1, cfg.levels);
    std::int64_t inside = 0;
    for (const Vec3i& v : fr.level_active[1]) {
        const Vec3i parent{v.x / 2, v.y / 2, v.z / 2};
        CHECK(fr.level_hybrid_mask[0][size_t(coarse_dims.index(parent))] == 1);
        ++inside;
    }
    CHECK(inside > 0);
}

TEST_CASE("hybrid masks degrade as spec'd when the NeRF branch is off") {
    ExperimentConfig cfg = toy_config();
    cfg.use_nerf = false;
    Model model = Model::create(cfg);
    const SceneSpec spec = scene_spec_from_config(cfg);
    const SceneBundle bundle =
        SceneBundle::build(generate_scene(spec, 5), cfg.levels, false);
    const ForwardResult fr = forward_pipeline(model, bundle, 42, true);
    CHECK(std::isfinite(fr.total_loss.scalar()));
    CHECK(fr.implicit_loss.scalar() == 0.0);
}

TEST_CASE("full-pipeline gradients pass finite differences on a 3-voxel toy") {
    ExperimentConfig cfg = toy_config();
    cfg.grid_h = 8;
    cfg.grid_w = 8;
    cfg.grid_z = 2;
    cfg.origin_x = -2.0;
    cfg.origin_y = -2.0;
    cfg.scene_boxes = 0;
    cfg.scene_walls = 0;
    cfg.rays_per_camera = 3;
    cfg.bce_voxels = 8;
    // Saturated threshold keeps the discrete structure (masks, caps, sample
    // partitions) fixed under the +-eps parameter perturbations.
    cfg.theta = 0.02;
    Model model = Model::create(cfg);

    GroundTruthScene scene = generate_scene(scene_spec_from_config(cfg), 3);
    scene.semantics[size_t(scene.grid.index({2, 2, 0}))] = 1;
    scene.semantics[size_t(scene.grid.index({3, 2, 0}))] = 2;
    scene.semantics[size_t(scene.grid.index({5, 5, 1}))] = 1;
    const SceneBundle bundle = SceneBundle::build(scene, cfg.levels, false);

    // Check at a generic point: a short warmup moves every parameter group
    // off its symmetric initialization.
    ad::SgdOptimizer warmup(0.05, 0.9);
    for (int step = 0; step < 25; ++step) {
        ad::zero_grad(model.params);
        const ForwardResult fr = forward_pipeline(model, bundle, 1000 + step, true);
        ad::backward(fr.total_loss);
        warmup.step(model.params);
    }
    auto build = [&] {
        return forward_pipeline(model, bundle, 1234, true).total_loss;
    };
    // One representative parameter per group.
    std::vector<ad::Value> probes;
    for (const ad::Value& p : model.params) {
        const std::string& n = p.name();
        if (n == "encoder.conv0.w" || n == "level1_embedding" || n == "hybrid_embedding" ||
            n == "lift1.layer0.w_attn" || n == "lift2.layer0.w_offset" ||
            n == "lift2.conv_kernel" || n == "head2.w0" || n == "field.w0")
            probes.push_back(p);
    }
    REQUIRE(probes.size() == 8);
    CHECK(ad::grad_check(build, probes, 1e-6, 4, 99) < 1e-5);
}

TEST_CASE("a few optimizer steps reduce the toy loss") {
    ExperimentConfig cfg = toy_config();
    Model model = Model::create(cfg);
    const SceneSpec spec = scene_spec_from_config(cfg);
    const SceneBundle bundle =
        SceneBundle::build(generate_scene(spec, 5), cfg.levels, false);
    ad::SgdOptimizer opt(0.01, 0.9);
    double first = 0.0;
    std::vector<double> recent;
    for (int step = 0; step < 80; ++step) {
        ad::zero_grad(model.params);
        const ForwardResult fr = forward_pipeline(model, bundle, 42, true);
        if (step == 0) first = fr.total_loss.scalar();
        recent.push_back(fr.total_loss.scalar());
        if (recent.size() > 10) recent.erase(recent.begin());
        ad::backward(fr.total_loss);
        opt.step(model.params);
    }
    double avg10 = 0.0;
    for (double v : recent) avg10 += v;
    avg10 /= double(recent.size());
    CHECK(avg10 < first);
}

TEST_CASE("checkpoint round trip preserves predictions") {
    const ExperimentConfig cfg = toy_config();
    Model model = Model::create(cfg);
    const SceneSpec spec = scene_spec_from_config(cfg);
    const SceneBundle bundle =
        SceneBundle::build(generate_scene(spec, 5), cfg.levels, false);
    const ForwardResult before = forward_pipeline(model, bundle, 3, false);
    model.save("/tmp/voxocc_model.ckpt");

    Model fresh = Model::create(cfg);
    fresh.load("/tmp/voxocc_model.ckpt");
    const ForwardResult after = forward_pipeline(fresh, bundle, 3, false);
    CHECK(before.final_indices == after.final_indices);
    CHECK(before.final_classes == after.final_classes);
}

TEST_CASE("train twice: metrics and loss CSVs are byte-identical") {
    namespace fs = std::filesystem;
    ExperimentConfig cfg = toy_config();
    cfg.steps = 6;
    cfg.out_dir = "/tmp/voxocc_train_a";
    fs::remove_all(cfg.out_dir);
    const TrainOutput a = train(cfg);
    REQUIRE(!a.aborted_non_finite);
    cfg.out_dir = "/tmp/voxocc_train_b";
    fs::remove_all(cfg.out_dir);
    const TrainOutput b = train(cfg);
    CHECK(slurp(a.metrics_csv_path) == slurp(b.metrics_csv_path));
    CHECK(slurp(a.loss_csv_path) == slurp(b.loss_csv_path));
    CHECK(!slurp(a.metrics_csv_path).empty());
    CHECK(fs::exists(fs::path("/tmp/voxocc_train_a") / "model.ckpt"));
    CHECK(fs::exists(fs::path("/tmp/voxocc_train_a") / "pred_volume_eval0.bin"));
}

TEST_CASE("steps = 0 reports the untrained baseline") {
    namespace fs = std::filesystem;
    ExperimentConfig cfg = toy_config();
    cfg.steps = 0;
    cfg.out_dir = "/tmp/voxocc_train_zero";
    fs::remove_all(cfg.out_dir);
    const TrainOutput out = train(cfg);
    CHECK(!out.aborted_non_finite);
    CHECK(out.aggregate.sc_iou >= 0.0);
    CHECK(out.aggregate.sc_iou <= 1.0);
}
