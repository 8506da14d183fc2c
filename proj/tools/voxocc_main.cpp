// SPDX-License-Identifier: Apache-2.0
//
// voxocc: synthetic multi-camera semantic scene completion with hybrid
// transformer + implicit-field query proposals.
//
//   voxocc gen-scenes -o scenes/          write gt scenes, rigs, depth maps
//   voxocc train --steps 2000             train and evaluate on held-out scenes
//   voxocc eval --checkpoint model.ckpt   evaluate an existing checkpoint
//   voxocc ablate --suite components      run an ablation suite
//   voxocc export --checkpoint model.ckpt export predicted volume + depths
//
// All ExperimentConfig keys are exposed as --<key> flags and may also be set
// through --config <file> (same keys, `key value` lines).

#include <CLI11.hpp>
#include <map>
#include <filesystem>
#include <iostream>

#include "voxocc/harness.hpp"

namespace fs = std::filesystem;
using namespace voxocc;

namespace {

const std::vector<std::string> kConfigKeys = {
    "scene_boxes", "scene_walls", "occluder_fraction", "classes", "grid_h", "grid_w",
    "grid_z", "voxel_size", "origin_x", "origin_y", "origin_z", "cameras", "image_size",
    "train_scenes", "eval_scenes", "seed", "levels", "channels", "heads", "layers",
    "points", "max_queries", "posenc_frequencies", "field_hidden", "sampling",
    "coarse_samples", "ray_samples", "rays_per_camera", "bce_voxels", "use_nerf",
    "use_attention", "use_sparse_conv", "theta", "beta", "silog_lambda", "alpha_decay",
    "occ_bce_weight", "miss_probability", "lr", "momentum", "steps", "eval_protocol",
    "out_dir"};

struct ConfigCli {
    std::string config_file;
    std::map<std::string, std::string> overrides;

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "config file (key value lines)");
        for (const std::string& key : kConfigKeys)
            app->add_option("--" + key, overrides[key], "config key " + key);
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg;
        if (!config_file.empty()) cfg.load_file(config_file);
        for (const auto& [key, value] : overrides)
            if (!value.empty()) cfg.apply(key, value);
        cfg.validate();
        return cfg;
    }
};

void print_report(const MetricsReport& r) {
    std::cout << "SC IoU          " << r.sc_iou << "\n";
    std::cout << "SSC mIoU        " << r.ssc_miou << "\n";
    std::cout << "occluded recall "
              << (r.has_occluded ? std::to_string(r.occluded_recall) : std::string("n/a"))
              << "\n";
    for (size_t i = 0; i < r.classes_present.size(); ++i)
        std::cout << "class " << r.classes_present[i] << " IoU     " << r.per_class_iou[i]
                  << "\n";
    if (r.train_seconds > 0.0)
        std::cout << "train " << r.train_seconds << " s, eval " << r.eval_seconds << " s\n";
}

int cmd_gen_scenes(const ExperimentConfig& cfg) {
    const fs::path dir = fs::path(cfg.out_dir) / "scenes";
    fs::create_directories(dir);
    const SceneSpec spec = scene_spec_from_config(cfg);
    auto emit = [&](const std::string& name, std::uint64_t seed) {
        const GroundTruthScene scene = generate_scene(spec, seed);
        save_scene((dir / (name + ".bin")).string(), scene);
        save_rig((dir / (name + ".rig")).string(), scene.rig);
        for (size_t cam = 0; cam < scene.rig.size(); ++cam)
            save_depth_map(
                (dir / (name + "_depth_cam" + std::to_string(cam) + ".bin")).string(),
                render_gt_depth(scene, int(cam)));
    };
    for (int i = 0; i < cfg.train_scenes; ++i)
        emit("train" + std::to_string(i), mix_seed(cfg.seed, 1000 + std::uint64_t(i)));
    for (int i = 0; i < cfg.eval_scenes; ++i)
        emit("eval" + std::to_string(i), mix_seed(cfg.seed, 500000 + std::uint64_t(i)));
    std::cout << "wrote " << (cfg.train_scenes + cfg.eval_scenes) << " scenes to " << dir
              << "\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
    const TrainOutput out = train(cfg);
    if (out.aborted_non_finite) {
        std::cerr << "training aborted on non-finite loss; last good checkpoint at "
                  << out.checkpoint_path << "\n";
        return 3;
    }
    std::cout << "checkpoint: " << out.checkpoint_path << "\n";
    std::cout << "metrics:    " << out.metrics_csv_path << "\n";
    print_report(out.aggregate);
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint) {
    Model model = Model::create(cfg);
    model.load(checkpoint);
    const std::vector<SceneBundle> bundles = build_eval_bundles(cfg);
    std::vector<MetricsReport> per_scene;
    const MetricsReport agg = evaluate_scenes(model, bundles, &per_scene);
    print_report(agg);
    return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::string& suite, int seeds) {
    fs::create_directories(cfg.out_dir);
    auto run = [&](const std::string& s) {
        const std::string csv = (fs::path(cfg.out_dir) / ("ablation_" + s + ".csv")).string();
        run_ablation(cfg, s, seeds, csv);
        std::cout << "wrote " << csv << "\n";
    };
    if (suite == "all") {
        run("components");
        run("sampling");
    } else {
        run(suite);
    }
    return 0;
}

int cmd_export(const ExperimentConfig& cfg, const std::string& checkpoint, int scene_index) {
    Model model = Model::create(cfg);
    model.load(checkpoint);
    const SceneSpec spec = scene_spec_from_config(cfg);
    const GroundTruthScene scene =
        generate_scene(spec, mix_seed(cfg.seed, 500000 + std::uint64_t(scene_index)));
    const SceneBundle bundle = SceneBundle::build(scene, cfg.levels, false);
    export_prediction(model, bundle, cfg.out_dir, "eval" + std::to_string(scene_index));
    std::cout << "exported prediction for eval scene " << scene_index << " to " << cfg.out_dir
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic multi-camera semantic scene completion"};
    app.require_subcommand(1);

    ConfigCli gen_cfg, train_cfg, eval_cfg, ablate_cfg, export_cfg;
    std::string checkpoint, suite = "all";
    int seeds = 3, scene_index = 0;

    CLI::App* gen = app.add_subcommand("gen-scenes", "generate ground-truth scenes");
    gen_cfg.attach(gen);
    CLI::App* tr = app.add_subcommand("train", "train the full pipeline");
    train_cfg.attach(tr);
    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on held-out scenes");
    eval_cfg.attach(ev);
    ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    CLI::App* ab = app.add_subcommand("ablate", "run ablation suites");
    ablate_cfg.attach(ab);
    ab->add_option("--suite", suite, "components | sampling | all");
    ab->add_option("--seeds", seeds, "seeds per variant");
    CLI::App* ex = app.add_subcommand("export", "export predicted volume and depth maps");
    export_cfg.attach(ex);
    ex->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    ex->add_option("--scene-index", scene_index, "held-out scene index");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_scenes(gen_cfg.resolve());
        if (tr->parsed()) return cmd_train(train_cfg.resolve());
        if (ev->parsed()) return cmd_eval(eval_cfg.resolve(), checkpoint);
        if (ab->parsed()) return cmd_ablate(ablate_cfg.resolve(), suite, seeds);
        if (ex->parsed()) return cmd_export(export_cfg.resolve(), checkpoint, scene_index);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
