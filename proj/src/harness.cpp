// SPDX-License-Identifier: Apache-2.0
#include "voxocc/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace voxocc {

namespace fs = std::filesystem;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<SceneBundle> build_train_bundles(const ExperimentConfig& cfg) {
    const SceneSpec spec = scene_spec_from_config(cfg);
    std::vector<SceneBundle> bundles;
    for (int i = 0; i < cfg.train_scenes; ++i)
        bundles.push_back(SceneBundle::build(
            generate_scene(spec, mix_seed(cfg.seed, 1000 + std::uint64_t(i))), cfg.levels,
            false));
    return bundles;
}

std::vector<SceneBundle> build_eval_bundles(const ExperimentConfig& cfg) {
    const SceneSpec spec = scene_spec_from_config(cfg);
    std::vector<SceneBundle> bundles;
    for (int i = 0; i < cfg.eval_scenes; ++i)
        bundles.push_back(SceneBundle::build(
            generate_scene(spec, mix_seed(cfg.seed, 500000 + std::uint64_t(i))), cfg.levels,
            true));
    return bundles;
}

MetricsReport evaluate_scenes(const Model& model, const std::vector<SceneBundle>& bundles,
                              std::vector<MetricsReport>* per_scene) {
    MetricsReport agg;
    std::vector<double> class_iou_sum(size_t(model.cfg.classes), 0.0);
    std::vector<int> class_iou_count(size_t(model.cfg.classes), 0);
    int occluded_defined = 0;
    if (per_scene) per_scene->clear();
    for (const SceneBundle& bundle : bundles) {
        const ForwardResult fr =
            forward_pipeline(model, bundle, mix_seed(model.cfg.seed, 999), false);
        const DensePrediction dp = densify_prediction(fr, bundle.scene.grid);
        std::vector<std::uint8_t> gt_occ(static_cast<size_t>(bundle.scene.grid.count()), 0);
        for (std::int64_t i = 0; i < bundle.scene.grid.count(); ++i)
            gt_occ[size_t(i)] = bundle.scene.occupied(i) ? 1 : 0;

        const std::vector<std::uint8_t>* mask = nullptr;
        std::vector<std::uint8_t> observed;
        if (model.cfg.eval_protocol == "visible_only") {
            observed.resize(size_t(bundle.scene.grid.count()));
            for (size_t i = 0; i < observed.size(); ++i)
                observed[i] = bundle.visibility.visible_occupied[i] |
                              bundle.visibility.observed_free[i];
            mask = &observed;
        }

        MetricsReport r;
        r.sc_iou = compute_iou(dp.occupied, gt_occ, mask);
        const MiouResult miou =
            compute_miou(dp.classes, bundle.scene.semantics, model.cfg.classes, mask);
        r.ssc_miou = miou.miou;
        r.per_class_iou = miou.per_class;
        r.classes_present = miou.classes;
        bool defined = false;
        r.occluded_recall =
            occluded_voxel_recall(dp.occupied, bundle.scene, bundle.visibility, &defined);
        r.has_occluded = defined;
        if (per_scene) per_scene->push_back(r);

        agg.sc_iou += r.sc_iou;
        agg.ssc_miou += r.ssc_miou;
        if (defined) {
            agg.occluded_recall += r.occluded_recall;
            ++occluded_defined;
        }
        for (size_t ci = 0; ci < miou.classes.size(); ++ci) {
            class_iou_sum[size_t(miou.classes[ci])] += miou.per_class[ci];
            ++class_iou_count[size_t(miou.classes[ci])];
        }
    }
    const double n = double(std::max<size_t>(bundles.size(), 1));
    agg.sc_iou /= n;
    agg.ssc_miou /= n;
    agg.has_occluded = occluded_defined > 0;
    if (occluded_defined > 0) agg.occluded_recall /= double(occluded_defined);
    for (int c = 1; c < model.cfg.classes; ++c) {
        if (class_iou_count[size_t(c)] == 0) continue;
        agg.classes_present.push_back(c);
        agg.per_class_iou.push_back(class_iou_sum[size_t(c)] / class_iou_count[size_t(c)]);
    }
    return agg;
}

namespace {

void write_metrics_csv(const std::string& path, const std::vector<MetricsReport>& per_scene,
                       const MetricsReport& agg, int class_count) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write metrics csv: " + path);
    os << "scene,sc_iou,ssc_miou,occluded_recall";
    for (int c = 1; c < class_count; ++c) os << ",class_" << c << "_iou";
    os << "\n";
    auto row = [&](const std::string& name, const MetricsReport& r) {
        os << name << "," << format_double(r.sc_iou) << "," << format_double(r.ssc_miou) << ",";
        os << (r.has_occluded ? format_double(r.occluded_recall) : "na");
        for (int c = 1; c < class_count; ++c) {
            os << ",";
            bool found = false;
            for (size_t i = 0; i < r.classes_present.size(); ++i) {
                if (r.classes_present[i] == c) {
                    os << format_double(r.per_class_iou[i]);
                    found = true;
                    break;
                }
            }
            if (!found) os << "na";
        }
        os << "\n";
    };
    for (size_t i = 0; i < per_scene.size(); ++i) row("eval" + std::to_string(i), per_scene[i]);
    row("mean", agg);
}

} // namespace

TrainOutput train(const ExperimentConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream os(fs::path(cfg.out_dir) / "config.txt");
        os << cfg.to_text();
    }

    const auto t_start = std::chrono::steady_clock::now();
    Model model = Model::create(cfg);
    std::vector<SceneBundle> train_bundles = build_train_bundles(cfg);

    TrainOutput out;
    out.loss_csv_path = (fs::path(cfg.out_dir) / "loss.csv").string();
    out.metrics_csv_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
    out.checkpoint_path = (fs::path(cfg.out_dir) / "model.ckpt").string();

    std::ofstream loss_csv(out.loss_csv_path);
    loss_csv << "step";
    for (int l = 1; l <= cfg.levels; ++l) loss_csv << ",exp_l" << l;
    for (int l = 1; l <= cfg.levels; ++l) loss_csv << ",imp_l" << l;
    loss_csv << ",total\n";

    ad::SgdOptimizer opt(cfg.lr, cfg.momentum);
    std::vector<Tensor> last_good;
    auto snapshot = [&]() {
        last_good.clear();
        for (const auto& p : model.params) last_good.push_back(p.data());
    };
    snapshot();

    std::vector<double> recent;
    for (int step = 0; step < cfg.steps; ++step) {
        const SceneBundle& bundle = train_bundles[size_t(step % cfg.train_scenes)];
        const std::uint64_t step_seed = mix_seed(cfg.seed, 77000 + std::uint64_t(step));
        ad::zero_grad(model.params);
        double total = 0.0;
        try {
            const ForwardResult fr = forward_pipeline(model, bundle, step_seed, true);
            total = fr.total_loss.scalar();
            if (!std::isfinite(total)) throw std::runtime_error("non-finite total loss");
            ad::backward(fr.total_loss);
            loss_csv << step;
            for (int l = 0; l < cfg.levels; ++l)
                loss_csv << "," << format_double(fr.level_explicit[size_t(l)]);
            for (int l = 0; l < cfg.levels; ++l)
                loss_csv << "," << format_double(fr.level_implicit[size_t(l)]);
            loss_csv << "," << format_double(total) << "\n";
        } catch (const std::runtime_error& e) {
            // Numerical abort: restore and persist the last good parameters.
            std::cerr << "numerical abort at step " << step << ": " << e.what() << "\n";
            for (size_t i = 0; i < model.params.size(); ++i)
                model.params[i].node()->data = last_good[i];
            model.save(out.checkpoint_path);
            out.aborted_non_finite = true;
            return out;
        }
        opt.step(model.params);
        snapshot();
        if (step == 0) out.first_loss = total;
        recent.push_back(total);
        if (recent.size() > 10) recent.erase(recent.begin());
        if ((step + 1) % 100 == 0) {
            double avg = 0.0;
            for (double v : recent) avg += v;
            std::cout << "step " << (step + 1) << "/" << cfg.steps
                      << " loss(avg10) " << avg / double(recent.size()) << std::endl;
        }
    }
    double avg10 = 0.0;
    for (double v : recent) avg10 += v;
    out.last_loss_avg10 = recent.empty() ? 0.0 : avg10 / double(recent.size());
    const auto t_trained = std::chrono::steady_clock::now();

    model.save(out.checkpoint_path);
    std::vector<SceneBundle> eval_bundles = build_eval_bundles(cfg);
    out.aggregate = evaluate_scenes(model, eval_bundles, &out.per_scene);
    const auto t_eval = std::chrono::steady_clock::now();
    out.aggregate.train_seconds =
        std::chrono::duration<double>(t_trained - t_start).count();
    out.aggregate.eval_seconds = std::chrono::duration<double>(t_eval - t_trained).count();

    write_metrics_csv(out.metrics_csv_path, out.per_scene, out.aggregate, cfg.classes);
    {
        std::ofstream os(fs::path(cfg.out_dir) / "timings.txt");
        os << "train_seconds " << out.aggregate.train_seconds << "\n"
           << "eval_seconds " << out.aggregate.eval_seconds << "\n";
    }
    export_prediction(model, eval_bundles.front(), cfg.out_dir, "eval0");
    return out;
}

void AblationResult::stats(const std::string& variant, double MetricsReport::*field,
                           double& mean, double& stddev) const {
    std::vector<double> vals;
    for (const AblationRow& r : rows)
        if (r.variant == variant) vals.push_back(r.report.*field);
    mean = 0.0;
    stddev = 0.0;
    if (vals.empty()) return;
    for (double v : vals) mean += v;
    mean /= double(vals.size());
    for (double v : vals) stddev += (v - mean) * (v - mean);
    stddev = vals.size() > 1 ? std::sqrt(stddev / double(vals.size() - 1)) : 0.0;
}

ExperimentConfig ablation_benchmark_config() {
    ExperimentConfig cfg;
    cfg.grid_h = 32;
    cfg.grid_w = 32;
    cfg.grid_z = 8;
    cfg.voxel_size = 0.25;
    cfg.origin_x = -4.0;
    cfg.origin_y = -4.0;
    cfg.origin_z = 0.0;
    cfg.image_size = 48;
    cfg.max_queries = {64, 256, 512, 1024};
    cfg.train_scenes = 6;
    cfg.eval_scenes = 3;
    cfg.rays_per_camera = 16;
    cfg.bce_voxels = 96;
    cfg.steps = 400;
    cfg.lr = 1e-3;
    cfg.out_dir = "out/ablation";
    return cfg;
}

AblationResult run_ablation(const ExperimentConfig& base, const std::string& suite,
                            int n_seeds, const std::string& out_csv) {
    struct Variant {
        std::string name;
        ExperimentConfig cfg;
    };
    std::vector<Variant> variants;
    auto add = [&](const std::string& name, auto&& mutate) {
        ExperimentConfig c = base;
        mutate(c);
        variants.push_back({name, std::move(c)});
    };
    if (suite == "components") {
        add("full", [](ExperimentConfig&) {});
        add("wo_nerf", [](ExperimentConfig& c) { c.use_nerf = false; });
        add("wo_sparse_conv", [](ExperimentConfig& c) { c.use_sparse_conv = false; });
        add("nerf_only", [](ExperimentConfig& c) {
            c.use_attention = false;
            c.sampling = "probabilistic";
        });
    } else if (suite == "sampling") {
        add("hierarchical_64", [](ExperimentConfig& c) {
            c.sampling = "hierarchical";
            c.ray_samples = 64;
            c.coarse_samples = std::max(c.coarse_samples, 64);
        });
        add("probabilistic_32", [](ExperimentConfig& c) {
            c.sampling = "probabilistic";
            c.ray_samples = 32;
        });
        add("occupancy_aware_16", [](ExperimentConfig& c) {
            c.sampling = "occupancy_aware";
            c.ray_samples = 16;
        });
        add("occupancy_aware_32", [](ExperimentConfig& c) {
            c.sampling = "occupancy_aware";
            c.ray_samples = 32;
        });
        add("occupancy_aware_64", [](ExperimentConfig& c) {
            c.sampling = "occupancy_aware";
            c.ray_samples = 64;
            c.coarse_samples = std::max(c.coarse_samples, 64);
        });
    } else {
        throw ConfigError("unknown ablation suite: " + suite);
    }

    AblationResult result;
    for (const Variant& variant : variants) {
        for (int s = 0; s < n_seeds; ++s) {
            ExperimentConfig cfg = variant.cfg;
            cfg.seed = mix_seed(base.seed, 31 + std::uint64_t(s));
            cfg.out_dir = (fs::path(base.out_dir) /
                           ("ablate_" + suite + "_" + variant.name + "_s" + std::to_string(s)))
                              .string();
            std::cout << "[ablate] " << variant.name << " seed " << s << std::endl;
            const TrainOutput to = train(cfg);
            result.rows.push_back({variant.name, cfg.seed, to.aggregate});
        }
    }

    fs::create_directories(fs::path(out_csv).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out_csv).parent_path());
    std::ofstream os(out_csv);
    os << "suite,variant,seed,sc_iou,ssc_miou,occluded_recall\n";
    for (const AblationRow& r : result.rows)
        os << suite << "," << r.variant << "," << r.seed << ","
           << format_double(r.report.sc_iou) << "," << format_double(r.report.ssc_miou) << ","
           << (r.report.has_occluded ? format_double(r.report.occluded_recall) : "na") << "\n";
    for (const Variant& variant : variants) {
        double mean_iou, sd_iou, mean_miou, sd_miou, mean_rec, sd_rec;
        result.stats(variant.name, &MetricsReport::sc_iou, mean_iou, sd_iou);
        result.stats(variant.name, &MetricsReport::ssc_miou, mean_miou, sd_miou);
        result.stats(variant.name, &MetricsReport::occluded_recall, mean_rec, sd_rec);
        os << suite << "," << variant.name << "_mean,na," << format_double(mean_iou) << ","
           << format_double(mean_miou) << "," << format_double(mean_rec) << "\n";
        os << suite << "," << variant.name << "_stddev,na," << format_double(sd_iou) << ","
           << format_double(sd_miou) << "," << format_double(sd_rec) << "\n";
    }
    return result;
}

void export_prediction(const Model& model, const SceneBundle& bundle,
                       const std::string& out_dir, const std::string& tag) {
    fs::create_directories(out_dir);
    const ForwardResult fr =
        forward_pipeline(model, bundle, mix_seed(model.cfg.seed, 999), false);
    const DensePrediction dp = densify_prediction(fr, bundle.scene.grid);
    save_volume((fs::path(out_dir) / ("pred_volume_" + tag + ".bin")).string(),
                bundle.scene.grid, bundle.scene.voxel_size, bundle.scene.origin, dp.classes,
                dp.occupancy_scores);

    // NeRF depth maps at the finest level plus a center-pixel sample dump.
    const FeaturePyramid pyramid = encode_images(bundle.images, model.encoder);
    const int level = model.cfg.levels;
    for (size_t cam = 0; cam < bundle.scene.rig.size(); ++cam) {
        const Camera& camera = bundle.scene.rig.cameras[cam];
        DepthMap dm;
        dm.height = camera.height;
        dm.width = camera.width;
        dm.depth.assign(size_t(camera.height * camera.width), 0.0);
        dm.valid.assign(size_t(camera.height * camera.width), 0);
        std::ofstream dump((fs::path(out_dir) /
                            ("ray_samples_" + tag + "_cam" + std::to_string(cam) + ".csv"))
                               .string());
        dump << "t,sigma,d,w\n";
        Rng rng(mix_seed(model.cfg.seed, 4242 + std::uint64_t(cam)));
        for (int py = 0; py < camera.height; ++py) {
            for (int px = 0; px < camera.width; ++px) {
                const Ray ray = generate_ray(camera, {double(px), double(py)});
                const RaySamples samples = sample_uniform(ray, model.cfg.ray_samples, rng);
                std::vector<Vec3> pts(samples.ts.size());
                for (size_t i = 0; i < samples.ts.size(); ++i) pts[i] = samples.point(int(i));
                const std::vector<double> sig = eval_field_sigma_plain(
                    model.field, pts, pyramid.level(int(cam), level).data(), camera);
                const std::vector<double> w = render_weights(sig, samples.deltas);
                const double depth = render_depth_value(w, samples.ts);
                const std::int64_t pix = std::int64_t(py) * camera.width + px;
                dm.depth[size_t(pix)] = depth;
                dm.valid[size_t(pix)] = 1;
                if (py == camera.height / 2 && px == camera.width / 2)
                    for (size_t i = 0; i < samples.ts.size(); ++i)
                        dump << format_double(samples.ts[i]) << "," << format_double(sig[i])
                             << "," << format_double(samples.ts[i]) << ","
                             << format_double(w[i]) << "\n";
            }
        }
        save_depth_map((fs::path(out_dir) /
                        ("depth_" + tag + "_cam" + std::to_string(cam) + ".bin"))
                           .string(),
                       dm);
    }
}

} // namespace voxocc
