// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "voxocc/pipeline.hpp"

namespace voxocc {

struct TrainOutput {
    MetricsReport aggregate;
    std::vector<MetricsReport> per_scene;
    std::string checkpoint_path;
    std::string metrics_csv_path;
    std::string loss_csv_path;
    bool aborted_non_finite = false;
    double first_loss = 0.0;
    double last_loss_avg10 = 0.0; // mean of the final 10 recorded steps
};

// Deterministic end-to-end training on generated scenes, with loss CSV,
// metrics CSV, checkpoint and an exported predicted volume in cfg.out_dir.
TrainOutput train(const ExperimentConfig& cfg);

// Evaluation of an existing model against freshly generated held-out scenes.
MetricsReport evaluate_scenes(const Model& model, const std::vector<SceneBundle>& bundles,
                              std::vector<MetricsReport>* per_scene = nullptr);

// Held-out bundles for a config (eval split seeds).
std::vector<SceneBundle> build_eval_bundles(const ExperimentConfig& cfg);
std::vector<SceneBundle> build_train_bundles(const ExperimentConfig& cfg);

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    MetricsReport report;
};

struct AblationResult {
    std::vector<AblationRow> rows;

    // Mean / stddev of a metric over a variant's seeds.
    void stats(const std::string& variant, double MetricsReport::*field, double& mean,
               double& stddev) const;
};

// suite: "components" (full, wo_nerf, wo_sparse_conv, nerf_only) or
// "sampling" (hierarchical/64, probabilistic/32, occupancy_aware/{16,32,64}).
AblationResult run_ablation(const ExperimentConfig& base, const std::string& suite,
                            int n_seeds, const std::string& out_csv);

// Reduced-size benchmark used for the ablation suites (seconds-scale runs so
// multi-seed comparisons stay tractable on one core).
ExperimentConfig ablation_benchmark_config();

// Inference-time exports: predicted volume plus per-camera rendered depth
// maps and a per-ray (t, sigma, d, w) debug dump for the center pixel.
void export_prediction(const Model& model, const SceneBundle& bundle,
                       const std::string& out_dir, const std::string& tag);

std::string format_double(double v); // locale-free shortest-roundtrip-ish %.17g

} // namespace voxocc
