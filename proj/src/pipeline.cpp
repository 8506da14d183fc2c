// SPDX-License-Identifier: Apache-2.0
#include "voxocc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace voxocc {

SamplingStrategy sampling_from_string(const std::string& s) {
    if (s == "hierarchical") return SamplingStrategy::kHierarchical;
    if (s == "probabilistic") return SamplingStrategy::kProbabilistic;
    if (s == "occupancy_aware") return SamplingStrategy::kOccupancyAware;
    throw ConfigError("unknown sampling strategy: " + s);
}

SceneSpec scene_spec_from_config(const ExperimentConfig& cfg) {
    SceneSpec spec;
    spec.n_boxes = cfg.scene_boxes;
    spec.n_walls = cfg.scene_walls;
    spec.occluder_fraction = cfg.occluder_fraction;
    spec.class_count = cfg.classes;
    spec.grid = {cfg.grid_h, cfg.grid_w, cfg.grid_z};
    spec.voxel_size = cfg.voxel_size;
    spec.origin = {cfg.origin_x, cfg.origin_y, cfg.origin_z};
    spec.n_cameras = cfg.cameras;
    spec.image_size = cfg.image_size;
    return spec;
}

namespace {

Rng sub_rng(std::uint64_t step_seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return Rng(mix_seed(mix_seed(mix_seed(step_seed, a), b), c));
}

} // namespace

Model Model::create(const ExperimentConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.loss_cfg.beta = cfg.beta;
    m.loss_cfg.theta = cfg.theta;
    m.loss_cfg.silog_lambda = cfg.silog_lambda;
    m.loss_cfg.alpha_decay = cfg.alpha_decay;
    m.loss_cfg.occ_bce_weight = cfg.occ_bce_weight;
    m.loss_cfg.miss_probability = cfg.miss_probability;
    m.loss_cfg.class_weights.assign(size_t(cfg.classes), 1.0);
    m.loss_cfg.class_weights[0] = cfg.free_class_weight;
    m.sampling = sampling_from_string(cfg.sampling);

    const std::int64_t c = cfg.channels;
    Rng rng(mix_seed(cfg.seed, 0x7a11ced5ULL));
    m.encoder = ConvEncoder::create("encoder", 3, c, cfg.levels, rng);

    PositionalEncodingConfig enc;
    enc.n_frequencies = cfg.posenc_frequencies;
    enc.include_input = true;
    const std::int64_t pdim = enc.output_dim();
    const double eb = 1.0 / std::sqrt(double(c));
    m.level1_embedding =
        ad::param(Tensor::uniform({1, c}, -eb, eb, rng), "level1_embedding");
    m.level1_pos_proj = ad::param(
        Tensor::uniform({pdim, c}, -1.0 / std::sqrt(double(pdim)), 1.0 / std::sqrt(double(pdim)), rng),
        "level1_pos_proj");
    m.hybrid_embedding =
        ad::param(Tensor::uniform({1, c}, -eb, eb, rng), "hybrid_embedding");

    DeformAttnConfig attn_cfg;
    attn_cfg.n_heads = cfg.heads;
    attn_cfg.layer_counts = cfg.layers;
    attn_cfg.point_counts = cfg.points;
    attn_cfg.validate(cfg.levels);
    for (int level = 1; level <= cfg.levels; ++level) {
        LiftLevelParams lp;
        lp.use_sparse_conv = cfg.use_sparse_conv;
        const std::string lname = "lift" + std::to_string(level);
        for (int li = 0; li < attn_cfg.layers_at(level); ++li)
            lp.layers.push_back(DeformAttnLayer::create(
                lname + ".layer" + std::to_string(li), c, cfg.heads,
                attn_cfg.points_at(level), rng));
        // Sparse conv kernel: identity center tap plus small noise.
        Tensor kernel = Tensor::uniform({27 * c, c}, -0.25 / std::sqrt(27.0 * double(c)),
                                        0.25 / std::sqrt(27.0 * double(c)), rng);
        const int center = conv_tap_index(0, 0, 0);
        for (std::int64_t ch = 0; ch < c; ++ch)
            kernel.at2(std::int64_t(center) * c + ch, ch) += 1.0;
        lp.conv_kernel = ad::param(std::move(kernel), lname + ".conv_kernel");
        m.lift.push_back(std::move(lp));
    }

    for (int level = 1; level <= cfg.levels; ++level) {
        Mlp head = Mlp::create("head" + std::to_string(level),
                               {c, c, std::int64_t(cfg.classes) + 1}, rng);
        // Optimistic occupancy bias: early masks stay inclusive until the
        // head has learned which voxels to prune.
        head.biases.back().data().at(cfg.classes) = 1.5;
        m.heads.push_back(std::move(head));
    }

    SceneNormalizer norm;
    const SceneSpec spec = scene_spec_from_config(cfg);
    norm.center = {spec.origin.x + 0.5 * spec.grid.h * spec.voxel_size,
                   spec.origin.y + 0.5 * spec.grid.w * spec.voxel_size,
                   spec.origin.z + 0.5 * spec.grid.z * spec.voxel_size};
    const double half = 0.5 * std::max({spec.grid.h * spec.voxel_size,
                                        spec.grid.w * spec.voxel_size,
                                        spec.grid.z * spec.voxel_size});
    norm.inv_half = 1.0 / half;
    std::vector<std::int64_t> hidden(cfg.field_hidden.begin(), cfg.field_hidden.end());
    m.field = ImplicitField::create("field", enc, norm, c, hidden, rng);

    m.encoder.collect_params(m.params);
    m.params.push_back(m.level1_embedding);
    m.params.push_back(m.level1_pos_proj);
    m.params.push_back(m.hybrid_embedding);
    for (const auto& lp : m.lift) lp.collect_params(m.params);
    for (const auto& h : m.heads) h.collect_params(m.params);
    m.field.collect_params(m.params);
    return m;
}

void Model::save(const std::string& path) const { ad::save_checkpoint(path, params); }
void Model::load(const std::string& path) { ad::load_checkpoint(path, params); }

SceneBundle SceneBundle::build(const GroundTruthScene& scene, int levels,
                               bool build_visibility) {
    SceneBundle b;
    b.scene = scene;
    for (size_t cam = 0; cam < scene.rig.size(); ++cam) {
        b.images.push_back(render_image(scene, int(cam)));
        b.depth_maps.push_back(render_gt_depth(scene, int(cam)));
        std::vector<int> valid;
        const DepthMap& dm = b.depth_maps.back();
        for (int i = 0; i < dm.height * dm.width; ++i)
            if (dm.valid[size_t(i)]) valid.push_back(i);
        b.valid_pixels.push_back(std::move(valid));
    }
    for (int level = 1; level <= levels; ++level)
        b.level_gt.push_back(downsample_gt(scene, level, levels));
    if (build_visibility) b.visibility = gt_visibility(scene);
    return b;
}

namespace {

struct LevelState {
    GridDims dims;
    LevelGeometry geom;
    QueryProposalSet lifted;
    SemanticHeadOutput head;
    std::vector<double> occ_dense;    // occupancy head scores, dense
    std::vector<double> score_dense;  // max(head score, fused NeRF score)
    std::vector<std::uint8_t> hybrid_mask;
    std::vector<std::uint8_t> imp_mask;
};

std::vector<Vec3i> mask_to_indices(const std::vector<std::uint8_t>& mask,
                                   const GridDims& dims) {
    std::vector<Vec3i> out;
    for (int x = 0; x < dims.h; ++x)
        for (int y = 0; y < dims.w; ++y)
            for (int z = 0; z < dims.z; ++z)
                if (mask[size_t(dims.index({x, y, z}))]) out.push_back({x, y, z});
    return out;
}

// Deterministic cap: keep the top `max_count` voxels by score, index order
// breaking ties.
void cap_by_score(std::vector<Vec3i>& voxels, const std::vector<double>& score_dense,
                  const GridDims& dims, std::int64_t max_count) {
    if (std::int64_t(voxels.size()) <= max_count) return;
    std::vector<std::pair<double, std::int64_t>> keyed(voxels.size());
    for (size_t i = 0; i < voxels.size(); ++i)
        keyed[i] = {-score_dense[size_t(dims.index(voxels[i]))], std::int64_t(i)};
    std::sort(keyed.begin(), keyed.end());
    keyed.resize(size_t(max_count));
    std::sort(keyed.begin(), keyed.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    std::vector<Vec3i> kept;
    kept.reserve(size_t(max_count));
    for (const auto& [neg_score, idx] : keyed) kept.push_back(voxels[size_t(idx)]);
    voxels = std::move(kept);
}

std::vector<Vec3i> children_of(const std::vector<Vec3i>& parents) {
    std::vector<Vec3i> out;
    out.reserve(parents.size() * 8);
    for (const Vec3i& p : parents)
        for (int dx = 0; dx < 2; ++dx)
            for (int dy = 0; dy < 2; ++dy)
                for (int dz = 0; dz < 2; ++dz)
                    out.push_back({2 * p.x + dx, 2 * p.y + dy, 2 * p.z + dz});
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

ForwardResult forward_pipeline(const Model& model, const SceneBundle& bundle,
                               std::uint64_t step_seed, bool with_loss) {
    const ExperimentConfig& cfg = model.cfg;
    const int levels = cfg.levels;
    const int k_classes = cfg.classes;
    const std::int64_t c = cfg.channels;
    const GroundTruthScene& scene = bundle.scene;
    const CameraRig& rig = scene.rig;
    const double theta = cfg.theta;

    const FeaturePyramid pyramid = encode_images(bundle.images, model.encoder);

    std::vector<LevelState> states(static_cast<size_t>(levels));
    for (int level = 1; level <= levels; ++level) {
        LevelState& st = states[size_t(level - 1)];
        st.dims = level_dims(scene.grid, level, levels);
        st.geom.origin = scene.origin;
        st.geom.voxel_size = scene.voxel_size * double(1 << (levels - level));
    }

    std::vector<ExplicitLevelPrediction> preds(static_cast<size_t>(levels));
    std::vector<ImplicitLevelTerms> imp_terms(static_cast<size_t>(std::max(levels - 1, 0)));

    // Full-grid NeRF occupancy at the coarser levels (2..3). These masks are
    // independent of the transformer state and let the implicit branch
    // resurrect regions the coarse-to-fine funnel would otherwise prune for
    // good; their max-pooled parents join the coarser hybrid masks below.
    std::vector<std::vector<std::uint8_t>> imp_full(size_t(levels + 1));
    std::vector<std::vector<double>> imp_full_scores(size_t(levels + 1));
    if (cfg.use_nerf) {
        for (int level = 2; level <= std::min(levels, 3); ++level) {
            const LevelState& st = states[size_t(level - 1)];
            const std::int64_t count = st.dims.count();
            std::vector<Vec3> centers(static_cast<size_t>(count));
            for (std::int64_t i = 0; i < count; ++i)
                centers[size_t(i)] = st.geom.voxel_center(st.dims.coord(i));
            std::vector<std::vector<double>> per_cam(rig.size());
            for (size_t cam = 0; cam < rig.size(); ++cam) {
                per_cam[cam].assign(static_cast<size_t>(count), -1.0);
                std::vector<Vec3> vis_pts;
                std::vector<std::int64_t> vis_rows;
                for (std::int64_t i = 0; i < count; ++i) {
                    if (project_point(rig.cameras[cam], centers[size_t(i)]).valid) {
                        vis_pts.push_back(centers[size_t(i)]);
                        vis_rows.push_back(i);
                    }
                }
                const std::vector<double> sig = eval_field_sigma_plain(
                    model.field, vis_pts, pyramid.level(int(cam), level).data(),
                    rig.cameras[cam]);
                for (size_t j = 0; j < vis_rows.size(); ++j)
                    per_cam[cam][size_t(vis_rows[j])] = sig[j];
            }
            imp_full[size_t(level)] = fuse_multicam_occupancy(
                per_cam, st.geom.voxel_size, theta, &imp_full_scores[size_t(level)]);
        }
    }

    // ----- Level 1: dense learned queries -----
    {
        LevelState& st = states[0];
        QueryProposalSet q;
        q.level = 1;
        q.dims = st.dims;
        for (int x = 0; x < st.dims.h; ++x)
            for (int y = 0; y < st.dims.w; ++y)
                for (int z = 0; z < st.dims.z; ++z) q.indices.push_back({x, y, z});
        const std::int64_t n = q.size();
        const std::int64_t pdim = model.field.encoding.output_dim();
        Tensor pos({n, pdim});
        for (std::int64_t i = 0; i < n; ++i)
            positional_encoding(model.field.normalizer.apply(st.geom.voxel_center(q.indices[size_t(i)])),
                                model.field.encoding, pos.data() + i * pdim);
        const ad::Value emb =
            ad::gather_rows(model.level1_embedding, std::vector<std::int64_t>(size_t(n), 0));
        q.features = ad::add(
            emb, ad::matmul(ad::constant(std::move(pos), "level1_pos"), model.level1_pos_proj));

        st.lifted = cfg.use_attention
                        ? lift_level(q, pyramid, rig, 1, st.geom, model.lift[0])
                        : q;
        st.head = semantic_head(st.lifted, QueryProposalSet{1, st.dims, {}, {}},
                                model.heads[0], k_classes);
        st.occ_dense.assign(size_t(st.dims.count()), 0.0);
        for (size_t i = 0; i < st.head.indices.size(); ++i)
            st.occ_dense[size_t(st.dims.index(st.head.indices[i]))] =
                st.head.occupancy.data().at(std::int64_t(i));
        st.score_dense = st.occ_dense;
        st.hybrid_mask = threshold_occupancy(st.occ_dense, theta);
        if (!imp_full[2].empty()) {
            const GridDims child_dims = states[1].dims;
            for (std::int64_t i = 0; i < child_dims.count(); ++i) {
                if (!imp_full[2][size_t(i)]) continue;
                const Vec3i c = child_dims.coord(i);
                const std::int64_t p = st.dims.index({c.x / 2, c.y / 2, c.z / 2});
                st.hybrid_mask[size_t(p)] = 1;
                st.score_dense[size_t(p)] =
                    std::max(st.score_dense[size_t(p)], imp_full_scores[2][size_t(i)]);
            }
        }
        // Cold start: an empty mask would stall refinement, so the hybrid
        // mask itself falls back to the full level.
        if (std::count(st.hybrid_mask.begin(), st.hybrid_mask.end(), 1) == 0)
            st.hybrid_mask.assign(st.hybrid_mask.size(), 1);
        st.imp_mask.assign(size_t(st.dims.count()), 0);
        preds[0] = {&st.head.indices, st.head.logits, st.head.occupancy};
    }

    // ----- Levels 2..L -----
    for (int level = 2; level <= levels; ++level) {
        LevelState& st = states[size_t(level - 1)];
        LevelState& prev = states[size_t(level - 2)];
        const std::int64_t max_children = cfg.max_queries[size_t(level - 1)];
        const std::int64_t max_parents = std::max<std::int64_t>(1, max_children / 8);

        std::vector<Vec3i> parents = mask_to_indices(prev.hybrid_mask, prev.dims);
        cap_by_score(parents, prev.score_dense, prev.dims, max_parents);
        const std::vector<Vec3i> cand = children_of(parents);

        // Transformer mask: children of parents the head itself flagged.
        std::vector<std::uint8_t> exp_mask(static_cast<size_t>(st.dims.count()), 0);
        for (const Vec3i& v : cand) {
            const Vec3i p{v.x / 2, v.y / 2, v.z / 2};
            if (prev.occ_dense[size_t(prev.dims.index(p))] >= theta)
                exp_mask[size_t(st.dims.index(v))] = 1;
        }

        // NeRF mask. Levels 2..3 restrict the precomputed full-grid mask to
        // the candidate funnel; deeper levels evaluate candidates directly.
        st.imp_mask.assign(size_t(st.dims.count()), 0);
        std::vector<double> fused_scores;       // dense, for capping scores
        std::vector<std::uint8_t> imp_own_full; // the level's unrestricted mask
        if (cfg.use_nerf && !imp_full[size_t(level)].empty()) {
            imp_own_full = imp_full[size_t(level)];
            fused_scores = imp_full_scores[size_t(level)];
            for (const Vec3i& v : cand) {
                const std::int64_t idx = st.dims.index(v);
                st.imp_mask[size_t(idx)] = imp_own_full[size_t(idx)];
            }
        } else if (cfg.use_nerf) {
            std::vector<Vec3> centers(cand.size());
            for (size_t i = 0; i < cand.size(); ++i) centers[i] = st.geom.voxel_center(cand[i]);
            std::vector<std::vector<double>> per_cam(rig.size());
            for (size_t cam = 0; cam < rig.size(); ++cam) {
                per_cam[cam].assign(cand.size(), -1.0);
                std::vector<Vec3> vis_pts;
                std::vector<size_t> vis_rows;
                for (size_t i = 0; i < cand.size(); ++i) {
                    if (project_point(rig.cameras[cam], centers[i]).valid) {
                        vis_pts.push_back(centers[i]);
                        vis_rows.push_back(i);
                    }
                }
                const std::vector<double> sig = eval_field_sigma_plain(
                    model.field, vis_pts, pyramid.level(int(cam), level).data(),
                    rig.cameras[cam]);
                for (size_t j = 0; j < vis_rows.size(); ++j) per_cam[cam][vis_rows[j]] = sig[j];
            }
            std::vector<double> scores;
            const std::vector<std::uint8_t> cand_mask =
                fuse_multicam_occupancy(per_cam, st.geom.voxel_size, theta, &scores);
            fused_scores.assign(size_t(st.dims.count()), 0.0);
            for (size_t i = 0; i < cand.size(); ++i) {
                const std::int64_t idx = st.dims.index(cand[size_t(i)]);
                st.imp_mask[size_t(idx)] = cand_mask[i];
                fused_scores[size_t(idx)] = scores[i];
            }
            imp_own_full = st.imp_mask;
        }

        // Hybrid query proposals for this level.
        QueryProposalSet q =
            hybrid_queries(st.imp_mask, exp_mask, st.dims, level, &prev.lifted,
                           model.hybrid_embedding);
        if (q.size() == 0) {
            std::vector<std::uint8_t> all_cand(static_cast<size_t>(st.dims.count()), 0);
            for (const Vec3i& v : cand) all_cand[size_t(st.dims.index(v))] = 1;
            q = hybrid_queries(st.imp_mask, all_cand, st.dims, level, &prev.lifted,
                               model.hybrid_embedding);
        }

        // NeRF supervision at this level.
        if (cfg.use_nerf && with_loss) {
            ImplicitLevelTerms& terms = imp_terms[size_t(level - 2)];
            OccupancyGuide guide{prev.dims, scene.origin, prev.geom.voxel_size,
                                 &prev.hybrid_mask};

            // Depth rays, per camera on this level's features.
            std::vector<ad::Value> cam_depths;
            std::vector<double> cam_gts;
            std::int64_t total_rays = 0;
            std::vector<std::pair<ad::Value, std::vector<std::int64_t>>> depth_scatter;
            for (size_t cam = 0; cam < rig.size(); ++cam) {
                const auto& valid = bundle.valid_pixels[cam];
                if (valid.empty() || cfg.rays_per_camera == 0) continue;
                Rng rng = sub_rng(step_seed, 11, std::uint64_t(level), std::uint64_t(cam));
                const Camera& camera = rig.cameras[cam];
                const int n_rays = cfg.rays_per_camera;
                std::vector<Vec3> points;
                std::vector<double> deltas_flat, d_gt;
                points.reserve(size_t(n_rays * cfg.ray_samples));
                for (int r = 0; r < n_rays; ++r) {
                    const int pix = valid[size_t(rng.uniform_index(valid.size()))];
                    const int py = pix / camera.width, px = pix % camera.width;
                    Ray ray = generate_ray(camera, {double(px), double(py)});
                    // Sample only the segment inside the scene volume.
                    clip_ray_to_volume(ray, scene.origin, scene.grid, scene.voxel_size);
                    RaySamples samples;
                    if (model.sampling == SamplingStrategy::kOccupancyAware) {
                        samples = sample_occupancy_aware(ray, guide, cfg.coarse_samples,
                                                         cfg.ray_samples, rng);
                    } else {
                        const RaySamples coarse = sample_uniform(ray, cfg.ray_samples, rng);
                        std::vector<Vec3> cpts(coarse.ts.size());
                        for (size_t i = 0; i < coarse.ts.size(); ++i) cpts[i] = coarse.point(int(i));
                        const std::vector<double> csig = eval_field_sigma_plain(
                            model.field, cpts, pyramid.level(int(cam), level).data(), camera);
                        const std::vector<double> cw = render_weights(csig, coarse.deltas);
                        samples = model.sampling == SamplingStrategy::kHierarchical
                                      ? sample_hierarchical(ray, coarse, cw, cfg.ray_samples, rng)
                                      : sample_probabilistic(ray, coarse, cw, cfg.ray_samples, rng);
                    }
                    for (int i = 0; i < samples.count(); ++i) {
                        points.push_back(samples.point(i));
                        deltas_flat.push_back(samples.deltas[size_t(i)]);
                    }
                    d_gt.push_back(bundle.depth_maps[cam].depth[size_t(pix)]);
                }
                const FieldEval fe =
                    eval_field(model.field, points, pyramid.level(int(cam), level), camera,
                               camera.near, camera.far * 2.0);
                const std::int64_t rr = n_rays, nn = cfg.ray_samples;
                const RenderedRays rendered = render_depth_batch(
                    ad::reshape(fe.sigma, {rr, nn}), ad::reshape(fe.depth, {rr, nn}),
                    ad::constant(Tensor({rr, nn}, std::move(deltas_flat)), "deltas"));
                // Residual transmittance is assigned to the far plane so the
                // supervised depth stays strictly positive.
                Tensor fars({rr, 1});
                for (std::int64_t r = 0; r < rr; ++r) fars.at(r) = camera.far;
                const ad::Value d_sup =
                    ad::add(rendered.depth,
                            ad::mul(ad::affine(rendered.weight_sum, -1.0, 1.0),
                                    ad::constant(std::move(fars), "far")));
                std::vector<std::int64_t> rows(static_cast<size_t>(rr));
                for (std::int64_t r = 0; r < rr; ++r) rows[size_t(r)] = total_rays + r;
                depth_scatter.emplace_back(d_sup, std::move(rows));
                cam_gts.insert(cam_gts.end(), d_gt.begin(), d_gt.end());
                total_rays += rr;
            }
            if (total_rays > 0) {
                ad::Value all_depth;
                for (auto& [v, rows] : depth_scatter) {
                    const ad::Value placed = ad::scatter_rows(v, std::move(rows), total_rays);
                    all_depth = all_depth.defined() ? ad::add(all_depth, placed) : placed;
                }
                terms.depth_pred = all_depth;
                terms.depth_gt = std::move(cam_gts);
            }

            // Class-agnostic occupancy BCE at sampled voxel centers.
            if (cfg.bce_voxels > 0) {
                Rng rng = sub_rng(step_seed, 23, std::uint64_t(level), 0);
                const LevelGroundTruth& lgt = bundle.level_gt[size_t(level - 1)];
                std::vector<std::int64_t> occupied_idx, free_idx;
                for (std::int64_t i = 0; i < lgt.dims.count(); ++i)
                    (lgt.occupancy[size_t(i)] ? occupied_idx : free_idx).push_back(i);
                std::vector<std::vector<Vec3>> cam_pts(rig.size());
                std::vector<std::vector<double>> cam_targets(rig.size());
                for (int s = 0; s < cfg.bce_voxels; ++s) {
                    const bool want_occ = (s % 2 == 0) && !occupied_idx.empty();
                    const auto& pool = want_occ ? occupied_idx : free_idx;
                    if (pool.empty()) continue;
                    const std::int64_t idx =
                        pool[size_t(rng.uniform_index(pool.size()))];
                    const Vec3 center = st.geom.voxel_center(st.dims.coord(idx));
                    std::vector<size_t> seeing;
                    for (size_t cam = 0; cam < rig.size(); ++cam)
                        if (project_point(rig.cameras[cam], center).valid) seeing.push_back(cam);
                    if (seeing.empty()) continue;
                    const size_t cam = seeing[size_t(rng.uniform_index(seeing.size()))];
                    cam_pts[cam].push_back(center);
                    cam_targets[cam].push_back(lgt.occupancy[size_t(idx)] ? 1.0 : 0.0);
                }
                ad::Value opacity;
                std::vector<double> targets;
                std::int64_t total = 0;
                for (size_t cam = 0; cam < rig.size(); ++cam)
                    total += std::int64_t(cam_pts[cam].size());
                std::int64_t row0 = 0;
                for (size_t cam = 0; cam < rig.size(); ++cam) {
                    if (cam_pts[cam].empty()) continue;
                    const FieldEval fe = eval_field(model.field, cam_pts[cam],
                                                    pyramid.level(int(cam), level),
                                                    rig.cameras[cam], rig.cameras[cam].near,
                                                    rig.cameras[cam].far * 2.0);
                    const ad::Value op = ad::affine(
                        ad::exp_v(ad::scale(fe.sigma, -st.geom.voxel_size)), -1.0, 1.0);
                    std::vector<std::int64_t> rows(cam_pts[cam].size());
                    for (size_t i = 0; i < rows.size(); ++i) rows[i] = row0 + std::int64_t(i);
                    row0 += std::int64_t(rows.size());
                    const ad::Value placed = ad::scatter_rows(op, std::move(rows), total);
                    opacity = opacity.defined() ? ad::add(opacity, placed) : placed;
                    targets.insert(targets.end(), cam_targets[cam].begin(),
                                   cam_targets[cam].end());
                }
                if (opacity.defined()) {
                    terms.occ_opacity = opacity;
                    terms.occ_gt = std::move(targets);
                }
            }
        }

        // Lift, skip-connect, head.
        st.lifted = cfg.use_attention
                        ? lift_level(q, pyramid, rig, level, st.geom,
                                     model.lift[size_t(level - 1)])
                        : q;
        QueryProposalSet up_q;
        up_q.level = level;
        up_q.dims = st.dims;
        {
            std::vector<std::int64_t> parent_rows;
            for (const Vec3i& v : st.lifted.indices) {
                const std::int64_t prow = prev.lifted.find({v.x / 2, v.y / 2, v.z / 2});
                if (prow < 0) continue;
                up_q.indices.push_back(v);
                parent_rows.push_back(prow);
            }
            if (!up_q.indices.empty())
                up_q.features = ad::gather_rows(prev.lifted.features, std::move(parent_rows));
        }
        st.head = semantic_head(st.lifted, up_q, model.heads[size_t(level - 1)], k_classes);

        st.occ_dense.assign(size_t(st.dims.count()), 0.0);
        for (size_t i = 0; i < st.head.indices.size(); ++i)
            st.occ_dense[size_t(st.dims.index(st.head.indices[i]))] =
                st.head.occupancy.data().at(std::int64_t(i));
        st.score_dense = st.occ_dense;
        if (!fused_scores.empty())
            for (std::int64_t i = 0; i < st.dims.count(); ++i)
                st.score_dense[size_t(i)] =
                    std::max(st.score_dense[size_t(i)], fused_scores[size_t(i)]);
        st.hybrid_mask = threshold_occupancy(st.occ_dense, theta);
        if (!imp_own_full.empty())
            for (std::int64_t i = 0; i < st.dims.count(); ++i)
                if (imp_own_full[size_t(i)]) st.hybrid_mask[size_t(i)] = 1;
        if (level + 1 <= levels && !imp_full[size_t(level + 1)].empty()) {
            const GridDims child_dims = states[size_t(level)].dims;
            for (std::int64_t i = 0; i < child_dims.count(); ++i) {
                if (!imp_full[size_t(level + 1)][size_t(i)]) continue;
                const Vec3i c = child_dims.coord(i);
                const std::int64_t p = st.dims.index({c.x / 2, c.y / 2, c.z / 2});
                st.hybrid_mask[size_t(p)] = 1;
                st.score_dense[size_t(p)] = std::max(
                    st.score_dense[size_t(p)], imp_full_scores[size_t(level + 1)][size_t(i)]);
            }
        }
        if (std::count(st.hybrid_mask.begin(), st.hybrid_mask.end(), 1) == 0)
            for (const Vec3i& v : st.lifted.indices)
                st.hybrid_mask[size_t(st.dims.index(v))] = 1;
        preds[size_t(level - 1)] = {&st.head.indices, st.head.logits, st.head.occupancy};
    }

    ForwardResult out;
    for (const LevelState& st : states) {
        out.level_active.push_back(st.lifted.indices);
        out.level_hybrid_mask.push_back(st.hybrid_mask);
    }
    const LevelState& top = states[size_t(levels - 1)];
    out.final_indices = top.head.indices;
    out.final_classes.resize(top.head.indices.size());
    out.final_occupancy.resize(top.head.indices.size());
    for (size_t i = 0; i < top.head.indices.size(); ++i) {
        const Tensor& logits = top.head.logits.data();
        int best = 0;
        for (int cls = 1; cls < k_classes; ++cls)
            if (logits.at2(std::int64_t(i), cls) > logits.at2(std::int64_t(i), best)) best = cls;
        out.final_classes[i] = best;
        out.final_occupancy[i] = top.head.occupancy.data().at(std::int64_t(i));
    }

    if (with_loss) {
        out.explicit_loss = loss_explicit(preds, bundle.level_gt, model.loss_cfg,
                                          &out.level_explicit);
        out.implicit_loss =
            loss_implicit(imp_terms, model.loss_cfg, levels, &out.level_implicit);
        out.total_loss = ad::add(out.explicit_loss,
                                 ad::scale(out.implicit_loss, model.loss_cfg.beta));
    }
    return out;
}

DensePrediction densify_prediction(const ForwardResult& fr, const GridDims& finest) {
    DensePrediction dp;
    dp.classes.assign(size_t(finest.count()), 0);
    dp.occupied.assign(size_t(finest.count()), 0);
    dp.occupancy_scores.assign(size_t(finest.count()), 0.0f);
    for (size_t i = 0; i < fr.final_indices.size(); ++i) {
        const std::int64_t idx = finest.index(fr.final_indices[i]);
        dp.classes[size_t(idx)] = std::uint8_t(fr.final_classes[i]);
        dp.occupied[size_t(idx)] = fr.final_classes[i] != 0;
        dp.occupancy_scores[size_t(idx)] = float(fr.final_occupancy[i]);
    }
    return dp;
}

} // namespace voxocc
