// SPDX-License-Identifier: Apache-2.0
#include "voxocc/voxels.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

#include "voxocc/kernels.hpp"

namespace voxocc {

void QueryProposalSet::validate() const {
    for (size_t i = 0; i < indices.size(); ++i) {
        if (!dims.contains(indices[i]))
            throw std::invalid_argument("query set: index outside volume dims");
        if (i > 0 && !(indices[i - 1] < indices[i]))
            throw std::invalid_argument("query set: indices not strictly sorted");
    }
    if (features.defined() && features.rows() != size())
        throw std::invalid_argument("query set: feature row count mismatch");
}

std::int64_t QueryProposalSet::find(const Vec3i& v) const {
    const auto it = std::lower_bound(indices.begin(), indices.end(), v);
    if (it == indices.end() || !(*it == v)) return -1;
    return std::int64_t(it - indices.begin());
}

void VoxelVolume::validate() const {
    if (std::int64_t(occupancy.size()) != dims.count())
        throw std::invalid_argument("voxel volume: occupancy size mismatch");
    for (double o : occupancy)
        if (o < 0.0 || o > 1.0)
            throw std::invalid_argument("voxel volume: occupancy outside [0,1]");
    active.validate();
}

std::vector<std::uint8_t> threshold_occupancy(const std::vector<double>& occupancy,
                                              double theta) {
    if (!(theta > 0.0 && theta < 1.0))
        throw std::invalid_argument("threshold_occupancy: theta must be in (0,1)");
    std::vector<std::uint8_t> mask(occupancy.size(), 0);
    for (size_t i = 0; i < occupancy.size(); ++i) mask[i] = occupancy[i] >= theta ? 1 : 0;
    return mask;
}

std::vector<std::uint8_t> threshold_occupancy(const VoxelVolume& volume, double theta) {
    return threshold_occupancy(volume.occupancy, theta);
}

QueryProposalSet upsample2x(const QueryProposalSet& q, int max_level) {
    if (q.level >= max_level)
        throw std::invalid_argument("upsample2x: already at the finest level");
    QueryProposalSet out;
    out.level = q.level + 1;
    out.dims = {q.dims.h * 2, q.dims.w * 2, q.dims.z * 2};
    std::vector<std::pair<Vec3i, std::int64_t>> children;
    children.reserve(q.indices.size() * 8);
    for (size_t p = 0; p < q.indices.size(); ++p) {
        const Vec3i& v = q.indices[p];
        for (int dx = 0; dx < 2; ++dx)
            for (int dy = 0; dy < 2; ++dy)
                for (int dz = 0; dz < 2; ++dz)
                    children.emplace_back(Vec3i{2 * v.x + dx, 2 * v.y + dy, 2 * v.z + dz},
                                          std::int64_t(p));
    }
    std::sort(children.begin(), children.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    out.indices.reserve(children.size());
    std::vector<std::int64_t> parent_rows;
    parent_rows.reserve(children.size());
    for (const auto& [child, parent] : children) {
        out.indices.push_back(child);
        parent_rows.push_back(parent);
    }
    if (q.features.defined() && !children.empty())
        out.features = ad::gather_rows(q.features, std::move(parent_rows));
    else if (q.features.defined())
        out.features = ad::constant(Tensor({0, q.features.cols()}), "empty_upsample");
    return out;
}

namespace {

// Positions of each operand's rows inside the sorted union support.
std::vector<Vec3i> union_support(const std::vector<Vec3i>& a, const std::vector<Vec3i>& b,
                                 std::vector<std::int64_t>& rows_a,
                                 std::vector<std::int64_t>& rows_b) {
    std::vector<Vec3i> u;
    u.reserve(a.size() + b.size());
    std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(u));
    u.erase(std::unique(u.begin(), u.end()), u.end());
    auto locate = [&u](const std::vector<Vec3i>& src, std::vector<std::int64_t>& rows) {
        rows.reserve(src.size());
        for (const Vec3i& v : src)
            rows.push_back(std::lower_bound(u.begin(), u.end(), v) - u.begin());
    };
    locate(a, rows_a);
    locate(b, rows_b);
    return u;
}

} // namespace

SemanticHeadOutput semantic_head(const QueryProposalSet& q, const QueryProposalSet& up_q,
                                 const Mlp& head, int class_count) {
    if (up_q.size() > 0 && up_q.level != q.level)
        throw std::invalid_argument("semantic_head: operand levels differ");
    SemanticHeadOutput out;
    ad::Value input;
    if (up_q.size() == 0) {
        out.indices = q.indices;
        input = q.features;
    } else if (q.size() == 0) {
        out.indices = up_q.indices;
        input = up_q.features;
    } else {
        std::vector<std::int64_t> rows_q, rows_up;
        out.indices = union_support(q.indices, up_q.indices, rows_q, rows_up);
        const std::int64_t n = std::int64_t(out.indices.size());
        input = ad::add(ad::scatter_rows(q.features, std::move(rows_q), n),
                        ad::scatter_rows(up_q.features, std::move(rows_up), n));
    }
    const ad::Value raw = head.forward(input);
    if (raw.cols() != class_count + 1)
        throw std::invalid_argument("semantic_head: head must output K+1 columns");
    out.logits = ad::slice_cols(raw, 0, class_count);
    out.occupancy = ad::sigmoid(ad::slice_cols(raw, class_count, class_count + 1));
    return out;
}

QueryProposalSet sparse_conv3d(const QueryProposalSet& q, const ad::Value& kernel) {
    const std::int64_t n = q.size();
    const std::int64_t c = q.features.cols();
    if (kernel.rows() != 27 * c || kernel.cols() != c)
        throw std::invalid_argument("sparse_conv3d: kernel must be [27*C, C]");
    QueryProposalSet out = q;
    if (n == 0) return out;

    // Neighbor row of (active voxel i, tap o), or -1; fixed for this call.
    auto nbrs = std::make_shared<std::vector<std::int64_t>>(size_t(n * 27), -1);
    for (std::int64_t i = 0; i < n; ++i) {
        const Vec3i v = q.indices[size_t(i)];
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    const Vec3i nb{v.x + dx, v.y + dy, v.z + dz};
                    if (!q.dims.contains(nb)) continue;
                    (*nbrs)[size_t(i * 27 + conv_tap_index(dx, dy, dz))] = q.find(nb);
                }
    }

    // Per-tap pair lists so each tap runs as one batched gemm.
    auto taps = std::make_shared<std::array<std::vector<std::int64_t>, 27>>();
    for (int o = 0; o < 27; ++o) {
        auto& pairs = (*taps)[size_t(o)];
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t j = (*nbrs)[size_t(i * 27 + o)];
            if (j < 0) continue;
            pairs.push_back(i);
            pairs.push_back(j);
        }
    }

    auto tap_gemm = [n, c](const std::vector<std::int64_t>& pairs, const double* src,
                           const double* ko, double* dst, bool transpose_kernel) {
        const std::int64_t np = std::int64_t(pairs.size()) / 2;
        if (np == 0) return;
        Tensor gathered({np, c}), mixed({np, c});
        for (std::int64_t p = 0; p < np; ++p)
            std::copy_n(src + pairs[size_t(2 * p + 1)] * c, c, gathered.data() + p * c);
        if (transpose_kernel)
            kernels::gemm_nt(gathered.data(), ko, mixed.data(), np, c, c);
        else
            kernels::gemm(gathered.data(), ko, mixed.data(), np, c, c, false);
        for (std::int64_t p = 0; p < np; ++p) {
            const double* m = mixed.data() + p * c;
            double* d = dst + pairs[size_t(2 * p)] * c;
            for (std::int64_t cc = 0; cc < c; ++cc) d[cc] += m[cc];
        }
    };

    Tensor result({n, c});
    for (int o = 0; o < 27; ++o)
        tap_gemm((*taps)[size_t(o)], q.features.data().data(),
                 kernel.data().data() + std::int64_t(o) * c * c, result.data(), false);

    out.features = ad::make_node(
        std::move(result), {q.features, kernel},
        [taps, tap_gemm, n, c](ad::Node& nd) {
            const Tensor& g = nd.grad;
            const Tensor& feat = nd.parents[0].data();
            const Tensor& ker = nd.parents[1].data();
            if (nd.parents[0].requires_grad()) {
                // in[j] feeds out[i] through tap o, so dIn gets dOut * Ko^T
                // over the transposed pair lists.
                Tensor& gf = nd.parents[0].grad();
                for (int o = 0; o < 27; ++o) {
                    const auto& pairs = (*taps)[size_t(o)];
                    const std::int64_t np = std::int64_t(pairs.size()) / 2;
                    if (np == 0) continue;
                    std::vector<std::int64_t> swapped(pairs.size());
                    for (std::int64_t p = 0; p < np; ++p) {
                        swapped[size_t(2 * p)] = pairs[size_t(2 * p + 1)];
                        swapped[size_t(2 * p + 1)] = pairs[size_t(2 * p)];
                    }
                    tap_gemm(swapped, g.data(),
                             ker.data() + std::int64_t(o) * c * c, gf.data(), true);
                }
            }
            if (nd.parents[1].requires_grad()) {
                Tensor& gk = nd.parents[1].grad();
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled())
                for (int o = 0; o < 27; ++o) {
                    const auto& pairs = (*taps)[size_t(o)];
                    const std::int64_t np = std::int64_t(pairs.size()) / 2;
                    if (np == 0) continue;
                    Tensor gin({np, c}), gout({np, c});
                    for (std::int64_t p = 0; p < np; ++p) {
                        std::copy_n(feat.data() + pairs[size_t(2 * p + 1)] * c, c,
                                    gin.data() + p * c);
                        std::copy_n(g.data() + pairs[size_t(2 * p)] * c, c,
                                    gout.data() + p * c);
                    }
                    kernels::gemm_tn(gin.data(), gout.data(),
                                     gk.data() + std::int64_t(o) * c * c, np, c, c);
                }
            }
        },
        "sparse_conv3d");
    return out;
}

GridDims level_dims(const GridDims& finest, int level, int levels) {
    const int shift = levels - level;
    const int f = 1 << shift;
    if (finest.h % f || finest.w % f || finest.z % f)
        throw std::invalid_argument("level_dims: finest grid not divisible by 2^(L-l)");
    return {finest.h / f, finest.w / f, finest.z / f};
}

LevelGroundTruth downsample_gt(const GroundTruthScene& scene, int level, int levels) {
    if (level < 1 || level > levels)
        throw std::invalid_argument("downsample_gt: level out of range");
    LevelGroundTruth gt;
    gt.dims = level_dims(scene.grid, level, levels);
    gt.occupancy.assign(size_t(gt.dims.count()), 0);
    gt.classes.assign(size_t(gt.dims.count()), 0);
    const int f = 1 << (levels - level);
    for (int z = 0; z < gt.dims.z; ++z) {
        for (int y = 0; y < gt.dims.w; ++y) {
            for (int x = 0; x < gt.dims.h; ++x) {
                int counts[256] = {0};
                bool any = false;
                for (int dz = 0; dz < f; ++dz)
                    for (int dy = 0; dy < f; ++dy)
                        for (int dx = 0; dx < f; ++dx) {
                            const std::uint8_t c = scene.semantics[size_t(
                                scene.grid.index({x * f + dx, y * f + dy, z * f + dz}))];
                            if (c != 0) {
                                ++counts[c];
                                any = true;
                            }
                        }
                const std::int64_t idx = gt.dims.index({x, y, z});
                if (!any) continue;
                gt.occupancy[size_t(idx)] = 1;
                int best = 0, best_count = 0;
                for (int c = 1; c < 256; ++c) {
                    if (counts[c] > best_count) { // ties resolve to smallest id
                        best = c;
                        best_count = counts[c];
                    }
                }
                gt.classes[size_t(idx)] = std::uint8_t(best);
            }
        }
    }
    return gt;
}

} // namespace voxocc
