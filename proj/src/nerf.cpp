// SPDX-License-Identifier: Apache-2.0
#include "voxocc/nerf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "voxocc/kernels.hpp"

namespace voxocc {

ImplicitField ImplicitField::create(const std::string& name,
                                    const PositionalEncodingConfig& enc,
                                    const SceneNormalizer& norm, std::int64_t feature_dim,
                                    const std::vector<std::int64_t>& hidden, Rng& rng) {
    ImplicitField f;
    f.encoding = enc;
    f.normalizer = norm;
    std::vector<std::int64_t> widths;
    widths.push_back(enc.output_dim() + feature_dim);
    for (std::int64_t hdim : hidden) widths.push_back(hdim);
    widths.push_back(2); // sigma head, depth head
    f.mlp = Mlp::create(name, widths, rng);
    return f;
}

namespace {
void finalize_samples(RaySamples& s) {
    std::sort(s.ts.begin(), s.ts.end());
    for (size_t i = 1; i < s.ts.size(); ++i)
        s.ts[i] = std::max(s.ts[i], s.ts[i - 1] + 1e-9);
    s.deltas.resize(s.ts.size());
    double prev = s.ray.near;
    for (size_t i = 0; i < s.ts.size(); ++i) {
        s.deltas[i] = std::max(s.ts[i] - prev, 1e-12);
        prev = s.ts[i];
    }
}
} // namespace

bool clip_ray_to_volume(Ray& ray, const Vec3& origin, const GridDims& dims,
                        double voxel_size) {
    const double lo[3] = {origin.x, origin.y, origin.z};
    const double hi[3] = {origin.x + dims.h * voxel_size, origin.y + dims.w * voxel_size,
                          origin.z + dims.z * voxel_size};
    const double o[3] = {ray.origin.x, ray.origin.y, ray.origin.z};
    const double d[3] = {ray.direction.x, ray.direction.y, ray.direction.z};
    double t0 = ray.near, t1 = ray.far;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (o[a] < lo[a] || o[a] >= hi[a]) return false;
            continue;
        }
        double ta = (lo[a] - o[a]) / d[a];
        double tb = (hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (t0 >= t1) return false;
    ray.near = t0;
    ray.far = t1;
    return true;
}

RaySamples sample_uniform(const Ray& ray, int m, Rng& rng) {
    if (m < 1) throw std::invalid_argument("sample_uniform: m must be >= 1");
    RaySamples s;
    s.ray = ray;
    s.ts.reserve(size_t(m));
    const double span = (ray.far - ray.near) / double(m);
    for (int k = 0; k < m; ++k) s.ts.push_back(ray.near + (k + rng.uniform()) * span);
    finalize_samples(s);
    return s;
}

namespace {

RaySamples inverse_cdf_sample(const Ray& ray, const RaySamples& coarse,
                              const std::vector<double>& weights, int n, Rng& rng) {
    const size_t m = coarse.ts.size();
    // Bin edges at the coarse midpoints, closed by near/far.
    std::vector<double> edges(m + 1);
    edges[0] = ray.near;
    for (size_t i = 1; i < m; ++i) edges[i] = 0.5 * (coarse.ts[i - 1] + coarse.ts[i]);
    edges[m] = ray.far;
    std::vector<double> cdf(m + 1, 0.0);
    for (size_t i = 0; i < m; ++i) cdf[i + 1] = cdf[i] + std::max(weights[i], 0.0);
    const double total = cdf[m];

    RaySamples s;
    s.ray = ray;
    if (total <= 1e-12) return sample_uniform(ray, n, rng); // documented fallback
    s.ts.reserve(size_t(n));
    for (int k = 0; k < n; ++k) {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        size_t bin = size_t(std::max<std::ptrdiff_t>(it - cdf.begin() - 1, 0));
        bin = std::min(bin, m - 1);
        const double mass = cdf[bin + 1] - cdf[bin];
        const double frac = mass > 0.0 ? (u - cdf[bin]) / mass : 0.5;
        s.ts.push_back(edges[bin] + frac * (edges[bin + 1] - edges[bin]));
    }
    finalize_samples(s);
    return s;
}

} // namespace

RaySamples sample_hierarchical(const Ray& ray, const RaySamples& coarse,
                               const std::vector<double>& coarse_weights, int n, Rng& rng) {
    if (coarse.ts.size() != coarse_weights.size())
        throw std::invalid_argument("sample_hierarchical: weight count mismatch");
    for (double w : coarse_weights)
        if (!std::isfinite(w))
            throw std::invalid_argument("sample_hierarchical: non-finite coarse weight");
    return inverse_cdf_sample(ray, coarse, coarse_weights, n, rng);
}

RaySamples sample_probabilistic(const Ray& ray, const RaySamples& coarse,
                                const std::vector<double>& coarse_weights, int n, Rng& rng) {
    const int m = int(coarse_weights.size());
    std::vector<double> smoothed(size_t(m), 0.0);
    // Gaussian kernel, sigma = one stratum, truncated at 3 sigma.
    for (int i = 0; i < m; ++i) {
        double acc = 0.0, norm = 0.0;
        for (int j = std::max(0, i - 3); j <= std::min(m - 1, i + 3); ++j) {
            const double k = std::exp(-0.5 * double(i - j) * double(i - j));
            acc += k * std::max(coarse_weights[size_t(j)], 0.0);
            norm += k;
        }
        smoothed[size_t(i)] = acc / norm;
    }
    return inverse_cdf_sample(ray, coarse, smoothed, n, rng);
}

RaySamples sample_occupancy_aware(const Ray& ray, const OccupancyGuide& guide,
                                  int m_candidates, int n, Rng& rng) {
    if (m_candidates < n)
        throw std::invalid_argument("sample_occupancy_aware: need m_candidates >= n");
    // Pure uniform fallback when the ray never enters the guide volume.
    const Vec3 lo = guide.origin;
    const Vec3 hi{guide.origin.x + guide.dims.h * guide.voxel_size,
                  guide.origin.y + guide.dims.w * guide.voxel_size,
                  guide.origin.z + guide.dims.z * guide.voxel_size};
    double t0 = ray.near, t1 = ray.far;
    const double o[3] = {ray.origin.x, ray.origin.y, ray.origin.z};
    const double d[3] = {ray.direction.x, ray.direction.y, ray.direction.z};
    const double l[3] = {lo.x, lo.y, lo.z};
    const double h[3] = {hi.x, hi.y, hi.z};
    bool misses = false;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (o[a] < l[a] || o[a] >= h[a]) misses = true;
            continue;
        }
        double ta = (l[a] - o[a]) / d[a];
        double tb = (h[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (misses || t0 > t1) return sample_uniform(ray, n, rng);

    const RaySamples candidates = sample_uniform(ray, m_candidates, rng);
    std::vector<double> occupied_ts, free_ts;
    for (double t : candidates.ts)
        (guide.occupied_at(ray.at(t)) ? occupied_ts : free_ts).push_back(t);

    auto take_random = [&rng](std::vector<double>& pool, int count, std::vector<double>& out) {
        for (int k = 0; k < count; ++k) {
            const size_t pick = size_t(rng.uniform_index(pool.size()));
            out.push_back(pool[pick]);
            pool[pick] = pool.back();
            pool.pop_back();
        }
    };

    RaySamples s;
    s.ray = ray;
    s.ts.reserve(size_t(n));
    if (int(occupied_ts.size()) > n) {
        take_random(occupied_ts, n, s.ts);
    } else {
        s.ts = occupied_ts;
        take_random(free_ts, n - int(occupied_ts.size()), s.ts);
    }
    finalize_samples(s);
    return s;
}

std::vector<double> render_weights(const std::vector<double>& sigmas,
                                   const std::vector<double>& deltas) {
    if (sigmas.size() != deltas.size())
        throw std::invalid_argument("render_weights: size mismatch");
    std::vector<double> w(sigmas.size());
    double acc = 0.0; // sum of sigma*delta before the current sample
    for (size_t i = 0; i < sigmas.size(); ++i) {
        const double sd = sigmas[i] * deltas[i];
        const double transmittance = std::exp(-acc);
        w[i] = transmittance * (1.0 - std::exp(-sd));
        acc += sd;
    }
    return w;
}

double render_depth_value(const std::vector<double>& weights, const std::vector<double>& ds) {
    double depth = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) depth += weights[i] * ds[i];
    return depth;
}

RenderedRays render_depth_batch(const ad::Value& sigma, const ad::Value& d,
                                const ad::Value& deltas) {
    const ad::Value sd = ad::mul(sigma, deltas);
    const ad::Value alpha = ad::affine(ad::exp_v(ad::neg(sd)), -1.0, 1.0);
    const ad::Value transmittance = ad::exp_v(ad::neg(ad::cumsum_exclusive_rows(sd)));
    RenderedRays out;
    out.weights = ad::mul(transmittance, alpha);
    out.depth = ad::sum_rows(ad::mul(out.weights, d));
    out.weight_sum = ad::sum_rows(out.weights);
    return out;
}

Vec2 image_to_feature_pixel(const Vec2& image_px, int image_h, int image_w, int feat_h,
                            int feat_w) {
    const double sx = double(feat_w) / double(image_w);
    const double sy = double(feat_h) / double(image_h);
    return {(image_px.x + 0.5) * sx - 0.5, (image_px.y + 0.5) * sy - 0.5};
}

namespace {

// Clamped projection pixel in feature-map coordinates.
void projection_pixels(const std::vector<Vec3>& points, const Camera& cam, int feat_h,
                       int feat_w, Tensor& pixels) {
    for (size_t i = 0; i < points.size(); ++i) {
        const Vec3 xc = cam.rotation.apply(points[i]) + cam.translation;
        const double z = std::max(xc.z, 1e-6);
        Vec2 px{cam.fx * xc.x / z + cam.cx, cam.fy * xc.y / z + cam.cy};
        px.x = std::clamp(px.x, 0.0, double(cam.width - 1));
        px.y = std::clamp(px.y, 0.0, double(cam.height - 1));
        const Vec2 fp = image_to_feature_pixel(px, cam.height, cam.width, feat_h, feat_w);
        pixels.at(std::int64_t(2 * i)) = fp.x;
        pixels.at(std::int64_t(2 * i + 1)) = fp.y;
    }
}

Tensor encode_points(const ImplicitField& field, const std::vector<Vec3>& points) {
    const std::int64_t pdim = field.encoding.output_dim();
    Tensor enc({std::int64_t(points.size()), pdim});
    for (size_t i = 0; i < points.size(); ++i)
        positional_encoding(field.normalizer.apply(points[i]), field.encoding,
                            enc.data() + std::int64_t(i) * pdim);
    return enc;
}

} // namespace

FieldEval eval_field(const ImplicitField& field, const std::vector<Vec3>& points,
                     const ad::Value& fmap, const Camera& cam, double near, double far) {
    const std::int64_t n = std::int64_t(points.size());
    const std::int64_t feat_h = fmap.data().dim(0);
    const std::int64_t feat_w = fmap.data().dim(1);
    Tensor pixels({n, 2});
    projection_pixels(points, cam, int(feat_h), int(feat_w), pixels);
    const ad::Value px = ad::constant(std::move(pixels), "field_pixels");
    const ad::Value sampled = ad::bilinear(fmap, px);
    const ad::Value enc = ad::constant(encode_points(field, points), "posenc");
    const ad::Value raw = field.mlp.forward(ad::concat_cols(enc, sampled));
    FieldEval out;
    out.sigma = ad::softplus(ad::slice_cols(raw, 0, 1));
    out.depth = ad::affine(ad::sigmoid(ad::slice_cols(raw, 1, 2)), far - near, near);
    return out;
}

std::vector<double> eval_field_sigma_plain(const ImplicitField& field,
                                           const std::vector<Vec3>& points,
                                           const Tensor& fmap_data, const Camera& cam) {
    const std::int64_t n = std::int64_t(points.size());
    if (n == 0) return {};
    const std::int64_t feat_h = fmap_data.dim(0);
    const std::int64_t feat_w = fmap_data.dim(1);
    const std::int64_t c = fmap_data.dim(2);
    Tensor pixels({n, 2});
    projection_pixels(points, cam, int(feat_h), int(feat_w), pixels);
    Tensor sampled({n, c});
    kernels::bilinear_batch(fmap_data.data(), feat_h, feat_w, c, pixels.data(), n,
                            sampled.data());
    const Tensor enc = encode_points(field, points);
    const std::int64_t pdim = enc.cols();
    Tensor x({n, pdim + c});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(enc.data() + i * pdim, pdim, x.data() + i * (pdim + c));
        std::copy_n(sampled.data() + i * c, c, x.data() + i * (pdim + c) + pdim);
    }
    // Plain MLP forward mirroring Mlp::forward.
    for (size_t layer = 0; layer < field.mlp.weights.size(); ++layer) {
        const Tensor& wt = field.mlp.weights[layer].data();
        const Tensor& bt = field.mlp.biases[layer].data();
        Tensor y({n, wt.cols()});
        kernels::gemm(x.data(), wt.data(), y.data(), n, wt.rows(), wt.cols(), false);
        const bool last = layer + 1 == field.mlp.weights.size();
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t j = 0; j < wt.cols(); ++j) {
                double v = y.at2(r, j) + bt.at(j);
                if (!last && v < 0.0) v = 0.0;
                y.at2(r, j) = v;
            }
        x = std::move(y);
    }
    std::vector<double> sigma(static_cast<size_t>(n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = x.at2(i, 0);
        sigma[size_t(i)] = v > 30.0 ? v : (v < -30.0 ? std::exp(v) : std::log1p(std::exp(v)));
    }
    return sigma;
}

std::vector<std::uint8_t> fuse_multicam_occupancy(
    const std::vector<std::vector<double>>& per_camera_sigma, double voxel_size, double theta,
    std::vector<double>* fused_scores) {
    if (per_camera_sigma.empty())
        throw std::invalid_argument("fuse_multicam_occupancy: needs at least one camera");
    const size_t n = per_camera_sigma.front().size();
    for (const auto& cam : per_camera_sigma)
        if (cam.size() != n)
            throw std::invalid_argument("fuse_multicam_occupancy: camera array size mismatch");
    std::vector<std::uint8_t> mask(n, 0);
    if (fused_scores) fused_scores->assign(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        double best = -1.0;
        for (const auto& cam : per_camera_sigma) {
            if (cam[i] < 0.0) continue; // not visible to this camera
            best = std::max(best, 1.0 - std::exp(-cam[i] * voxel_size));
        }
        if (best < 0.0) continue; // seen by no camera
        if (fused_scores) (*fused_scores)[i] = best;
        mask[i] = best >= theta ? 1 : 0;
    }
    return mask;
}

} // namespace voxocc
