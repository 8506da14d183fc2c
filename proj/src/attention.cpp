// SPDX-License-Identifier: Apache-2.0
#include "voxocc/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "voxocc/kernels.hpp"
#include "voxocc/nerf.hpp"

namespace voxocc {

void DeformAttnConfig::validate(int levels) const {
    if (n_heads < 1) throw std::invalid_argument("attention: needs at least one head");
    if (int(layer_counts.size()) < levels || int(point_counts.size()) < levels)
        throw std::invalid_argument("attention: per-level layer/point counts too short");
    for (int l = 0; l < levels; ++l)
        if (layer_counts[size_t(l)] < 0 || point_counts[size_t(l)] < 1)
            throw std::invalid_argument("attention: bad layer/point count");
}

ConvEncoder ConvEncoder::create(const std::string& name, std::int64_t in_channels,
                                std::int64_t channels, int levels, Rng& rng) {
    ConvEncoder enc;
    enc.levels = levels;
    enc.channels = channels;
    std::int64_t cin = in_channels;
    for (int l = 0; l < levels; ++l) {
        const std::int64_t fan_in = 9 * cin;
        const double bound = 1.0 / std::sqrt(double(fan_in));
        enc.weights.push_back(ad::param(
            Tensor::uniform({fan_in, channels}, -bound, bound, rng),
            name + ".conv" + std::to_string(l) + ".w"));
        enc.biases.push_back(ad::param(Tensor::uniform({channels}, -bound, bound, rng),
                                       name + ".conv" + std::to_string(l) + ".b"));
        cin = channels;
    }
    return enc;
}

std::vector<ad::Value> ConvEncoder::forward(const Image& image) const {
    Tensor input({image.height, image.width, 3}, image.rgb);
    ad::Value x = ad::constant(std::move(input), "image");
    std::vector<ad::Value> out;
    for (int l = 0; l < levels; ++l) {
        ad::Value y = ad::conv2d(x, weights[size_t(l)], 3, 3, 2, 1);
        const std::int64_t h = y.data().dim(0), w = y.data().dim(1);
        y = ad::reshape(ad::relu(ad::add_rowvec(ad::reshape(y, {h * w, channels}),
                                                biases[size_t(l)])),
                        {h, w, channels});
        out.push_back(y);
        x = y;
    }
    return out;
}

void ConvEncoder::collect_params(std::vector<ad::Value>& out) const {
    for (const auto& w : weights) out.push_back(w);
    for (const auto& b : biases) out.push_back(b);
}

FeaturePyramid encode_images(const std::vector<Image>& images, const ConvEncoder& encoder) {
    FeaturePyramid pyr;
    pyr.maps.reserve(images.size());
    for (const Image& img : images) pyr.maps.push_back(encoder.forward(img));
    return pyr;
}

DeformAttnLayer DeformAttnLayer::create(const std::string& name, std::int64_t channels,
                                        int heads, int points, Rng& rng) {
    if (channels % heads != 0)
        throw std::invalid_argument("deform_attn: channels must divide by heads");
    DeformAttnLayer layer;
    layer.heads = heads;
    layer.points = points;
    layer.channels = channels;
    const std::int64_t mk = std::int64_t(heads) * points;
    const std::int64_t ch = channels / heads;
    const double bound = 1.0 / std::sqrt(double(channels));

    // Offset head starts at zero weights with a deterministic radial spread in
    // the bias, so early sampling probes a small neighborhood of p.
    layer.w_offset = ad::param(Tensor::zeros({channels, mk * 2}), name + ".w_offset");
    Tensor boff({mk * 2});
    for (int m = 0; m < heads; ++m) {
        for (int k = 0; k < points; ++k) {
            const double angle = 2.0 * M_PI * (double(k) + double(m) / heads) / double(points);
            const double radius = 0.5 + 0.5 * double(k % 3);
            boff.at((std::int64_t(m) * points + k) * 2) = radius * std::cos(angle);
            boff.at((std::int64_t(m) * points + k) * 2 + 1) = radius * std::sin(angle);
        }
    }
    layer.b_offset = ad::param(std::move(boff), name + ".b_offset");
    layer.w_attn = ad::param(Tensor::uniform({channels, mk}, -bound, bound, rng),
                             name + ".w_attn");
    layer.b_attn = ad::param(Tensor::zeros({mk}), name + ".b_attn");
    layer.w_value = ad::param(Tensor::uniform({channels, std::int64_t(heads) * ch},
                                              -bound, bound, rng),
                              name + ".w_value");
    const double obound = 1.0 / std::sqrt(double(ch));
    layer.w_output = ad::param(Tensor::uniform({std::int64_t(heads) * ch, channels},
                                               -obound, obound, rng),
                               name + ".w_output");
    return layer;
}

void DeformAttnLayer::collect_params(std::vector<ad::Value>& out) const {
    out.push_back(w_offset);
    out.push_back(b_offset);
    out.push_back(w_attn);
    out.push_back(b_attn);
    out.push_back(w_value);
    out.push_back(w_output);
}

ad::Value deform_attn(const ad::Value& queries, const ad::Value& reference_pixels,
                      const ad::Value& fmap, const DeformAttnLayer& layer) {
    const std::int64_t n = queries.rows();
    const std::int64_t c = layer.channels;
    const int m_heads = layer.heads;
    const int k_points = layer.points;
    const std::int64_t ch = c / m_heads;
    const std::int64_t mk = std::int64_t(m_heads) * k_points;
    const std::int64_t fh = fmap.data().dim(0), fw = fmap.data().dim(1);
    if (fmap.data().dim(2) != c)
        throw std::invalid_argument("deform_attn: feature channel mismatch");
    auto ref = std::make_shared<Tensor>(reference_pixels.data());

    // Fused forward/backward: all intermediates live in scratch buffers and
    // are recomputed during the reverse pass instead of being taped.
    struct Scratch {
        Tensor offsets, logits, attn, vmap, sampled, pixels, head;
    };
    auto compute = [n, c, m_heads, k_points, ch, mk, fh, fw, ref](
                       const Tensor& q, const Tensor& fm, const Tensor& woff,
                       const Tensor& boff, const Tensor& wattn, const Tensor& battn,
                       const Tensor& wval, Scratch& s) {
        s.offsets = Tensor({n, mk * 2});
        kernels::gemm(q.data(), woff.data(), s.offsets.data(), n, c, mk * 2, false);
        s.logits = Tensor({n, mk});
        kernels::gemm(q.data(), wattn.data(), s.logits.data(), n, c, mk, false);
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < mk * 2; ++j) s.offsets.at2(i, j) += boff.at(j);
            for (std::int64_t j = 0; j < mk; ++j) s.logits.at2(i, j) += battn.at(j);
        }
        // Per-head softmax over the k axis.
        s.attn = s.logits;
        for (std::int64_t i = 0; i < n; ++i) {
            for (int m = 0; m < m_heads; ++m) {
                double* row = s.attn.data() + i * mk + std::int64_t(m) * k_points;
                double mx = row[0];
                for (int k = 1; k < k_points; ++k) mx = std::max(mx, row[k]);
                double denom = 0.0;
                for (int k = 0; k < k_points; ++k) {
                    row[k] = std::exp(row[k] - mx);
                    denom += row[k];
                }
                for (int k = 0; k < k_points; ++k) row[k] /= denom;
            }
        }
        // Per-head value projection of the (small) feature map.
        s.vmap = Tensor({fh * fw, std::int64_t(m_heads) * ch});
        kernels::gemm(fm.data(), wval.data(), s.vmap.data(), fh * fw,
                      c, std::int64_t(m_heads) * ch, false);
        // Sampled features and the attention-weighted per-head sums.
        s.pixels = Tensor({n * mk, 2});
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < mk; ++j) {
                s.pixels.at2(i * mk + j, 0) = ref->at2(i, 0) + s.offsets.at2(i, 2 * j);
                s.pixels.at2(i * mk + j, 1) = ref->at2(i, 1) + s.offsets.at2(i, 2 * j + 1);
            }
        s.sampled = Tensor({n * mk, ch});
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled() && n > 16)
        for (std::int64_t i = 0; i < n; ++i) {
            for (int m = 0; m < m_heads; ++m)
                for (int k = 0; k < k_points; ++k) {
                    const std::int64_t j = std::int64_t(m) * k_points + k;
                    const double px = std::clamp(s.pixels.at2(i * mk + j, 0), 0.0, double(fw - 1));
                    const double py = std::clamp(s.pixels.at2(i * mk + j, 1), 0.0, double(fh - 1));
                    const std::int64_t x0 = std::min<std::int64_t>(std::int64_t(px), fw - 1);
                    const std::int64_t y0 = std::min<std::int64_t>(std::int64_t(py), fh - 1);
                    const std::int64_t x1 = std::min(x0 + 1, fw - 1);
                    const std::int64_t y1 = std::min(y0 + 1, fh - 1);
                    const double fx = px - double(x0), fy = py - double(y0);
                    const std::int64_t vw = std::int64_t(m_heads) * ch;
                    const double* f00 = s.vmap.data() + (y0 * fw + x0) * vw + m * ch;
                    const double* f10 = s.vmap.data() + (y0 * fw + x1) * vw + m * ch;
                    const double* f01 = s.vmap.data() + (y1 * fw + x0) * vw + m * ch;
                    const double* f11 = s.vmap.data() + (y1 * fw + x1) * vw + m * ch;
                    double* o = s.sampled.data() + (i * mk + j) * ch;
                    const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
                    const double w01 = (1 - fx) * fy, w11 = fx * fy;
                    for (std::int64_t cc = 0; cc < ch; ++cc)
                        o[cc] = w00 * f00[cc] + w10 * f10[cc] + w01 * f01[cc] + w11 * f11[cc];
                }
        }
        s.head = Tensor({n, std::int64_t(m_heads) * ch});
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled() && n > 16)
        for (std::int64_t i = 0; i < n; ++i) {
            double* hrow = s.head.data() + i * m_heads * ch;
            for (int m = 0; m < m_heads; ++m)
                for (int k = 0; k < k_points; ++k) {
                    const std::int64_t j = std::int64_t(m) * k_points + k;
                    const double a = s.attn.at2(i, j);
                    const double* src = s.sampled.data() + (i * mk + j) * ch;
                    double* dst = hrow + std::int64_t(m) * ch;
                    for (std::int64_t cc = 0; cc < ch; ++cc) dst[cc] += a * src[cc];
                }
        }
    };

    auto fwd = std::make_shared<Scratch>();
    compute(queries.data(), fmap.data(), layer.w_offset.data(), layer.b_offset.data(),
            layer.w_attn.data(), layer.b_attn.data(), layer.w_value.data(), *fwd);
    Tensor out({n, c});
    kernels::gemm(fwd->head.data(), layer.w_output.data().data(), out.data(), n,
                  std::int64_t(m_heads) * ch, c, false);

    std::vector<ad::Value> parents{queries,       fmap,          layer.w_offset,
                                   layer.b_offset, layer.w_attn, layer.b_attn,
                                   layer.w_value,  layer.w_output};
    auto backward = [n, c, m_heads, k_points, ch, mk, fh, fw, ref, fwd](ad::Node& nd) {
        const Tensor& q = nd.parents[0].data();
        const Tensor& fm = nd.parents[1].data();
        const Tensor& woff = nd.parents[2].data();
        const Tensor& battn = nd.parents[5].data();
        const Tensor& wattn = nd.parents[4].data();
        const Tensor& wval = nd.parents[6].data();
        const Tensor& wout = nd.parents[7].data();
        const Tensor& gout = nd.grad;
        const Scratch& s = *fwd;
        (void)woff;
        (void)battn;

        // gHead = gOut * Wout^T ; gWout += head^T * gOut.
        Tensor ghead({n, std::int64_t(m_heads) * ch});
        kernels::gemm_nt(gout.data(), wout.data(), ghead.data(), n, c,
                         std::int64_t(m_heads) * ch);
        if (nd.parents[7].requires_grad())
            kernels::gemm_tn(s.head.data(), gout.data(), nd.parents[7].grad().data(), n,
                             std::int64_t(m_heads) * ch, c);

        Tensor gattn({n, mk});
        Tensor gsampled({n * mk, ch});
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled() && n > 16)
        for (std::int64_t i = 0; i < n; ++i) {
            for (int m = 0; m < m_heads; ++m)
                for (int k = 0; k < k_points; ++k) {
                    const std::int64_t j = std::int64_t(m) * k_points + k;
                    const double* gh = ghead.data() + i * m_heads * ch + std::int64_t(m) * ch;
                    const double* smp = s.sampled.data() + (i * mk + j) * ch;
                    double* gs = gsampled.data() + (i * mk + j) * ch;
                    const double a = s.attn.at2(i, j);
                    double dot = 0.0;
                    for (std::int64_t cc = 0; cc < ch; ++cc) {
                        dot += gh[cc] * smp[cc];
                        gs[cc] = a * gh[cc];
                    }
                    gattn.at2(i, j) = dot;
                }
        }

        // Softmax backward per head into glogits (reuse gattn in place).
        Tensor glogits({n, mk});
        for (std::int64_t i = 0; i < n; ++i)
            for (int m = 0; m < m_heads; ++m) {
                const std::int64_t base = std::int64_t(m) * k_points;
                double dot = 0.0;
                for (int k = 0; k < k_points; ++k)
                    dot += gattn.at2(i, base + k) * s.attn.at2(i, base + k);
                for (int k = 0; k < k_points; ++k)
                    glogits.at2(i, base + k) =
                        s.attn.at2(i, base + k) * (gattn.at2(i, base + k) - dot);
            }

        // Bilinear backward: gvmap (serial scatter) and gpixels -> goffsets.
        Tensor gvmap({fh * fw, std::int64_t(m_heads) * ch});
        Tensor goffsets({n, mk * 2});
        const bool need_fmap = nd.parents[1].requires_grad() || nd.parents[6].requires_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            for (int m = 0; m < m_heads; ++m)
                for (int k = 0; k < k_points; ++k) {
                    const std::int64_t j = std::int64_t(m) * k_points + k;
                    const double pxr = s.pixels.at2(i * mk + j, 0);
                    const double pyr = s.pixels.at2(i * mk + j, 1);
                    const double px = std::clamp(pxr, 0.0, double(fw - 1));
                    const double py = std::clamp(pyr, 0.0, double(fh - 1));
                    const std::int64_t x0 = std::min<std::int64_t>(std::int64_t(px), fw - 1);
                    const std::int64_t y0 = std::min<std::int64_t>(std::int64_t(py), fh - 1);
                    const std::int64_t x1 = std::min(x0 + 1, fw - 1);
                    const std::int64_t y1 = std::min(y0 + 1, fh - 1);
                    const double fx = px - double(x0), fy = py - double(y0);
                    const std::int64_t vw = std::int64_t(m_heads) * ch;
                    const double* gs = gsampled.data() + (i * mk + j) * ch;
                    const double* f00 = s.vmap.data() + (y0 * fw + x0) * vw + m * ch;
                    const double* f10 = s.vmap.data() + (y0 * fw + x1) * vw + m * ch;
                    const double* f01 = s.vmap.data() + (y1 * fw + x0) * vw + m * ch;
                    const double* f11 = s.vmap.data() + (y1 * fw + x1) * vw + m * ch;
                    double* g00 = gvmap.data() + (y0 * fw + x0) * vw + m * ch;
                    double* g10 = gvmap.data() + (y0 * fw + x1) * vw + m * ch;
                    double* g01 = gvmap.data() + (y1 * fw + x0) * vw + m * ch;
                    double* g11 = gvmap.data() + (y1 * fw + x1) * vw + m * ch;
                    const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
                    const double w01 = (1 - fx) * fy, w11 = fx * fy;
                    double gx = 0.0, gy = 0.0;
                    for (std::int64_t cc = 0; cc < ch; ++cc) {
                        const double g = gs[cc];
                        if (need_fmap) {
                            g00[cc] += w00 * g;
                            g10[cc] += w10 * g;
                            g01[cc] += w01 * g;
                            g11[cc] += w11 * g;
                        }
                        gx += ((1 - fy) * (f10[cc] - f00[cc]) + fy * (f11[cc] - f01[cc])) * g;
                        gy += ((1 - fx) * (f01[cc] - f00[cc]) + fx * (f11[cc] - f10[cc])) * g;
                    }
                    const bool in_x = pxr > 0.0 && pxr < double(fw - 1);
                    const bool in_y = pyr > 0.0 && pyr < double(fh - 1);
                    goffsets.at2(i, 2 * j) = in_x ? gx : 0.0;
                    goffsets.at2(i, 2 * j + 1) = in_y ? gy : 0.0;
                }
        }

        if (nd.parents[0].requires_grad()) {
            Tensor& gq = nd.parents[0].grad();
            kernels::gemm_nt(glogits.data(), wattn.data(), gq.data(), n, mk, c);
            kernels::gemm_nt(goffsets.data(), woff.data(), gq.data(), n, mk * 2, c);
        }
        if (nd.parents[2].requires_grad())
            kernels::gemm_tn(q.data(), goffsets.data(), nd.parents[2].grad().data(), n, c,
                             mk * 2);
        if (nd.parents[3].requires_grad()) {
            Tensor& gb = nd.parents[3].grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < mk * 2; ++j) gb.at(j) += goffsets.at2(i, j);
        }
        if (nd.parents[4].requires_grad())
            kernels::gemm_tn(q.data(), glogits.data(), nd.parents[4].grad().data(), n, c, mk);
        if (nd.parents[5].requires_grad()) {
            Tensor& gb = nd.parents[5].grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < mk; ++j) gb.at(j) += glogits.at2(i, j);
        }
        if (nd.parents[6].requires_grad())
            kernels::gemm_tn(fm.data(), gvmap.data(), nd.parents[6].grad().data(), fh * fw,
                             c, std::int64_t(m_heads) * ch);
        if (nd.parents[1].requires_grad()) {
            // gfmap2d = gvmap * Wval^T, accumulated into the [H,W,C] grad.
            Tensor& gf = nd.parents[1].grad();
            kernels::gemm_nt(gvmap.data(), wval.data(), gf.data(), fh * fw,
                             std::int64_t(m_heads) * ch, c);
        }
    };
    return ad::make_node(std::move(out), std::move(parents), std::move(backward),
                         "deform_attn");
}

void LiftLevelParams::collect_params(std::vector<ad::Value>& out) const {
    for (const auto& layer : layers) layer.collect_params(out);
    if (use_sparse_conv && conv_kernel.defined()) out.push_back(conv_kernel);
}

QueryProposalSet lift_level(const QueryProposalSet& q, const FeaturePyramid& pyramid,
                            const CameraRig& rig, int level, const LevelGeometry& geom,
                            const LiftLevelParams& params) {
    QueryProposalSet cur = q;
    if (cur.size() == 0) return cur;
    const std::int64_t n = cur.size();

    // Cameras with identical pose and intrinsics would contribute identical
    // attention outputs; dropping duplicates keeps the reduction idempotent.
    std::vector<bool> duplicate(rig.cameras.size(), false);
    for (size_t i = 0; i < rig.cameras.size(); ++i)
        for (size_t j = 0; j < i && !duplicate[i]; ++j) {
            const Camera &a = rig.cameras[i], &b = rig.cameras[j];
            duplicate[i] = !duplicate[j] && a.rotation.m == b.rotation.m &&
                           a.translation.x == b.translation.x &&
                           a.translation.y == b.translation.y &&
                           a.translation.z == b.translation.z && a.fx == b.fx &&
                           a.fy == b.fy && a.cx == b.cx && a.cy == b.cy &&
                           a.width == b.width && a.height == b.height;
        }

    // Per-camera valid rows and reference pixels are fixed by geometry.
    struct CamRefs {
        std::vector<std::int64_t> rows;
        ad::Value pixels; // [Nv, 2] constant, feature-map coordinates
    };
    std::vector<CamRefs> refs;
    std::vector<double> inv_count(size_t(n), 0.0);
    for (size_t ci = 0; ci < rig.cameras.size(); ++ci) {
        if (duplicate[ci]) {
            refs.emplace_back();
            continue;
        }
        const Camera& cam = rig.cameras[ci];
        const ad::Value& fmap = pyramid.level(int(ci), level);
        const int fh = int(fmap.data().dim(0)), fw = int(fmap.data().dim(1));
        CamRefs r;
        std::vector<double> px;
        for (std::int64_t i = 0; i < n; ++i) {
            const Projection proj = project_point(cam, geom.voxel_center(cur.indices[size_t(i)]));
            if (!proj.valid) continue;
            const Vec2 fp = image_to_feature_pixel(proj.pixel, cam.height, cam.width, fh, fw);
            r.rows.push_back(i);
            px.push_back(fp.x);
            px.push_back(fp.y);
            inv_count[size_t(i)] += 1.0;
        }
        if (!r.rows.empty())
            r.pixels = ad::constant(
                Tensor({std::int64_t(r.rows.size()), 2}, std::move(px)), "ref_pixels");
        refs.push_back(std::move(r));
    }
    for (double& v : inv_count) v = v > 0.0 ? 1.0 / v : 0.0;
    const ad::Value inv_count_v =
        ad::constant(Tensor({n}, std::vector<double>(inv_count)), "hit_inv_count");

    for (const DeformAttnLayer& layer : params.layers) {
        ad::Value acc;
        for (size_t ci = 0; ci < rig.cameras.size(); ++ci) {
            const CamRefs& r = refs[ci];
            if (r.rows.empty()) continue;
            const ad::Value sub = ad::gather_rows(cur.features, r.rows);
            const ad::Value attn_out =
                deform_attn(sub, r.pixels, pyramid.level(int(ci), level), layer);
            const ad::Value placed = ad::scatter_rows(attn_out, r.rows, n);
            acc = acc.defined() ? ad::add(acc, placed) : placed;
        }
        if (!acc.defined()) break; // no camera sees any query: identity layers
        cur.features = ad::add(cur.features, ad::scale_rows(acc, inv_count_v));
    }

    if (params.use_sparse_conv && params.conv_kernel.defined())
        cur = sparse_conv3d(cur, params.conv_kernel);
    return cur;
}

} // namespace voxocc
