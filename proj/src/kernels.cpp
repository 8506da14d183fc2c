// SPDX-License-Identifier: Apache-2.0
#include "voxocc/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace voxocc::kernels {

namespace {
bool g_parallel = true;
}

void set_parallel(bool enabled) { g_parallel = enabled; }
bool parallel_enabled() { return g_parallel; }

void gemm(const double* a, const double* b, double* c,
          std::int64_t m, std::int64_t k, std::int64_t n, bool accumulate) {
    // Four output rows per iteration so each B row is loaded once per four
    // FMA streams.
    const std::int64_t m4 = m - (m % 4);
#pragma omp parallel for schedule(static) if (g_parallel && m > 16)
    for (std::int64_t i = 0; i < m4; i += 4) {
        double* c0 = c + i * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        if (!accumulate) {
            std::fill(c0, c0 + n, 0.0);
            std::fill(c1, c1 + n, 0.0);
            std::fill(c2, c2 + n, 0.0);
            std::fill(c3, c3 + n, 0.0);
        }
        const double* a0 = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av0 = a0[p];
            const double av1 = a0[k + p];
            const double av2 = a0[2 * k + p];
            const double av3 = a0[3 * k + p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) {
                const double bv = brow[j];
                c0[j] += av0 * bv;
                c1[j] += av1 * bv;
                c2[j] += av2 * bv;
                c3[j] += av3 * bv;
            }
        }
    }
    for (std::int64_t i = m4; i < m; ++i) {
        double* crow = c + i * n;
        if (!accumulate) std::fill(crow, crow + n, 0.0);
        const double* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c,
             std::int64_t m, std::int64_t k, std::int64_t n) {
    const std::int64_t m4 = m - (m % 4);
#pragma omp parallel for schedule(static) if (g_parallel && m > 16)
    for (std::int64_t i = 0; i < m4; i += 4) {
        const double* a0 = a + i * k;
        double* c0 = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::int64_t p = 0; p < k; ++p) {
                const double bv = brow[p];
                s0 += a0[p] * bv;
                s1 += a0[k + p] * bv;
                s2 += a0[2 * k + p] * bv;
                s3 += a0[3 * k + p] * bv;
            }
            c0[j] += s0;
            c0[n + j] += s1;
            c0[2 * n + j] += s2;
            c0[3 * n + j] += s3;
        }
    }
    for (std::int64_t i = m4; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c,
             std::int64_t m, std::int64_t k, std::int64_t n) {
    // Output slot (p, j) owned by one iteration; inner loop over m is the
    // fixed accumulation order.
#pragma omp parallel for schedule(static) if (g_parallel && k > 8)
    for (std::int64_t p = 0; p < k; ++p) {
        double* crow = c + p * n;
        for (std::int64_t i = 0; i < m; ++i) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

namespace {
struct BilinearCell {
    std::int64_t x0, x1, y0, y1;
    double fx, fy;
};

inline BilinearCell bilinear_cell(double px, double py, std::int64_t h, std::int64_t w) {
    // Clamp-to-border in the [0, w-1] x [0, h-1] lattice.
    px = std::clamp(px, 0.0, double(w - 1));
    py = std::clamp(py, 0.0, double(h - 1));
    BilinearCell cell;
    cell.x0 = std::min<std::int64_t>(std::int64_t(std::floor(px)), w - 1);
    cell.y0 = std::min<std::int64_t>(std::int64_t(std::floor(py)), h - 1);
    cell.x1 = std::min<std::int64_t>(cell.x0 + 1, w - 1);
    cell.y1 = std::min<std::int64_t>(cell.y0 + 1, h - 1);
    cell.fx = px - double(cell.x0);
    cell.fy = py - double(cell.y0);
    return cell;
}
} // namespace

void bilinear_batch(const double* fmap, std::int64_t h, std::int64_t w, std::int64_t c,
                    const double* pixels, std::int64_t nb, double* out) {
#pragma omp parallel for schedule(static) if (g_parallel && nb > 16)
    for (std::int64_t i = 0; i < nb; ++i) {
        const BilinearCell cl = bilinear_cell(pixels[2 * i], pixels[2 * i + 1], h, w);
        const double w00 = (1.0 - cl.fx) * (1.0 - cl.fy);
        const double w10 = cl.fx * (1.0 - cl.fy);
        const double w01 = (1.0 - cl.fx) * cl.fy;
        const double w11 = cl.fx * cl.fy;
        const double* f00 = fmap + (cl.y0 * w + cl.x0) * c;
        const double* f10 = fmap + (cl.y0 * w + cl.x1) * c;
        const double* f01 = fmap + (cl.y1 * w + cl.x0) * c;
        const double* f11 = fmap + (cl.y1 * w + cl.x1) * c;
        double* o = out + i * c;
        for (std::int64_t ch = 0; ch < c; ++ch)
            o[ch] = w00 * f00[ch] + w10 * f10[ch] + w01 * f01[ch] + w11 * f11[ch];
    }
}

void bilinear_batch_backward(const double* fmap, std::int64_t h, std::int64_t w, std::int64_t c,
                             const double* pixels, std::int64_t nb, const double* grad_out,
                             double* grad_fmap, double* grad_pixels) {
    if (grad_fmap) {
        // Serial scatter: duplicate cells across rows must accumulate in a
        // fixed order for bit reproducibility.
        for (std::int64_t i = 0; i < nb; ++i) {
            const BilinearCell cl = bilinear_cell(pixels[2 * i], pixels[2 * i + 1], h, w);
            const double w00 = (1.0 - cl.fx) * (1.0 - cl.fy);
            const double w10 = cl.fx * (1.0 - cl.fy);
            const double w01 = (1.0 - cl.fx) * cl.fy;
            const double w11 = cl.fx * cl.fy;
            const double* go = grad_out + i * c;
            double* g00 = grad_fmap + (cl.y0 * w + cl.x0) * c;
            double* g10 = grad_fmap + (cl.y0 * w + cl.x1) * c;
            double* g01 = grad_fmap + (cl.y1 * w + cl.x0) * c;
            double* g11 = grad_fmap + (cl.y1 * w + cl.x1) * c;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                g00[ch] += w00 * go[ch];
                g10[ch] += w10 * go[ch];
                g01[ch] += w01 * go[ch];
                g11[ch] += w11 * go[ch];
            }
        }
    }
    if (grad_pixels) {
#pragma omp parallel for schedule(static) if (g_parallel && nb > 16)
        for (std::int64_t i = 0; i < nb; ++i) {
            const double pxr = pixels[2 * i];
            const double pyr = pixels[2 * i + 1];
            // Zero gradient outside the border (clamped region is constant).
            const bool in_x = pxr > 0.0 && pxr < double(w - 1);
            const bool in_y = pyr > 0.0 && pyr < double(h - 1);
            const BilinearCell cl = bilinear_cell(pxr, pyr, h, w);
            const double* f00 = fmap + (cl.y0 * w + cl.x0) * c;
            const double* f10 = fmap + (cl.y0 * w + cl.x1) * c;
            const double* f01 = fmap + (cl.y1 * w + cl.x0) * c;
            const double* f11 = fmap + (cl.y1 * w + cl.x1) * c;
            const double* go = grad_out + i * c;
            double gx = 0.0, gy = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double dfx = (1.0 - cl.fy) * (f10[ch] - f00[ch]) + cl.fy * (f11[ch] - f01[ch]);
                const double dfy = (1.0 - cl.fx) * (f01[ch] - f00[ch]) + cl.fx * (f11[ch] - f10[ch]);
                gx += dfx * go[ch];
                gy += dfy * go[ch];
            }
            grad_pixels[2 * i] += in_x ? gx : 0.0;
            grad_pixels[2 * i + 1] += in_y ? gy : 0.0;
        }
    }
}

void conv2d(const double* input, std::int64_t h, std::int64_t w, std::int64_t cin,
            const double* weight, std::int64_t kh, std::int64_t kw, std::int64_t cout,
            std::int64_t stride, std::int64_t pad, double* out) {
    const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t wo = (w + 2 * pad - kw) / stride + 1;
#pragma omp parallel for schedule(static) if (g_parallel && ho > 4)
    for (std::int64_t oy = 0; oy < ho; ++oy) {
        for (std::int64_t ox = 0; ox < wo; ++ox) {
            double* o = out + (oy * wo + ox) * cout;
            std::fill(o, o + cout, 0.0);
            for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const std::int64_t ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= w) continue;
                    const double* in = input + (iy * w + ix) * cin;
                    const double* wr = weight + ((ky * kw + kx) * cin) * cout;
                    for (std::int64_t ci = 0; ci < cin; ++ci) {
                        const double iv = in[ci];
                        if (iv == 0.0) continue;
                        const double* wrow = wr + ci * cout;
                        for (std::int64_t co = 0; co < cout; ++co) o[co] += iv * wrow[co];
                    }
                }
            }
        }
    }
}

void conv2d_backward(const double* input, std::int64_t h, std::int64_t w, std::int64_t cin,
                     const double* weight, std::int64_t kh, std::int64_t kw, std::int64_t cout,
                     std::int64_t stride, std::int64_t pad, const double* grad_out,
                     double* grad_input, double* grad_weight) {
    const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t wo = (w + 2 * pad - kw) / stride + 1;
    // Serial accumulation into both grads: output pixels overlap on the input
    // and every pixel touches every weight.
    for (std::int64_t oy = 0; oy < ho; ++oy) {
        for (std::int64_t ox = 0; ox < wo; ++ox) {
            const double* go = grad_out + (oy * wo + ox) * cout;
            for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const std::int64_t ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= w) continue;
                    const double* in = input + (iy * w + ix) * cin;
                    const std::int64_t wbase = (ky * kw + kx) * cin;
                    for (std::int64_t ci = 0; ci < cin; ++ci) {
                        const double* wrow = weight + (wbase + ci) * cout;
                        double gi = 0.0;
                        double* gwrow = grad_weight ? grad_weight + (wbase + ci) * cout : nullptr;
                        for (std::int64_t co = 0; co < cout; ++co) {
                            gi += wrow[co] * go[co];
                            if (gwrow) gwrow[co] += in[ci] * go[co];
                        }
                        if (grad_input) grad_input[(iy * w + ix) * cin + ci] += gi;
                    }
                }
            }
        }
    }
}

void gather_rows(const double* src, std::int64_t cols, const std::int64_t* rows,
                 std::int64_t n, double* out) {
#pragma omp parallel for schedule(static) if (g_parallel && n > 32)
    for (std::int64_t i = 0; i < n; ++i) {
        const double* s = src + rows[i] * cols;
        double* o = out + i * cols;
        std::copy(s, s + cols, o);
    }
}

void scatter_add_rows(const double* src, std::int64_t cols, const std::int64_t* rows,
                      std::int64_t n, double* dst) {
    for (std::int64_t i = 0; i < n; ++i) {
        const double* s = src + i * cols;
        double* d = dst + rows[i] * cols;
        for (std::int64_t c = 0; c < cols; ++c) d[c] += s[c];
    }
}

} // namespace voxocc::kernels
