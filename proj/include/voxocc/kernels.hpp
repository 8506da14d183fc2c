// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace voxocc::kernels {

// Global switch between the OpenMP kernels and the serial reference kernels.
// Both produce bit-identical results: every parallel loop owns disjoint output
// slots and accumulates in the same order as the serial code, so the toggle is
// safe to flip anywhere (tests compare the two paths directly).
void set_parallel(bool enabled);
bool parallel_enabled();

// C[m x n] = A[m x k] * B[k x n], optionally accumulating into C.
void gemm(const double* a, const double* b, double* c,
          std::int64_t m, std::int64_t k, std::int64_t n, bool accumulate);

// C[m x n] += A[m x k] * B[n x k]^T  (i.e. A * B^T), for matmul backward.
void gemm_nt(const double* a, const double* b, double* c,
             std::int64_t m, std::int64_t k, std::int64_t n);

// C[k x n] += A[m x k]^T * B[m x n], for matmul backward.
void gemm_tn(const double* a, const double* b, double* c,
             std::int64_t m, std::int64_t k, std::int64_t n);

// Bilinear sampling of a [h x w x c] feature map at nb continuous pixel
// positions (x, y) with clamp-to-border. out is [nb x c].
void bilinear_batch(const double* fmap, std::int64_t h, std::int64_t w, std::int64_t c,
                    const double* pixels, std::int64_t nb, double* out);

// Backward of bilinear_batch. grad_fmap accumulation is serial (scatter with
// overlapping cells); grad_pixels is per-row and parallel. Either pointer may
// be null to skip that input.
void bilinear_batch_backward(const double* fmap, std::int64_t h, std::int64_t w, std::int64_t c,
                             const double* pixels, std::int64_t nb, const double* grad_out,
                             double* grad_fmap, double* grad_pixels);

// 2D convolution, stride s, zero padding p, kernel kh x kw.
// input [h x w x cin], weight [kh*kw*cin x cout], out [ho x wo x cout].
void conv2d(const double* input, std::int64_t h, std::int64_t w, std::int64_t cin,
            const double* weight, std::int64_t kh, std::int64_t kw, std::int64_t cout,
            std::int64_t stride, std::int64_t pad, double* out);

void conv2d_backward(const double* input, std::int64_t h, std::int64_t w, std::int64_t cin,
                     const double* weight, std::int64_t kh, std::int64_t kw, std::int64_t cout,
                     std::int64_t stride, std::int64_t pad, const double* grad_out,
                     double* grad_input, double* grad_weight);

// out[i] = alpha[perm[i]] convenience gathers used by sparse ops.
void gather_rows(const double* src, std::int64_t cols, const std::int64_t* rows,
                 std::int64_t n, double* out);

// dst[rows[i]] += src[i] row-wise; serial by construction (duplicate targets).
void scatter_add_rows(const double* src, std::int64_t cols, const std::int64_t* rows,
                      std::int64_t n, double* dst);

} // namespace voxocc::kernels
