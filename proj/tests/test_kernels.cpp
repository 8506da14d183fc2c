// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "voxocc/core.hpp"
#include "voxocc/kernels.hpp"

using namespace voxocc;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

} // namespace

// The OpenMP kernels and the serial reference must agree bit for bit: every
// parallel loop owns disjoint outputs with a fixed accumulation order.
TEST_CASE("gemm parallel matches serial bitwise") {
    Rng rng(42);
    const std::int64_t m = 37, k = 19, n = 23;
    const auto a = random_vec(size_t(m * k), rng);
    const auto b = random_vec(size_t(k * n), rng);
    std::vector<double> c_serial(size_t(m * n), 0.5), c_par(size_t(m * n), 0.5);

    kernels::set_parallel(false);
    kernels::gemm(a.data(), b.data(), c_serial.data(), m, k, n, true);
    kernels::set_parallel(true);
    kernels::gemm(a.data(), b.data(), c_par.data(), m, k, n, true);
    CHECK(c_serial == c_par);

    std::fill(c_serial.begin(), c_serial.end(), 0.0);
    std::fill(c_par.begin(), c_par.end(), 0.0);
    kernels::set_parallel(false);
    kernels::gemm_nt(a.data(), b.data(), c_serial.data(), m, n, k);
    kernels::set_parallel(true);
    kernels::gemm_nt(a.data(), b.data(), c_par.data(), m, n, k);
    CHECK(c_serial == c_par);
}

TEST_CASE("gemm matches naive triple loop") {
    Rng rng(7);
    const std::int64_t m = 11, k = 13, n = 9;
    const auto a = random_vec(size_t(m * k), rng);
    const auto b = random_vec(size_t(k * n), rng);
    std::vector<double> c(size_t(m * n), 0.0);
    kernels::gemm(a.data(), b.data(), c.data(), m, k, n, false);
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += a[size_t(i * k + p)] * b[size_t(p * n + j)];
            CHECK(c[size_t(i * n + j)] == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("bilinear kernel parallel matches serial") {
    Rng rng(3);
    const std::int64_t h = 9, w = 7, c = 5, nb = 64;
    const auto fmap = random_vec(size_t(h * w * c), rng);
    std::vector<double> pixels(static_cast<size_t>(nb * 2));
    for (std::int64_t i = 0; i < nb; ++i) {
        pixels[size_t(2 * i)] = rng.uniform(-1.0, double(w));
        pixels[size_t(2 * i + 1)] = rng.uniform(-1.0, double(h));
    }
    std::vector<double> o1(static_cast<size_t>(nb * c)), o2(static_cast<size_t>(nb * c));
    kernels::set_parallel(false);
    kernels::bilinear_batch(fmap.data(), h, w, c, pixels.data(), nb, o1.data());
    kernels::set_parallel(true);
    kernels::bilinear_batch(fmap.data(), h, w, c, pixels.data(), nb, o2.data());
    CHECK(o1 == o2);

    std::vector<double> go = random_vec(size_t(nb * c), rng);
    std::vector<double> gf1(size_t(h * w * c), 0.0), gf2(size_t(h * w * c), 0.0);
    std::vector<double> gp1(size_t(nb * 2), 0.0), gp2(size_t(nb * 2), 0.0);
    kernels::set_parallel(false);
    kernels::bilinear_batch_backward(fmap.data(), h, w, c, pixels.data(), nb, go.data(),
                                     gf1.data(), gp1.data());
    kernels::set_parallel(true);
    kernels::bilinear_batch_backward(fmap.data(), h, w, c, pixels.data(), nb, go.data(),
                                     gf2.data(), gp2.data());
    CHECK(gf1 == gf2);
    CHECK(gp1 == gp2);
    kernels::set_parallel(true);
}

TEST_CASE("conv2d parallel matches serial and a naive oracle") {
    Rng rng(11);
    const std::int64_t h = 8, w = 6, cin = 3, cout = 4, kh = 3, kw = 3, stride = 2, pad = 1;
    const auto input = random_vec(size_t(h * w * cin), rng);
    const auto weight = random_vec(size_t(kh * kw * cin * cout), rng);
    const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t wo = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> o1(static_cast<size_t>(ho * wo * cout)), o2(static_cast<size_t>(ho * wo * cout));
    kernels::set_parallel(false);
    kernels::conv2d(input.data(), h, w, cin, weight.data(), kh, kw, cout, stride, pad,
                    o1.data());
    kernels::set_parallel(true);
    kernels::conv2d(input.data(), h, w, cin, weight.data(), kh, kw, cout, stride, pad,
                    o2.data());
    CHECK(o1 == o2);

    // Naive correlation oracle.
    for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox)
            for (std::int64_t co = 0; co < cout; ++co) {
                double acc = 0.0;
                for (std::int64_t ky = 0; ky < kh; ++ky)
                    for (std::int64_t kx = 0; kx < kw; ++kx)
                        for (std::int64_t ci = 0; ci < cin; ++ci) {
                            const std::int64_t iy = oy * stride + ky - pad;
                            const std::int64_t ix = ox * stride + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += input[size_t((iy * w + ix) * cin + ci)] *
                                   weight[size_t(((ky * kw + kx) * cin + ci) * cout + co)];
                        }
                CHECK(o1[size_t((oy * wo + ox) * cout + co)] ==
                      doctest::Approx(acc).epsilon(1e-12));
            }
}
