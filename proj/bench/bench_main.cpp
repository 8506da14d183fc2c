// SPDX-License-Identifier: Apache-2.0
//
// Serial-vs-OpenMP comparison for the data-parallel kernels. The two paths
// are bit-identical by construction; this target reports the timing side.

#include <chrono>
#include <cstdio>
#include <vector>

#include "voxocc/kernels.hpp"
#include "voxocc/nerf.hpp"
#include "voxocc/scenegen.hpp"

using namespace voxocc;

namespace {

template <typename F>
double time_ms(F&& fn, int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) fn();
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - t0)
               .count() /
           reps;
}

template <typename F>
void row(const char* name, F&& fn, int reps) {
    kernels::set_parallel(false);
    const double serial = time_ms(fn, reps);
    kernels::set_parallel(true);
    const double parallel = time_ms(fn, reps);
    std::printf("%-26s serial %9.3f ms   openmp %9.3f ms   speedup %.2fx\n", name, serial,
                parallel, serial / parallel);
}

} // namespace

int main() {
    Rng rng(1);

    {
        const std::int64_t m = 4096, k = 32, n = 32;
        Tensor a = Tensor::uniform({m, k}, -1, 1, rng);
        Tensor b = Tensor::uniform({k, n}, -1, 1, rng);
        Tensor c({m, n});
        row("gemm 4096x32x32", [&] {
            kernels::gemm(a.data(), b.data(), c.data(), m, k, n, false);
        }, 200);
    }
    {
        const std::int64_t h = 32, w = 32, c = 32, nb = 16384;
        Tensor fmap = Tensor::uniform({h, w, c}, -1, 1, rng);
        Tensor pixels({nb, 2});
        for (std::int64_t i = 0; i < nb; ++i) {
            pixels.at(2 * i) = rng.uniform(0.0, double(w - 1));
            pixels.at(2 * i + 1) = rng.uniform(0.0, double(h - 1));
        }
        Tensor out({nb, c});
        row("bilinear 16k x 32ch", [&] {
            kernels::bilinear_batch(fmap.data(), h, w, c, pixels.data(), nb, out.data());
        }, 100);
    }
    {
        const std::int64_t hw = 64, cin = 3, cout = 32;
        Tensor input = Tensor::uniform({hw, hw, cin}, -1, 1, rng);
        Tensor weight = Tensor::uniform({9 * cin, cout}, -1, 1, rng);
        Tensor out({hw / 2, hw / 2, cout});
        row("conv2d 64x64 s2", [&] {
            kernels::conv2d(input.data(), hw, hw, cin, weight.data(), 3, 3, cout, 2, 1,
                            out.data());
        }, 100);
    }
    {
        SceneSpec spec;
        spec.grid = {32, 32, 8};
        spec.origin = {-4, -4, 0};
        spec.image_size = 48;
        const GroundTruthScene scene = generate_scene(spec, 7);
        row("gt depth map 48px", [&] { render_gt_depth(scene, 0); }, 10);
    }
    {
        std::vector<double> sigmas(128), deltas(128), ds(128);
        for (int i = 0; i < 128; ++i) {
            sigmas[size_t(i)] = rng.uniform(0.0, 4.0);
            deltas[size_t(i)] = rng.uniform(0.01, 0.2);
            ds[size_t(i)] = 1.0 + i * 0.1;
        }
        row("render weights x1000", [&] {
            for (int r = 0; r < 1000; ++r) {
                const std::vector<double> w = render_weights(sigmas, deltas);
                (void)render_depth_value(w, ds);
            }
        }, 20);
    }
    return 0;
}
