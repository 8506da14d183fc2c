// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "voxocc/autodiff.hpp"
#include "voxocc/core.hpp"

namespace voxocc {

// Fully connected stack with rectified hidden layers and a linear output
// layer. Output heads are taken as named column slices by the callers.
struct Mlp {
    std::vector<std::int64_t> widths; // [in, hidden..., out]
    std::vector<ad::Value> weights;
    std::vector<ad::Value> biases;

    static Mlp create(const std::string& name_prefix, std::vector<std::int64_t> widths,
                      Rng& rng) {
        Mlp m;
        m.widths = std::move(widths);
        for (size_t i = 0; i + 1 < m.widths.size(); ++i) {
            const std::int64_t fan_in = m.widths[i];
            const std::int64_t fan_out = m.widths[i + 1];
            const double bound = 1.0 / std::sqrt(double(fan_in));
            m.weights.push_back(ad::param(
                Tensor::uniform({fan_in, fan_out}, -bound, bound, rng),
                name_prefix + ".w" + std::to_string(i)));
            m.biases.push_back(ad::param(
                Tensor::uniform({fan_out}, -bound, bound, rng),
                name_prefix + ".b" + std::to_string(i)));
        }
        return m;
    }

    ad::Value forward(ad::Value x) const {
        for (size_t i = 0; i < weights.size(); ++i) {
            x = ad::add_rowvec(ad::matmul(x, weights[i]), biases[i]);
            if (i + 1 < weights.size()) x = ad::relu(x);
        }
        return x;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (size_t i = 0; i + 1 < widths.size(); ++i)
            n += widths[i] * widths[i + 1] + widths[i + 1];
        return n;
    }

    void collect_params(std::vector<ad::Value>& out) const {
        for (const auto& w : weights) out.push_back(w);
        for (const auto& b : biases) out.push_back(b);
    }
};

} // namespace voxocc
