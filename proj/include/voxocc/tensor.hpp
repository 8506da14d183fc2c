// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxocc/core.hpp"

namespace voxocc {

// Dense row-major f64 array with a small inline shape. All learnable state in
// the project lives in these.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape)
        : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {}
    Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (std::int64_t(data_.size()) != numel_of(shape_))
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::int64_t> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor uniform(std::vector<std::int64_t> shape, double lo, double hi, Rng& rng) {
        Tensor t(std::move(shape));
        for (double& v : t.data_) v = rng.uniform(lo, hi);
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t numel() const { return std::int64_t(data_.size()); }
    std::int64_t dim(int i) const { return shape_.at(size_t(i)); }
    int ndim() const { return int(shape_.size()); }

    // 2D views; most graph ops treat tensors as [rows, cols].
    std::int64_t rows() const { return ndim() == 0 ? 0 : shape_[0]; }
    std::int64_t cols() const {
        std::int64_t c = 1;
        for (int i = 1; i < ndim(); ++i) c *= shape_[size_t(i)];
        return c;
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& at(std::int64_t i) { return data_[size_t(i)]; }
    double at(std::int64_t i) const { return data_[size_t(i)]; }
    double& at2(std::int64_t r, std::int64_t c) { return data_[size_t(r * cols() + c)]; }
    double at2(std::int64_t r, std::int64_t c) const { return data_[size_t(r * cols() + c)]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (std::int64_t d : shape) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    static std::string shape_str(const std::vector<std::int64_t>& shape) {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

private:
    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

} // namespace voxocc
