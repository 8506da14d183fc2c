// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "voxocc/tensor.hpp"

namespace voxocc::ad {

class Value;

// One record in the reverse-mode tape. Nodes are created by the op functions
// below; backward() walks them in reverse topological order exactly once.
struct Node {
    Tensor data;
    Tensor grad; // allocated on first backward touch
    std::string name;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<Value> parents;
    std::function<void(Node&)> backward_fn;
    std::uint64_t id = 0;

    Tensor& ensure_grad() {
        if (!grad_ready) {
            grad = Tensor::zeros(data.shape());
            grad_ready = true;
        }
        return grad;
    }
};

class Value {
public:
    Value() = default;
    explicit Value(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    bool defined() const { return node_ != nullptr; }
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

    Tensor& data() { return node_->data; }
    const Tensor& data() const { return node_->data; }
    Tensor& grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::vector<std::int64_t>& shape() const { return node_->data.shape(); }
    std::int64_t numel() const { return node_->data.numel(); }
    std::int64_t rows() const { return node_->data.rows(); }
    std::int64_t cols() const { return node_->data.cols(); }
    double scalar() const { return node_->data.at(0); }
    const std::string& name() const { return node_->name; }

private:
    std::shared_ptr<Node> node_;
};

// Leaf constructors.
Value constant(Tensor t, std::string name = "const");
Value param(Tensor t, std::string name);

// Generic node factory for fused ops defined in other modules. The forward
// result is checked for NaN/Inf like every built-in op.
Value make_node(Tensor data, std::vector<Value> parents,
                std::function<void(Node&)> backward_fn, std::string name);

// Elementwise and broadcast arithmetic.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value add_rowvec(const Value& a, const Value& bias);  // [N,C] + [C]
Value scale_rows(const Value& a, const Value& s);     // [N,C] * [N] per row
Value scale(const Value& a, double c);
Value neg(const Value& a);
Value affine(const Value& a, double k, double b); // k*a + b elementwise

// Activations and pointwise transforms.
Value relu(const Value& a);
Value softplus(const Value& a);
Value sigmoid(const Value& a);
Value exp_v(const Value& a);
Value log_v(const Value& a);
Value square(const Value& a);

// Linear algebra and reductions.
Value matmul(const Value& a, const Value& b);
Value sum_all(const Value& a);
Value mean_all(const Value& a);
Value sum_rows(const Value& a);  // [N,C] -> [N,1]

// Row-structured ops.
Value softmax_rows(const Value& a);
Value log_softmax_rows(const Value& a);
Value cumsum_exclusive_rows(const Value& a);

// Shape and indexing.
Value reshape(const Value& a, std::vector<std::int64_t> shape);
Value concat_cols(const Value& a, const Value& b);
Value slice_cols(const Value& a, std::int64_t begin, std::int64_t end);
Value gather_rows(const Value& a, std::vector<std::int64_t> rows);
Value scatter_rows(const Value& a, std::vector<std::int64_t> rows, std::int64_t n_out);

// Differentiable bilinear sampling: fmap [H,W,C] (any of the two inputs may
// be a constant), pixels [N,2] as (x, y); clamp-to-border.
Value bilinear(const Value& fmap, const Value& pixels);

// 2D convolution; input [H,W,Cin], weight [kh*kw*Cin, Cout].
Value conv2d(const Value& input, const Value& weight,
             std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad);

// Mean binary cross-entropy of probabilities p in [0,1] against 0/1 targets.
// neg_weight scales the contribution of zero targets (weighted mean).
Value bce_mean(const Value& p, const std::vector<double>& targets, double neg_weight = 1.0);

// Reverse pass from a scalar output. Throws if output is not a scalar.
void backward(const Value& output);

void zero_grad(const std::vector<Value>& params);

// params <- params - lr * (momentum-filtered) grad. Velocity state is keyed
// by node identity and owned by the optimizer.
class SgdOptimizer {
public:
    SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
    void step(const std::vector<Value>& params);
    double lr() const { return lr_; }

private:
    double lr_;
    double momentum_;
    std::vector<std::pair<Node*, Tensor>> velocity_;
};

// Max over sampled coordinates of |analytic - central difference| /
// (|analytic| + |difference| + 1e-12). build_loss must construct a fresh
// scalar graph from the params' current data on every call.
double grad_check(const std::function<Value()>& build_loss, const std::vector<Value>& params,
                  double eps, int samples_per_param, std::uint64_t seed);

// Flat binary checkpoint of named parameter tensors (little-endian f64).
void save_checkpoint(const std::string& path, const std::vector<Value>& params);
void load_checkpoint(const std::string& path, const std::vector<Value>& params);

} // namespace voxocc::ad
