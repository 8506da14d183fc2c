// SPDX-License-Identifier: Apache-2.0
#include "voxocc/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "voxocc/kernels.hpp"

namespace voxocc::ad {

namespace {

std::atomic<std::uint64_t> g_node_counter{0};

void check_finite(const Tensor& t, const std::string& name) {
    for (double v : t.vec()) {
        if (!std::isfinite(v))
            throw std::runtime_error("non-finite value produced by node '" + name + "'");
    }
}

std::shared_ptr<Node> new_node(Tensor data, std::vector<Value> parents,
                               std::function<void(Node&)> backward_fn, std::string name) {
    check_finite(data, name);
    auto n = std::make_shared<Node>();
    n->data = std::move(data);
    n->name = std::move(name);
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
    n->id = g_node_counter.fetch_add(1);
    for (const Value& p : n->parents)
        if (p.requires_grad()) n->requires_grad = true;
    return n;
}

void require_same_shape(const Value& a, const Value& b, const char* op) {
    if (!a.data().same_shape(b.data()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    Tensor::shape_str(a.shape()) + " vs " +
                                    Tensor::shape_str(b.shape()));
}

} // namespace

Value constant(Tensor t, std::string name) {
    auto n = new_node(std::move(t), {}, nullptr, std::move(name));
    n->requires_grad = false;
    return Value(n);
}

Value param(Tensor t, std::string name) {
    auto n = new_node(std::move(t), {}, nullptr, std::move(name));
    n->requires_grad = true;
    return Value(n);
}

Value make_node(Tensor data, std::vector<Value> parents,
                std::function<void(Node&)> backward_fn, std::string name) {
    return Value(new_node(std::move(data), std::move(parents), std::move(backward_fn),
                          std::move(name)));
}

Value add(const Value& a, const Value& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.data();
    const double* pb = b.data().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const Tensor& g = n.grad;
        for (int k = 0; k < 2; ++k) {
            Value& p = n.parents[size_t(k)];
            if (!p.requires_grad()) continue;
            Tensor& pg = p.grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) pg.at(i) += g.at(i);
        }
    }, "add");
}

Value sub(const Value& a, const Value& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.data();
    const double* pb = b.data().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) po[i] -= pb[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const Tensor& g = n.grad;
        if (n.parents[0].requires_grad()) {
            Tensor& pg = n.parents[0].grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) pg.at(i) += g.at(i);
        }
        if (n.parents[1].requires_grad()) {
            Tensor& pg = n.parents[1].grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) pg.at(i) -= g.at(i);
        }
    }, "sub");
}

Value mul(const Value& a, const Value& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.data();
    const double* pb = b.data().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const Tensor& g = n.grad;
        const Tensor& da = n.parents[0].data();
        const Tensor& db = n.parents[1].data();
        if (n.parents[0].requires_grad()) {
            Tensor& pg = n.parents[0].grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) pg.at(i) += g.at(i) * db.at(i);
        }
        if (n.parents[1].requires_grad()) {
            Tensor& pg = n.parents[1].grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) pg.at(i) += g.at(i) * da.at(i);
        }
    }, "mul");
}

Value add_rowvec(const Value& a, const Value& bias) {
    const std::int64_t c = a.cols();
    if (bias.numel() != c)
        throw std::invalid_argument("add_rowvec: bias length mismatch");
    Tensor out = a.data();
    const double* pb = bias.data().data();
    double* po = out.data();
    const std::int64_t n = a.rows();
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t j = 0; j < c; ++j) po[r * c + j] += pb[j];
    return make_node(std::move(out), {a, bias}, [c](Node& nd) {
        const Tensor& g = nd.grad;
        const std::int64_t n = g.rows();
        if (nd.parents[0].requires_grad()) {
            Tensor& pg = nd.parents[0].grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) pg.at(i) += g.at(i);
        }
        if (nd.parents[1].requires_grad()) {
            Tensor& pg = nd.parents[1].grad();
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t j = 0; j < c; ++j) pg.at(j) += g.at(r * c + j);
        }
    }, "add_rowvec");
}

Value scale_rows(const Value& a, const Value& s) {
    const std::int64_t n = a.rows(), c = a.cols();
    if (s.numel() != n)
        throw std::invalid_argument("scale_rows: scale length mismatch");
    Tensor out = a.data();
    const double* ps = s.data().data();
    double* po = out.data();
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t j = 0; j < c; ++j) po[r * c + j] *= ps[r];
    return make_node(std::move(out), {a, s}, [n, c](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& da = nd.parents[0].data();
        const Tensor& ds = nd.parents[1].data();
        if (nd.parents[0].requires_grad()) {
            Tensor& pg = nd.parents[0].grad();
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t j = 0; j < c; ++j) pg.at(r * c + j) += g.at(r * c + j) * ds.at(r);
        }
        if (nd.parents[1].requires_grad()) {
            Tensor& pg = nd.parents[1].grad();
            for (std::int64_t r = 0; r < n; ++r) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < c; ++j) acc += g.at(r * c + j) * da.at(r * c + j);
                pg.at(r) += acc;
            }
        }
    }, "scale_rows");
}

namespace {
Value affine_impl(const Value& a, double k, double b, const char* name) {
    Tensor out = a.data();
    for (double& v : out.vec()) v = k * v + b;
    return make_node(std::move(out), {a}, [k](Node& n) {
        if (!n.parents[0].requires_grad()) return;
        Tensor& pg = n.parents[0].grad();
        const Tensor& g = n.grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) pg.at(i) += k * g.at(i);
    }, name);
}
} // namespace

Value scale(const Value& a, double c) { return affine_impl(a, c, 0.0, "scale"); }
Value neg(const Value& a) { return affine_impl(a, -1.0, 0.0, "neg"); }
Value affine(const Value& a, double k, double b) { return affine_impl(a, k, b, "affine"); }

namespace {
Value pointwise(const Value& a, double (*fwd)(double), double (*dfd)(double, double),
                const char* name) {
    Tensor out = a.data();
    for (double& v : out.vec()) v = fwd(v);
    return make_node(std::move(out), {a}, [dfd](Node& n) {
        if (!n.parents[0].requires_grad()) return;
        Tensor& pg = n.parents[0].grad();
        const Tensor& g = n.grad;
        const Tensor& x = n.parents[0].data();
        const Tensor& y = n.data;
        for (std::int64_t i = 0; i < g.numel(); ++i)
            pg.at(i) += g.at(i) * dfd(x.at(i), y.at(i));
    }, name);
}

double sigmoid_stable(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}
} // namespace

Value relu(const Value& a) {
    return pointwise(a, [](double x) { return x > 0.0 ? x : 0.0; },
                     [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Value softplus(const Value& a) {
    return pointwise(a,
                     [](double x) {
                         if (x > 30.0) return x;
                         if (x < -30.0) return std::exp(x);
                         return std::log1p(std::exp(x));
                     },
                     [](double x, double) { return sigmoid_stable(x); }, "softplus");
}

Value sigmoid(const Value& a) {
    return pointwise(a, [](double x) { return sigmoid_stable(x); },
                     [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Value exp_v(const Value& a) {
    return pointwise(a, [](double x) { return std::exp(x); },
                     [](double, double y) { return y; }, "exp");
}

Value log_v(const Value& a) {
    return pointwise(a, [](double x) { return std::log(x); },
                     [](double x, double) { return 1.0 / x; }, "log");
}

Value square(const Value& a) {
    return pointwise(a, [](double x) { return x * x; },
                     [](double x, double) { return 2.0 * x; }, "square");
}

Value matmul(const Value& a, const Value& b) {
    const std::int64_t m = a.rows(), k = a.cols();
    if (b.rows() != k)
        throw std::invalid_argument("matmul: inner dimension mismatch");
    const std::int64_t n = b.cols();
    Tensor out({m, n});
    kernels::gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    return make_node(std::move(out), {a, b}, [m, k, n](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& da = nd.parents[0].data();
        const Tensor& db = nd.parents[1].data();
        if (nd.parents[0].requires_grad())
            kernels::gemm_nt(g.data(), db.data(), nd.parents[0].grad().data(), m, n, k);
        if (nd.parents[1].requires_grad())
            kernels::gemm_tn(da.data(), g.data(), nd.parents[1].grad().data(), m, k, n);
    }, "matmul");
}

Value sum_all(const Value& a) {
    double acc = 0.0;
    for (double v : a.data().vec()) acc += v;
    return make_node(Tensor::scalar(acc), {a}, [](Node& n) {
        if (!n.parents[0].requires_grad()) return;
        Tensor& pg = n.parents[0].grad();
        const double g = n.grad.at(0);
        for (std::int64_t i = 0; i < pg.numel(); ++i) pg.at(i) += g;
    }, "sum_all");
}

Value mean_all(const Value& a) {
    const std::int64_t n = a.numel();
    double acc = 0.0;
    for (double v : a.data().vec()) acc += v;
    return make_node(Tensor::scalar(acc / double(n)), {a}, [n](Node& nd) {
        if (!nd.parents[0].requires_grad()) return;
        Tensor& pg = nd.parents[0].grad();
        const double g = nd.grad.at(0) / double(n);
        for (std::int64_t i = 0; i < pg.numel(); ++i) pg.at(i) += g;
    }, "mean_all");
}

Value sum_rows(const Value& a) {
    const std::int64_t n = a.rows(), c = a.cols();
    Tensor out({n, 1});
    for (std::int64_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < c; ++j) acc += a.data().at(r * c + j);
        out.at(r) = acc;
    }
    return make_node(std::move(out), {a}, [n, c](Node& nd) {
        if (!nd.parents[0].requires_grad()) return;
        Tensor& pg = nd.parents[0].grad();
        const Tensor& g = nd.grad;
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t j = 0; j < c; ++j) pg.at(r * c + j) += g.at(r);
    }, "sum_rows");
}

Value softmax_rows(const Value& a) {
    const std::int64_t n = a.rows(), c = a.cols();
    Tensor out = a.data();
    for (std::int64_t r = 0; r < n; ++r) {
        double* row = out.data() + r * c;
        double mx = row[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        for (std::int64_t j = 0; j < c; ++j) row[j] /= denom;
    }
    return make_node(std::move(out), {a}, [n, c](Node& nd) {
        if (!nd.parents[0].requires_grad()) return;
        Tensor& pg = nd.parents[0].grad();
        const Tensor& g = nd.grad;
        const Tensor& s = nd.data;
        for (std::int64_t r = 0; r < n; ++r) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < c; ++j) dot += g.at(r * c + j) * s.at(r * c + j);
            for (std::int64_t j = 0; j < c; ++j)
                pg.at(r * c + j) += s.at(r * c + j) * (g.at(r * c + j) - dot);
        }
    }, "softmax_rows");
}

Value log_softmax_rows(const Value& a) {
    const std::int64_t n = a.rows(), c = a.cols();
    Tensor out = a.data();
    for (std::int64_t r = 0; r < n; ++r) {
        double* row = out.data() + r * c;
        double mx = row[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::int64_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        const double lse = mx + std::log(denom);
        for (std::int64_t j = 0; j < c; ++j) row[j] -= lse;
    }
    return make_node(std::move(out), {a}, [n, c](Node& nd) {
        if (!nd.parents[0].requires_grad()) return;
        Tensor& pg = nd.parents[0].grad();
        const Tensor& g = nd.grad;
        const Tensor& ls = nd.data;
        for (std::int64_t r = 0; r < n; ++r) {
            double gsum = 0.0;
            for (std::int64_t j = 0; j < c; ++j) gsum += g.at(r * c + j);
            for (std::int64_t j = 0; j < c; ++j)
                pg.at(r * c + j) += g.at(r * c + j) - std::exp(ls.at(r * c + j)) * gsum;
        }
    }, "log_softmax_rows");
}

Value cumsum_exclusive_rows(const Value& a) {
    const std::int64_t n = a.rows(), c = a.cols();
    Tensor out({n, c});
    for (std::int64_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            out.at(r * c + j) = acc;
            acc += a.data().at(r * c + j);
        }
    }
    return make_node(std::move(out), {a}, [n, c](Node& nd) {
        if (!nd.parents[0].requires_grad()) return;
        Tensor& pg = nd.parents[0].grad();
        const Tensor& g = nd.grad;
        for (std::int64_t r = 0; r < n; ++r) {
            double acc = 0.0;
            for (std::int64_t j = c - 1; j >= 0; --j) {
                pg.at(r * c + j) += acc;
                acc += g.at(r * c + j);
            }
        }
    }, "cumsum_exclusive_rows");
}

Value reshape(const Value& a, std::vector<std::int64_t> shape) {
    if (Tensor::numel_of(shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(shape, a.data().vec());
    return make_node(std::move(out), {a}, [](Node& n) {
        if (!n.parents[0].requires_grad()) return;
        Tensor& pg = n.parents[0].grad();
        const Tensor& g = n.grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) pg.at(i) += g.at(i);
    }, "reshape");
}

Value concat_cols(const Value& a, const Value& b) {
    const std::int64_t n = a.rows();
    if (b.rows() != n)
        throw std::invalid_argument("concat_cols: row count mismatch");
    const std::int64_t ca = a.cols(), cb = b.cols();
    Tensor out({n, ca + cb});
    for (std::int64_t r = 0; r < n; ++r) {
        std::copy_n(a.data().data() + r * ca, ca, out.data() + r * (ca + cb));
        std::copy_n(b.data().data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
    }
    return make_node(std::move(out), {a, b}, [n, ca, cb](Node& nd) {
        const Tensor& g = nd.grad;
        if (nd.parents[0].requires_grad()) {
            Tensor& pg = nd.parents[0].grad();
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t j = 0; j < ca; ++j) pg.at(r * ca + j) += g.at(r * (ca + cb) + j);
        }
        if (nd.parents[1].requires_grad()) {
            Tensor& pg = nd.parents[1].grad();
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t j = 0; j < cb; ++j)
                    pg.at(r * cb + j) += g.at(r * (ca + cb) + ca + j);
        }
    }, "concat_cols");
}

Value slice_cols(const Value& a, std::int64_t begin, std::int64_t end) {
    const std::int64_t n = a.rows(), c = a.cols();
    if (begin < 0 || end > c || begin >= end)
        throw std::invalid_argument("slice_cols: bad range");
    const std::int64_t sc = end - begin;
    Tensor out({n, sc});
    for (std::int64_t r = 0; r < n; ++r)
        std::copy_n(a.data().data() + r * c + begin, sc, out.data() + r * sc);
    return make_node(std::move(out), {a}, [n, c, begin, sc](Node& nd) {
        if (!nd.parents[0].requires_grad()) return;
        Tensor& pg = nd.parents[0].grad();
        const Tensor& g = nd.grad;
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t j = 0; j < sc; ++j) pg.at(r * c + begin + j) += g.at(r * sc + j);
    }, "slice_cols");
}

Value gather_rows(const Value& a, std::vector<std::int64_t> rows) {
    const std::int64_t c = a.cols();
    const std::int64_t n = std::int64_t(rows.size());
    for (std::int64_t r : rows)
        if (r < 0 || r >= a.rows()) throw std::invalid_argument("gather_rows: index out of range");
    Tensor out({n, c});
    kernels::gather_rows(a.data().data(), c, rows.data(), n, out.data());
    auto idx = std::make_shared<std::vector<std::int64_t>>(std::move(rows));
    return make_node(std::move(out), {a}, [idx, c, n](Node& nd) {
        if (!nd.parents[0].requires_grad()) return;
        kernels::scatter_add_rows(nd.grad.data(), c, idx->data(), n,
                                  nd.parents[0].grad().data());
    }, "gather_rows");
}

Value scatter_rows(const Value& a, std::vector<std::int64_t> rows, std::int64_t n_out) {
    const std::int64_t c = a.cols();
    const std::int64_t n = a.rows();
    if (std::int64_t(rows.size()) != n)
        throw std::invalid_argument("scatter_rows: index count mismatch");
    for (std::int64_t r : rows)
        if (r < 0 || r >= n_out) throw std::invalid_argument("scatter_rows: index out of range");
    Tensor out({n_out, c});
    kernels::scatter_add_rows(a.data().data(), c, rows.data(), n, out.data());
    auto idx = std::make_shared<std::vector<std::int64_t>>(std::move(rows));
    return make_node(std::move(out), {a}, [idx, c, n](Node& nd) {
        if (!nd.parents[0].requires_grad()) return;
        Tensor& pg = nd.parents[0].grad();
        const Tensor& g = nd.grad;
        for (std::int64_t i = 0; i < n; ++i) {
            const double* gsrc = g.data() + (*idx)[size_t(i)] * c;
            double* dst = pg.data() + i * c;
            for (std::int64_t j = 0; j < c; ++j) dst[j] += gsrc[j];
        }
    }, "scatter_rows");
}

Value bilinear(const Value& fmap, const Value& pixels) {
    if (fmap.data().ndim() != 3)
        throw std::invalid_argument("bilinear: feature map must be [H,W,C]");
    if (pixels.cols() != 2)
        throw std::invalid_argument("bilinear: pixels must be [N,2]");
    const std::int64_t h = fmap.data().dim(0), w = fmap.data().dim(1), c = fmap.data().dim(2);
    const std::int64_t n = pixels.rows();
    Tensor out({n, c});
    kernels::bilinear_batch(fmap.data().data(), h, w, c, pixels.data().data(), n, out.data());
    return make_node(std::move(out), {fmap, pixels}, [h, w, c, n](Node& nd) {
        const bool need_f = nd.parents[0].requires_grad();
        const bool need_p = nd.parents[1].requires_grad();
        kernels::bilinear_batch_backward(
            nd.parents[0].data().data(), h, w, c, nd.parents[1].data().data(), n,
            nd.grad.data(), need_f ? nd.parents[0].grad().data() : nullptr,
            need_p ? nd.parents[1].grad().data() : nullptr);
    }, "bilinear");
}

Value conv2d(const Value& input, const Value& weight,
             std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad) {
    if (input.data().ndim() != 3)
        throw std::invalid_argument("conv2d: input must be [H,W,Cin]");
    const std::int64_t h = input.data().dim(0), w = input.data().dim(1),
                       cin = input.data().dim(2);
    if (weight.rows() != kh * kw * cin)
        throw std::invalid_argument("conv2d: weight rows must be kh*kw*cin");
    const std::int64_t cout = weight.cols();
    const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t wo = (w + 2 * pad - kw) / stride + 1;
    Tensor out({ho, wo, cout});
    kernels::conv2d(input.data().data(), h, w, cin, weight.data().data(), kh, kw, cout,
                    stride, pad, out.data());
    return make_node(std::move(out), {input, weight}, [=](Node& nd) {
        const bool need_in = nd.parents[0].requires_grad();
        const bool need_w = nd.parents[1].requires_grad();
        kernels::conv2d_backward(nd.parents[0].data().data(), h, w, cin,
                                 nd.parents[1].data().data(), kh, kw, cout, stride, pad,
                                 nd.grad.data(),
                                 need_in ? nd.parents[0].grad().data() : nullptr,
                                 need_w ? nd.parents[1].grad().data() : nullptr);
    }, "conv2d");
}

Value bce_mean(const Value& p, const std::vector<double>& targets, double neg_weight) {
    const std::int64_t n = p.numel();
    if (std::int64_t(targets.size()) != n)
        throw std::invalid_argument("bce_mean: target count mismatch");
    constexpr double kEps = 1e-12;
    double acc = 0.0, weight_sum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double pc = std::clamp(p.data().at(i), kEps, 1.0 - kEps);
        const double y = targets[size_t(i)];
        const double w = y > 0.5 ? 1.0 : neg_weight;
        acc -= w * (y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
        weight_sum += w;
    }
    weight_sum = std::max(weight_sum, kEps);
    auto tgt = std::make_shared<std::vector<double>>(targets);
    return make_node(Tensor::scalar(acc / weight_sum), {p},
                     [tgt, n, neg_weight, weight_sum](Node& nd) {
        if (!nd.parents[0].requires_grad()) return;
        Tensor& pg = nd.parents[0].grad();
        const Tensor& pd = nd.parents[0].data();
        const double g = nd.grad.at(0) / weight_sum;
        for (std::int64_t i = 0; i < n; ++i) {
            const double pv = pd.at(i);
            if (pv <= kEps || pv >= 1.0 - kEps) continue;
            const double y = (*tgt)[size_t(i)];
            const double w = y > 0.5 ? 1.0 : neg_weight;
            pg.at(i) += g * w * (-(y / pv) + (1.0 - y) / (1.0 - pv));
        }
    }, "bce_mean");
}

void backward(const Value& output) {
    if (!output.defined() || output.numel() != 1)
        throw std::invalid_argument("backward: output must be a defined scalar");
    // Iterative post-order DFS; each node visited exactly once.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(output.node(), 0);
    seen.insert(output.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next].node();
            ++next;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    output.node()->ensure_grad().fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->requires_grad) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

void zero_grad(const std::vector<Value>& params) {
    for (const Value& p : params) {
        p.node()->grad_ready = false;
        p.node()->grad = Tensor();
    }
}

void SgdOptimizer::step(const std::vector<Value>& params) {
    for (const Value& p : params) {
        if (!p.node()->grad_ready) continue;
        Tensor& g = p.node()->grad;
        Tensor& d = p.node()->data;
        if (momentum_ != 0.0) {
            Tensor* vel = nullptr;
            for (auto& [node, t] : velocity_)
                if (node == p.node()) { vel = &t; break; }
            if (!vel) {
                velocity_.emplace_back(p.node(), Tensor::zeros(d.shape()));
                vel = &velocity_.back().second;
            }
            for (std::int64_t i = 0; i < d.numel(); ++i) {
                vel->at(i) = momentum_ * vel->at(i) + g.at(i);
                d.at(i) -= lr_ * vel->at(i);
            }
        } else {
            for (std::int64_t i = 0; i < d.numel(); ++i) d.at(i) -= lr_ * g.at(i);
        }
    }
}

double grad_check(const std::function<Value()>& build_loss, const std::vector<Value>& params,
                  double eps, int samples_per_param, std::uint64_t seed) {
    zero_grad(params);
    Value loss = build_loss();
    backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const Value& p : params)
        analytic.push_back(p.node()->grad_ready ? p.node()->grad : Tensor::zeros(p.shape()));

    // Central differences cannot resolve derivatives below the rounding noise
    // of the loss itself (a few thousand ulps across a deep graph, divided by
    // eps). When both the analytic and the difference value sit under that
    // floor the coordinate is unverifiable at this eps and genuinely tiny; a
    // wrong backward with a real derivative would surface through fd.
    const double noise_floor =
        1e5 * std::numeric_limits<double>::epsilon() * std::abs(loss.scalar()) / eps;

    Rng rng(seed);
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& d = params[pi].node()->data;
        const std::int64_t n = d.numel();
        const int samples = int(std::min<std::int64_t>(n, samples_per_param));
        for (int s = 0; s < samples; ++s) {
            const std::int64_t i = samples == int(n)
                                       ? s
                                       : std::int64_t(rng.uniform_index(std::uint64_t(n)));
            const double orig = d.at(i);
            d.at(i) = orig + eps;
            const double fp = build_loss().scalar();
            d.at(i) = orig - eps;
            const double fm = build_loss().scalar();
            d.at(i) = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double an = analytic[pi].at(i);
            const double err =
                (std::abs(an) < noise_floor && std::abs(fd) < noise_floor)
                    ? 0.0
                    : std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-12);
            worst = std::max(worst, err);
        }
    }
    zero_grad(params);
    return worst;
}

namespace {
constexpr char kCheckpointMagic[8] = {'V', 'O', 'X', 'P', 'R', 'M', '0', '1'};

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
} // namespace

void save_checkpoint(const std::string& path, const std::vector<Value>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 8);
    write_pod(os, std::uint32_t(params.size()));
    for (const Value& p : params) {
        const std::string& name = p.name();
        write_pod(os, std::uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        write_pod(os, std::uint32_t(p.shape().size()));
        for (std::int64_t d : p.shape()) write_pod(os, std::uint64_t(d));
        os.write(reinterpret_cast<const char*>(p.data().data()),
                 std::streamsize(p.numel() * 8));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, const std::vector<Value>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("bad checkpoint magic: " + path);
    std::uint32_t count = 0;
    read_pod(is, count);
    std::vector<std::pair<std::string, Tensor>> arrays;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = 0;
        read_pod(is, name_len);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        std::uint32_t ndim = 0;
        read_pod(is, ndim);
        std::vector<std::int64_t> shape(ndim);
        for (auto& d : shape) {
            std::uint64_t v = 0;
            read_pod(is, v);
            d = std::int64_t(v);
        }
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * 8));
        if (!is) throw std::runtime_error("truncated checkpoint: " + path);
        arrays.emplace_back(std::move(name), std::move(t));
    }
    for (const Value& p : params) {
        bool found = false;
        for (auto& [name, t] : arrays) {
            if (name != p.name()) continue;
            if (!t.same_shape(p.data()))
                throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
            p.node()->data = t;
            found = true;
            break;
        }
        if (!found)
            throw std::runtime_error("checkpoint missing parameter '" + p.name() + "'");
    }
}

} // namespace voxocc::ad
