#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sasforge/common.hpp"
#include "sasforge/tensor.hpp"

namespace sasforge {

// ---------------------------------------------------------------------------
// Define-by-run reverse-mode differentiation. Each op eagerly computes its
// value and, while recording is on, attaches per-input pullback closures.
// Pullbacks are themselves written in terms of recorded ops, so running
// backward with create_graph produces a differentiable gradient graph; that
// is what lets the gradient-norm penalty be differentiated a second time.
//
// Ownership: closures capture their *input* handles only, never the output,
// so the graph is a DAG of shared_ptrs with no cycles. Node ids increase in
// creation order; reverse accumulation walks ids downward, which is a valid
// topological order because inputs always exist before outputs.
// ---------------------------------------------------------------------------

namespace ad_detail {
inline std::uint64_t& node_counter() {
    thread_local std::uint64_t c = 0;
    return c;
}
inline bool& recording_flag() {
    thread_local bool on = true;
    return on;
}
}  // namespace ad_detail

// Disables graph recording in a scope (inference passes, plain backward).
class NoGradGuard {
  public:
    NoGradGuard() : prev_(ad_detail::recording_flag()) {
        ad_detail::recording_flag() = false;
    }
    ~NoGradGuard() { ad_detail::recording_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

template <typename T>
class Var;

template <typename T>
struct VarNode {
    Tensor<T> value;
    bool requires_grad = false;
    std::uint64_t id = 0;

    struct Edge {
        std::shared_ptr<VarNode<T>> parent;
        std::function<Var<T>(const Var<T>&)> pullback;
    };
    std::vector<Edge> edges;
};

template <typename T>
class Var {
  public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false)
        : node_(std::make_shared<VarNode<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
        node_->id = ++ad_detail::node_counter();
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value_mut() { return node_->value; }
    const std::vector<int>& shape() const { return node_->value.shape; }
    std::int64_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    std::uint64_t id() const { return node_->id; }

    std::shared_ptr<VarNode<T>> node() const { return node_; }

  private:
    std::shared_ptr<VarNode<T>> node_;
};

namespace ad_detail {

template <typename T>
Var<T> make_result(Tensor<T> value,
                   std::vector<typename VarNode<T>::Edge> edges) {
    const bool track = recording_flag() && !edges.empty();
    Var<T> out(std::move(value), track);
    if (track) out.node()->edges = std::move(edges);
    return out;
}

// Builds the edge list from (input, pullback) pairs, dropping inputs that do
// not require gradients.
template <typename T>
struct EdgeBuilder {
    std::vector<typename VarNode<T>::Edge> edges;

    void add(const Var<T>& in, std::function<Var<T>(const Var<T>&)> pb) {
        if (recording_flag() && in.requires_grad())
            edges.push_back({in.node(), std::move(pb)});
    }
};

template <typename T>
void check_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace ad_detail

template <typename T>
Var<T> constant(Tensor<T> value) {
    NoGradGuard g;
    return Var<T>(std::move(value), false);
}

// --------------------------- elementwise ops -------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    ad_detail::check_same_shape("add", a, b);
    Tensor<T> out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [](const Var<T>& g) { return g; });
    eb.add(b, [](const Var<T>& g) { return g; });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T c);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    ad_detail::check_same_shape("sub", a, b);
    Tensor<T> out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [](const Var<T>& g) { return g; });
    eb.add(b, [](const Var<T>& g) { return mul_scalar(g, T(-1)); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    ad_detail::check_same_shape("mul", a, b);
    Tensor<T> out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [b](const Var<T>& g) { return mul(g, b); });
    eb.add(b, [a](const Var<T>& g) { return mul(g, a); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T c) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v *= c;
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [c](const Var<T>& g) { return mul_scalar(g, c); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v += c;
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [](const Var<T>& g) { return g; });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

// Gradient masked by a constant factor tensor (relu/leaky_relu pullbacks).
template <typename T>
Var<T> mul_const(const Var<T>& a, std::shared_ptr<const Tensor<T>> factor) {
    if (a.shape() != factor->shape)
        throw ShapeError("mul_const: shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(factor->shape));
    Tensor<T> out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= (*factor)[i];
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [factor](const Var<T>& g) { return mul_const(g, factor); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a.value();
    auto mask = std::make_shared<Tensor<T>>(out.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const bool pos = out[i] > T(0);  // derivative at 0 defined as 0
        (*mask)[i] = pos ? T(1) : T(0);
        if (!pos) out[i] = T(0);
    }
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [mask](const Var<T>& g) {
        return mul_const(g, std::shared_ptr<const Tensor<T>>(mask));
    });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T alpha = T(0.2)) {
    Tensor<T> out = a.value();
    auto mask = std::make_shared<Tensor<T>>(out.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const bool pos = out[i] > T(0);
        (*mask)[i] = pos ? T(1) : alpha;
        if (!pos) out[i] *= alpha;
    }
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [mask](const Var<T>& g) {
        return mul_const(g, std::shared_ptr<const Tensor<T>>(mask));
    });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> tanh_op(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v = std::tanh(v);
    ad_detail::EdgeBuilder<T> eb;
    // Recomputed from the input so the closure never owns its own output.
    eb.add(a, [a](const Var<T>& g) {
        Var<T> t = tanh_op(a);
        Var<T> sech2 = add_scalar(mul_scalar(mul(t, t), T(-1)), T(1));
        return mul(g, sech2);
    });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> square(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v *= v;
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [a](const Var<T>& g) { return mul(g, mul_scalar(a, T(2))); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

// Elementwise power with a constant exponent; inputs must be positive for
// non-integer exponents.
template <typename T>
Var<T> pow_scalar(const Var<T>& a, T p) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v = std::pow(v, p);
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [a, p](const Var<T>& g) {
        return mul(g, mul_scalar(pow_scalar(a, p - T(1)), p));
    });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> sqrt_op(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v = std::sqrt(v);
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [a](const Var<T>& g) {
        return mul(g, mul_scalar(pow_scalar(a, T(-0.5)), T(0.5)));
    });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

// ------------------------- shape and reductions ----------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int> new_shape) {
    if (Tensor<T>::count(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    Tensor<T> out(new_shape, a.value().data);
    ad_detail::EdgeBuilder<T> eb;
    const std::vector<int> old_shape = a.shape();
    eb.add(a, [old_shape](const Var<T>& g) { return reshape(g, old_shape); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> broadcast_full(const Var<T>& a, const std::vector<int>& shape);

template <typename T>
Var<T> sum(const Var<T>& a) {
    T s = 0;
    for (const auto& v : a.value().data) s += v;
    ad_detail::EdgeBuilder<T> eb;
    const std::vector<int> shape = a.shape();
    eb.add(a, [shape](const Var<T>& g) { return broadcast_full(g, shape); });
    return ad_detail::make_result(Tensor<T>::scalar(s), std::move(eb.edges));
}

// Scalar broadcast to an arbitrary shape; adjoint of sum.
template <typename T>
Var<T> broadcast_full(const Var<T>& a, const std::vector<int>& shape) {
    if (a.numel() != 1)
        throw ShapeError("broadcast_full: source must be scalar, got " +
                         shape_str(a.shape()));
    Tensor<T> out = Tensor<T>::full(shape, a.value()[0]);
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [](const Var<T>& g) { return sum(g); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Var<T> row_broadcast(const Var<T>& a, int cols);

// (N,K) -> (N): sums each row.
template <typename T>
Var<T> row_sum(const Var<T>& a) {
    if (a.shape().size() != 2)
        throw ShapeError("row_sum: expected 2-d, got " + shape_str(a.shape()));
    const int n = a.shape()[0], k = a.shape()[1];
    Tensor<T> out({n});
    for (int i = 0; i < n; ++i) {
        T s = 0;
        for (int j = 0; j < k; ++j) s += a.value()[static_cast<std::int64_t>(i) * k + j];
        out[i] = s;
    }
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [k](const Var<T>& g) { return row_broadcast(g, k); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

// (N) -> (N,cols): repeats each entry along a new trailing dim.
template <typename T>
Var<T> row_broadcast(const Var<T>& a, int cols) {
    if (a.shape().size() != 1)
        throw ShapeError("row_broadcast: expected 1-d, got " + shape_str(a.shape()));
    const int n = a.shape()[0];
    Tensor<T> out({n, cols});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cols; ++j)
            out[static_cast<std::int64_t>(i) * cols + j] = a.value()[i];
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [](const Var<T>& g) { return row_sum(g); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

// Per-sample Euclidean norm: (N, ...) -> (N).
template <typename T>
Var<T> l2_norm_per_sample(const Var<T>& a) {
    if (a.shape().empty())
        throw ShapeError("l2_norm_per_sample: scalar input");
    const int n = a.shape()[0];
    const int rest = static_cast<int>(a.numel() / n);
    return sqrt_op(row_sum(square(reshape(a, {n, rest}))));
}

// ----------------------------- linear algebra ------------------------------

template <typename T>
Var<T> transpose(const Var<T>& a) {
    Tensor<T> out = kernel::transpose2d(a.value());
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [](const Var<T>& g) { return transpose(g); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = kernel::matmul(a.value(), b.value());
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [b](const Var<T>& g) { return matmul(g, transpose(b)); });
    eb.add(b, [a](const Var<T>& g) { return matmul(transpose(a), g); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> col_sum(const Var<T>& a);

// y = x + b with b repeated over rows; adjoint pair with col_sum.
template <typename T>
Var<T> add_rowvec(const Var<T>& a, const Var<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 1 ||
        a.shape()[1] != b.shape()[0])
        throw ShapeError("add_rowvec: " + shape_str(a.shape()) + " + " +
                         shape_str(b.shape()));
    const int n = a.shape()[0], k = a.shape()[1];
    Tensor<T> out = a.value();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            out[static_cast<std::int64_t>(i) * k + j] += b.value()[j];
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [](const Var<T>& g) { return g; });
    eb.add(b, [](const Var<T>& g) { return col_sum(g); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

// (N,K) -> (K): sums over rows.
template <typename T>
Var<T> col_sum(const Var<T>& a) {
    if (a.shape().size() != 2)
        throw ShapeError("col_sum: expected 2-d, got " + shape_str(a.shape()));
    const int n = a.shape()[0], k = a.shape()[1];
    Tensor<T> out({k});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            out[j] += a.value()[static_cast<std::int64_t>(i) * k + j];
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [n](const Var<T>& g) {
        // adjoint of summing rows: repeat over n rows
        Var<T> gt = reshape(g, {1, static_cast<int>(g.numel())});
        Var<T> ones = constant(Tensor<T>::full({n, 1}, T(1)));
        return matmul(ones, gt);
    });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

// Fully connected layer: x (N,din), w (dout,din), b (dout).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    if (x.shape().size() != 2 || w.shape().size() != 2 ||
        x.shape()[1] != w.shape()[1])
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
    return add_rowvec(matmul(x, transpose(w)), b);
}

// ------------------------------ conv family --------------------------------

template <typename T>
Var<T> conv2d_transpose(const Var<T>& g, const Var<T>& w, int stride, int pad,
                        int out_h, int out_w);
template <typename T>
Var<T> conv2d_wgrad_op(const Var<T>& x, const Var<T>& g, int kh, int kw,
                       int stride, int pad);

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride,
              int pad) {
    const Tensor<T>* bias = b.defined() ? &b.value() : nullptr;
    Tensor<T> out = kernel::conv2d_forward(x.value(), w.value(), bias, stride, pad);
    ad_detail::EdgeBuilder<T> eb;
    const int in_h = x.shape()[2], in_w = x.shape()[3];
    const int kh = w.shape()[2], kw = w.shape()[3];
    eb.add(x, [w, stride, pad, in_h, in_w](const Var<T>& g) {
        return conv2d_transpose(g, w, stride, pad, in_h, in_w);
    });
    eb.add(w, [x, kh, kw, stride, pad](const Var<T>& g) {
        return conv2d_wgrad_op(x, g, kh, kw, stride, pad);
    });
    if (b.defined())
        eb.add(b, [](const Var<T>& g) {
            // bias gradient: sum over batch and spatial positions
            const int n = g.shape()[0], c = g.shape()[1];
            const int hw = g.shape()[2] * g.shape()[3];
            Var<T> flat = reshape(g, {n * c, hw});
            Var<T> per_nc = row_sum(flat);  // (n*c)
            return col_sum(reshape(per_nc, {n, c}));
        });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int pad) {
    return conv2d(x, w, Var<T>(), stride, pad);
}

template <typename T>
Var<T> conv2d_transpose(const Var<T>& g, const Var<T>& w, int stride, int pad,
                        int out_h, int out_w) {
    Tensor<T> out = kernel::conv2d_transpose_forward(g.value(), w.value(), stride,
                                                     pad, out_h, out_w);
    ad_detail::EdgeBuilder<T> eb;
    const int kh = w.shape()[2], kw = w.shape()[3];
    eb.add(g, [w, stride, pad](const Var<T>& gz) {
        return conv2d(gz, w, Var<T>(), stride, pad);
    });
    eb.add(w, [g, kh, kw, stride, pad](const Var<T>& gz) {
        return conv2d_wgrad_op(gz, g, kh, kw, stride, pad);
    });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> conv2d_wgrad_op(const Var<T>& x, const Var<T>& g, int kh, int kw,
                       int stride, int pad) {
    Tensor<T> out = kernel::conv2d_wgrad(x.value(), g.value(), kh, kw, stride, pad);
    ad_detail::EdgeBuilder<T> eb;
    const int in_h = x.shape()[2], in_w = x.shape()[3];
    eb.add(x, [g, stride, pad, in_h, in_w](const Var<T>& gv) {
        return conv2d_transpose(g, gv, stride, pad, in_h, in_w);
    });
    eb.add(g, [x, stride, pad](const Var<T>& gv) {
        return conv2d(x, gv, Var<T>(), stride, pad);
    });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

// ---------------------------- pooling / resize -----------------------------

template <typename T>
Var<T> gather_op(const Var<T>& x, std::shared_ptr<const std::vector<std::int32_t>> idx,
                 std::vector<int> out_shape);

template <typename T>
Var<T> scatter_op(const Var<T>& g, std::shared_ptr<const std::vector<std::int32_t>> idx,
                  std::vector<int> out_shape) {
    Tensor<T> out = kernel::scatter_by_index(g.value(), *idx, out_shape);
    ad_detail::EdgeBuilder<T> eb;
    const std::vector<int> g_shape = g.shape();
    eb.add(g, [idx, g_shape](const Var<T>& gg) { return gather_op(gg, idx, g_shape); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> gather_op(const Var<T>& x, std::shared_ptr<const std::vector<std::int32_t>> idx,
                 std::vector<int> out_shape) {
    Tensor<T> out = kernel::gather_by_index(x.value(), *idx, out_shape);
    ad_detail::EdgeBuilder<T> eb;
    const std::vector<int> x_shape = x.shape();
    eb.add(x, [idx, x_shape](const Var<T>& g) { return scatter_op(g, idx, x_shape); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> maxpool2x2(const Var<T>& a) {
    auto idx = std::make_shared<std::vector<std::int32_t>>();
    Tensor<T> out = kernel::maxpool2x2_forward(a.value(), *idx);
    ad_detail::EdgeBuilder<T> eb;
    const std::vector<int> in_shape = a.shape();
    std::shared_ptr<const std::vector<std::int32_t>> cidx = idx;
    eb.add(a, [cidx, in_shape](const Var<T>& g) {
        return scatter_op(g, cidx, in_shape);
    });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> downsum2x(const Var<T>& a);

template <typename T>
Var<T> nearest_upsample2x(const Var<T>& a) {
    Tensor<T> out = kernel::upsample2x_forward(a.value());
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [](const Var<T>& g) { return downsum2x(g); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

template <typename T>
Var<T> downsum2x(const Var<T>& a) {
    Tensor<T> out = kernel::downsum2x_forward(a.value());
    ad_detail::EdgeBuilder<T> eb;
    eb.add(a, [](const Var<T>& g) { return nearest_upsample2x(g); });
    return ad_detail::make_result(std::move(out), std::move(eb.edges));
}

// Per-sample, per-channel normalization over spatial positions.
template <typename T>
Var<T> instance_norm2d(const Var<T>& x, T eps = T(1e-5)) {
    if (x.shape().size() != 4)
        throw ShapeError("instance_norm2d: expected NCHW, got " + shape_str(x.shape()));
    const int n = x.shape()[0], c = x.shape()[1];
    const int hw = x.shape()[2] * x.shape()[3];
    const std::vector<int> orig = x.shape();
    Var<T> flat = reshape(x, {n * c, hw});
    Var<T> m = mul_scalar(row_sum(flat), T(1) / static_cast<T>(hw));
    Var<T> centered = sub(flat, row_broadcast(m, hw));
    Var<T> v = mul_scalar(row_sum(square(centered)), T(1) / static_cast<T>(hw));
    Var<T> inv = pow_scalar(add_scalar(v, eps), T(-0.5));
    return reshape(mul(centered, row_broadcast(inv, hw)), orig);
}

// ------------------------------- backward ----------------------------------

// Reverse accumulation from a scalar output. Returns one gradient per wrt
// entry; a wrt tensor the output does not depend on gets a zero gradient.
// With create_graph the returned gradients carry their own graph and can be
// differentiated again.
template <typename T>
std::vector<Var<T>> backward(const Var<T>& output, const std::vector<Var<T>>& wrt,
                             bool create_graph = false) {
    if (output.numel() != 1)
        throw ParamError("backward: output must be scalar, got shape " +
                         shape_str(output.shape()));

    // Collect the reachable subgraph.
    std::unordered_map<std::uint64_t, std::shared_ptr<VarNode<T>>> reach;
    {
        std::vector<std::shared_ptr<VarNode<T>>> stack{output.node()};
        while (!stack.empty()) {
            auto n = stack.back();
            stack.pop_back();
            if (reach.count(n->id)) continue;
            reach.emplace(n->id, n);
            for (const auto& e : n->edges) stack.push_back(e.parent);
        }
    }
    std::vector<std::uint64_t> order;
    order.reserve(reach.size());
    for (const auto& [id, _] : reach) order.push_back(id);
    std::sort(order.begin(), order.end(), std::greater<>());

    // Mark nodes from which some wrt entry is reachable; pullbacks into any
    // other subgraph are dead work (frozen networks, detached inputs).
    // Parents always carry smaller ids, so one ascending pass settles it.
    std::unordered_map<std::uint64_t, char> needed;
    needed.reserve(reach.size());
    {
        std::unordered_set<std::uint64_t> wrt_ids;
        for (const auto& v : wrt) wrt_ids.insert(v.id());
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const auto& node = reach.at(*it);
            char flag = wrt_ids.count(*it) ? 1 : 0;
            if (!flag)
                for (const auto& e : node->edges)
                    if (needed[e.parent->id]) {
                        flag = 1;
                        break;
                    }
            needed[*it] = flag;
        }
    }

    const bool prev = ad_detail::recording_flag();
    ad_detail::recording_flag() = create_graph;

    std::unordered_map<std::uint64_t, Var<T>> adjoint;
    adjoint.emplace(output.id(), constant(Tensor<T>::scalar(T(1))));

    for (const std::uint64_t id : order) {
        auto it = adjoint.find(id);
        if (it == adjoint.end()) continue;  // no path from the output
        const Var<T> g = it->second;
        const auto& node = reach.at(id);
        for (const auto& e : node->edges) {
            if (!needed[e.parent->id]) continue;
            Var<T> contrib = e.pullback(g);
            auto at = adjoint.find(e.parent->id);
            if (at == adjoint.end())
                adjoint.emplace(e.parent->id, std::move(contrib));
            else
                at->second = add(at->second, contrib);
        }
    }

    std::vector<Var<T>> grads;
    grads.reserve(wrt.size());
    for (const Var<T>& v : wrt) {
        auto it = adjoint.find(v.id());
        if (it != adjoint.end())
            grads.push_back(it->second);
        else
            grads.push_back(constant(Tensor<T>(v.shape())));
    }

    ad_detail::recording_flag() = prev;
    return grads;
}

// --------------------------------- Adam ------------------------------------

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::int64_t t = 0;
};

// Standard bias-corrected Adam. Betas default to GAN-friendly values.
template <typename T>
void adam_step(std::vector<Var<T>>& params, const std::vector<Var<T>>& grads,
               AdamState<T>& state, T lr, T beta1 = T(0.5), T beta2 = T(0.9),
               T eps = T(1e-8)) {
    if (params.size() != grads.size())
        throw ShapeError("adam_step: " + std::to_string(params.size()) +
                         " params vs " + std::to_string(grads.size()) + " grads");
    if (state.t == 0 && state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.shape());
            state.v.emplace_back(p.shape());
        }
    }
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " params, got " + std::to_string(params.size()));
    state.t += 1;
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(state.t));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = params[i].value_mut();
        const Tensor<T>& g = grads[i].value();
        if (p.shape != g.shape)
            throw ShapeError("adam_step: param " + shape_str(p.shape) + " vs grad " +
                             shape_str(g.shape));
        Tensor<T>& m = state.m[i];
        Tensor<T>& v = state.v[i];
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            m[j] = beta1 * m[j] + (T(1) - beta1) * g[j];
            v[j] = beta2 * v[j] + (T(1) - beta2) * g[j] * g[j];
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace sasforge
