#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sasforge/common.hpp"

namespace sasforge {

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major n-d array. Values live in a flat vector; ops treat the
// shape as metadata only.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(count(shape)), T(0));
    }
    Tensor(std::vector<int> s, std::vector<T> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != count(shape))
            throw ShapeError("tensor: data length does not match shape " +
                             shape_str(shape));
    }

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ShapeError("tensor: non-positive dim in " + shape_str(s));
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    T& operator[](std::int64_t i) { return data[static_cast<size_t>(i)]; }
    T operator[](std::int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 4-d accessor for NCHW tensors, test/debug convenience.
    T& at4(int n, int c, int h, int w) {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) *
                        shape[3] +
                    w];
    }
    T at4(int n, int c, int h, int w) const {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) *
                        shape[3] +
                    w];
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

namespace kernel {

inline int ceil_div(int a, int b) {  // b > 0
    return a > 0 ? (a + b - 1) / b : a / b;
}

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

template <typename T>
void check_nchw(const Tensor<T>& x, const char* op) {
    require(x.ndim() == 4, std::string(op) + ": expected a 4-d NCHW tensor, got " +
                               shape_str(x.shape));
}

// y[n,co,oy,ox] = b[co] + sum_{ci,ky,kx} x[n,ci,oy*s+ky-p,ox*s+kx-p] w[co,ci,ky,kx]
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const Tensor<T>* bias, int stride, int pad) {
    check_nchw(x, "conv2d");
    require(w.ndim() == 4, "conv2d: weight must be 4-d, got " + shape_str(w.shape));
    require(x.dim(1) == w.dim(1), "conv2d: input " + shape_str(x.shape) +
                                      " vs weight " + shape_str(w.shape) +
                                      " channel mismatch");
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(pad >= 0, "conv2d: padding must be >= 0");
    const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (bias)
        require(bias->ndim() == 1 && bias->dim(0) == Co,
                "conv2d: bias " + shape_str(bias->shape) + " vs " +
                    std::to_string(Co) + " output channels");
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    require(H + 2 * pad >= kh && W + 2 * pad >= kw,
            "conv2d: kernel " + shape_str(w.shape) + " larger than padded input " +
                shape_str(x.shape));

    Tensor<T> y({N, Co, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
            T* yp = &y.data[((static_cast<size_t>(n) * Co + co) * OH) * OW];
            if (bias) {
                const T bv = bias->data[co];
                for (int i = 0; i < OH * OW; ++i) yp[i] = bv;
            }
            for (int ci = 0; ci < Ci; ++ci) {
                const T* xp = &x.data[((static_cast<size_t>(n) * Ci + ci) * H) * W];
                const T* wp = &w.data[((static_cast<size_t>(co) * Ci + ci) * kh) * kw];
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wv = wp[ky * kw + kx];
                        const int oy_lo = std::max(0, ceil_div(pad - ky, stride));
                        const int oy_hi =
                            std::min(OH - 1, (H - 1 - ky + pad) / stride);
                        const int ox_lo = std::max(0, ceil_div(pad - kx, stride));
                        const int ox_hi =
                            std::min(OW - 1, (W - 1 - kx + pad) / stride);
                        const int cnt = ox_hi - ox_lo + 1;
                        if (cnt <= 0) continue;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const T* xrow = xp + (oy * stride + ky - pad) * W +
                                            (ox_lo * stride + kx - pad);
                            T* yrow = yp + oy * OW + ox_lo;
                            if (stride == 1)
                                for (int i = 0; i < cnt; ++i)
                                    yrow[i] += wv * xrow[i];
                            else
                                for (int i = 0; i < cnt; ++i)
                                    yrow[i] += wv * xrow[i * stride];
                        }
                    }
            }
        }
    return y;
}

// Adjoint of conv2d_forward in its input: scatters g back through the same
// taps. out_h/out_w disambiguate sizes the strided floor collapses together.
template <typename T>
Tensor<T> conv2d_transpose_forward(const Tensor<T>& g, const Tensor<T>& w,
                                   int stride, int pad, int out_h, int out_w) {
    check_nchw(g, "conv2d_transpose");
    require(w.ndim() == 4,
            "conv2d_transpose: weight must be 4-d, got " + shape_str(w.shape));
    require(g.dim(1) == w.dim(0), "conv2d_transpose: input " + shape_str(g.shape) +
                                      " vs weight " + shape_str(w.shape) +
                                      " channel mismatch");
    require(stride >= 1 && pad >= 0 && out_h >= 1 && out_w >= 1,
            "conv2d_transpose: bad geometry");
    const int N = g.dim(0), Co = g.dim(1), OH = g.dim(2), OW = g.dim(3);
    const int Ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    require((out_h + 2 * pad - kh) / stride + 1 == OH &&
                (out_w + 2 * pad - kw) / stride + 1 == OW,
            "conv2d_transpose: grad " + shape_str(g.shape) +
                " inconsistent with output size (" + std::to_string(out_h) + "," +
                std::to_string(out_w) + ")");

    Tensor<T> z({N, Ci, out_h, out_w});
    for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < Ci; ++ci) {
            T* zp = &z.data[((static_cast<size_t>(n) * Ci + ci) * out_h) * out_w];
            for (int co = 0; co < Co; ++co) {
                const T* gp = &g.data[((static_cast<size_t>(n) * Co + co) * OH) * OW];
                const T* wp = &w.data[((static_cast<size_t>(co) * Ci + ci) * kh) * kw];
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wv = wp[ky * kw + kx];
                        const int oy_lo = std::max(0, ceil_div(pad - ky, stride));
                        const int oy_hi =
                            std::min(OH - 1, (out_h - 1 - ky + pad) / stride);
                        const int ox_lo = std::max(0, ceil_div(pad - kx, stride));
                        const int ox_hi =
                            std::min(OW - 1, (out_w - 1 - kx + pad) / stride);
                        const int cnt = ox_hi - ox_lo + 1;
                        if (cnt <= 0) continue;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            T* zrow = zp + (oy * stride + ky - pad) * out_w +
                                      (ox_lo * stride + kx - pad);
                            const T* grow = gp + oy * OW + ox_lo;
                            if (stride == 1)
                                for (int i = 0; i < cnt; ++i)
                                    zrow[i] += wv * grow[i];
                            else
                                for (int i = 0; i < cnt; ++i)
                                    zrow[i * stride] += wv * grow[i];
                        }
                    }
            }
        }
    return z;
}

// Adjoint of conv2d_forward in its weight.
template <typename T>
Tensor<T> conv2d_wgrad(const Tensor<T>& x, const Tensor<T>& g, int kh, int kw,
                       int stride, int pad) {
    check_nchw(x, "conv2d_wgrad");
    check_nchw(g, "conv2d_wgrad");
    require(x.dim(0) == g.dim(0), "conv2d_wgrad: batch mismatch " +
                                      shape_str(x.shape) + " vs " +
                                      shape_str(g.shape));
    const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = g.dim(1), OH = g.dim(2), OW = g.dim(3);
    require((H + 2 * pad - kh) / stride + 1 == OH &&
                (W + 2 * pad - kw) / stride + 1 == OW,
            "conv2d_wgrad: grad " + shape_str(g.shape) +
                " inconsistent with input " + shape_str(x.shape));

    Tensor<T> v({Co, Ci, kh, kw});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
            const T* gp = &g.data[((static_cast<size_t>(n) * Co + co) * OH) * OW];
            for (int ci = 0; ci < Ci; ++ci) {
                const T* xp = &x.data[((static_cast<size_t>(n) * Ci + ci) * H) * W];
                T* vp = &v.data[((static_cast<size_t>(co) * Ci + ci) * kh) * kw];
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const int oy_lo = std::max(0, ceil_div(pad - ky, stride));
                        const int oy_hi =
                            std::min(OH - 1, (H - 1 - ky + pad) / stride);
                        const int ox_lo = std::max(0, ceil_div(pad - kx, stride));
                        const int ox_hi =
                            std::min(OW - 1, (W - 1 - kx + pad) / stride);
                        const int cnt = ox_hi - ox_lo + 1;
                        if (cnt <= 0) continue;
                        T acc = 0;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const T* xrow = xp + (oy * stride + ky - pad) * W +
                                            (ox_lo * stride + kx - pad);
                            const T* grow = gp + oy * OW + ox_lo;
                            if (stride == 1)
                                for (int i = 0; i < cnt; ++i)
                                    acc += grow[i] * xrow[i];
                            else
                                for (int i = 0; i < cnt; ++i)
                                    acc += grow[i] * xrow[i * stride];
                        }
                        vp[ky * kw + kx] += acc;
                    }
            }
        }
    return v;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
            "matmul: " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> c({m, n});
    for (int i = 0; i < m; ++i) {
        T* crow = &c.data[static_cast<size_t>(i) * n];
        const T* arow = &a.data[static_cast<size_t>(i) * k];
        for (int l = 0; l < k; ++l) {
            const T av = arow[l];
            const T* brow = &b.data[static_cast<size_t>(l) * n];
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    require(a.ndim() == 2, "transpose: expected 2-d, got " + shape_str(a.shape));
    const int m = a.dim(0), n = a.dim(1);
    Tensor<T> t({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            t.data[static_cast<size_t>(j) * m + i] = a.data[static_cast<size_t>(i) * n + j];
    return t;
}

template <typename T>
Tensor<T> maxpool2x2_forward(const Tensor<T>& x, std::vector<std::int32_t>& argmax) {
    check_nchw(x, "maxpool2x2");
    require(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
            "maxpool2x2: spatial dims must be even, got " + shape_str(x.shape));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = H / 2, OW = W / 2;
    Tensor<T> y({N, C, OH, OW});
    argmax.assign(y.data.size(), 0);
    size_t o = 0;
    for (int nc = 0; nc < N * C; ++nc) {
        const T* xp = &x.data[static_cast<size_t>(nc) * H * W];
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox, ++o) {
                const int base = (2 * oy) * W + 2 * ox;
                int best = base;
                if (xp[base + 1] > xp[best]) best = base + 1;
                if (xp[base + W] > xp[best]) best = base + W;
                if (xp[base + W + 1] > xp[best]) best = base + W + 1;
                y.data[o] = xp[best];
                argmax[o] = static_cast<std::int32_t>(nc * H * W + best);
            }
    }
    return y;
}

// Scatter pooled gradients back to the winning positions.
template <typename T>
Tensor<T> scatter_by_index(const Tensor<T>& g, const std::vector<std::int32_t>& idx,
                           const std::vector<int>& in_shape) {
    require(static_cast<size_t>(g.numel()) == idx.size(),
            "scatter: gradient " + shape_str(g.shape) + " vs index list of " +
                std::to_string(idx.size()));
    Tensor<T> out(in_shape);
    for (size_t i = 0; i < idx.size(); ++i) out.data[idx[i]] += g.data[i];
    return out;
}

template <typename T>
Tensor<T> gather_by_index(const Tensor<T>& x, const std::vector<std::int32_t>& idx,
                          const std::vector<int>& out_shape) {
    Tensor<T> out(out_shape);
    require(static_cast<size_t>(out.numel()) == idx.size(),
            "gather: output " + shape_str(out_shape) + " vs index list of " +
                std::to_string(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i) out.data[i] = x.data[idx[i]];
    return out;
}

template <typename T>
Tensor<T> upsample2x_forward(const Tensor<T>& x) {
    check_nchw(x, "nearest_upsample2x");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y({N, C, 2 * H, 2 * W});
    for (int nc = 0; nc < N * C; ++nc) {
        const T* xp = &x.data[static_cast<size_t>(nc) * H * W];
        T* yp = &y.data[static_cast<size_t>(nc) * 4 * H * W];
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                const T v = xp[iy * W + ix];
                T* q = yp + (2 * iy) * 2 * W + 2 * ix;
                q[0] = v;
                q[1] = v;
                q[2 * W] = v;
                q[2 * W + 1] = v;
            }
    }
    return y;
}

// Adjoint of nearest 2x upsampling: sums each 2x2 block.
template <typename T>
Tensor<T> downsum2x_forward(const Tensor<T>& x) {
    check_nchw(x, "downsum2x");
    require(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
            "downsum2x: spatial dims must be even, got " + shape_str(x.shape));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y({N, C, H / 2, W / 2});
    for (int nc = 0; nc < N * C; ++nc) {
        const T* xp = &x.data[static_cast<size_t>(nc) * H * W];
        T* yp = &y.data[static_cast<size_t>(nc) * (H / 2) * (W / 2)];
        for (int oy = 0; oy < H / 2; ++oy)
            for (int ox = 0; ox < W / 2; ++ox) {
                const T* q = xp + (2 * oy) * W + 2 * ox;
                yp[oy * (W / 2) + ox] = q[0] + q[1] + q[W] + q[W + 1];
            }
    }
    return y;
}

}  // namespace kernel
}  // namespace sasforge
