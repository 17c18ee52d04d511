#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sasforge/autodiff.hpp"
#include "sasforge/common.hpp"
#include "sasforge/rng.hpp"
#include "sasforge/tensor.hpp"

namespace sasforge {

// ---------------------------------------------------------------------------
// The four networks. Parameters are leaf Vars held by name; copies of the
// handles share storage, so optimizer updates through parameters() are seen
// by the model. Weights start Glorot-uniform (±sqrt(6/(fan_in+fan_out))),
// biases at zero.
// ---------------------------------------------------------------------------

template <typename T>
using NamedParam = std::pair<std::string, Var<T>>;

namespace model_detail {

template <typename T>
Tensor<T> glorot(std::vector<int> shape, int fan_in, int fan_out, Pcg32& rng,
                 double scale = 1.0) {
    const double a = scale * std::sqrt(6.0 / (fan_in + fan_out));
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-a, a));
    return t;
}

template <typename T>
Var<T> conv_weight(int co, int ci, int k, Pcg32& rng, double scale = 1.0) {
    return Var<T>(glorot<T>({co, ci, k, k}, ci * k * k, co * k * k, rng, scale),
                  true);
}

template <typename T>
Var<T> linear_weight(int dout, int din, Pcg32& rng) {
    return Var<T>(glorot<T>({dout, din}, din, dout, rng), true);
}

template <typename T>
Var<T> zero_bias(int n) {
    return Var<T>(Tensor<T>({n}), true);
}

template <typename T>
void check_input(const Var<T>& x, int size, const char* who) {
    if (x.shape().size() != 4 || x.shape()[1] != 1 || x.shape()[2] != size ||
        x.shape()[3] != size)
        throw ShapeError(std::string(who) + ": expected (N,1," +
                         std::to_string(size) + "," + std::to_string(size) +
                         "), got " + shape_str(x.shape()));
}

// Exact clamp to [0,1], differentiable except at the two kinks.
template <typename T>
Var<T> clamp01(const Var<T>& y) {
    return sub(relu(y), relu(add_scalar(y, T(-1))));
}

}  // namespace model_detail

// Convolutional autoencoder whose bottleneck is the 1024-d feature map used
// for feature-space distances. Encoder: four (conv3x3 -> ReLU -> maxpool2x2)
// blocks, 1->16->32->64->64 channels, then a linear map to 1024 features.
// Decoder mirrors it with nearest-neighbor upsampling.
template <typename T>
struct Autoencoder {
    static constexpr int kFeatureDim = 1024;
    static constexpr int kChannels[4] = {16, 32, 64, 64};

    int image_size = 64;
    std::vector<NamedParam<T>> params;

    static Autoencoder make(int image_size, std::uint64_t seed) {
        if (image_size % 16 != 0 || image_size < 16)
            throw ParamError("autoencoder: image size must be a multiple of 16");
        using namespace model_detail;
        Autoencoder ae;
        ae.image_size = image_size;
        Pcg32 rng(seed, 0xae);
        const int spatial = image_size / 16;
        const int flat = kChannels[3] * spatial * spatial;

        int ci = 1;
        for (int b = 0; b < 4; ++b) {
            const int co = kChannels[b];
            ae.params.emplace_back("enc" + std::to_string(b + 1) + ".w",
                                   conv_weight<T>(co, ci, 3, rng));
            ae.params.emplace_back("enc" + std::to_string(b + 1) + ".b",
                                   zero_bias<T>(co));
            ci = co;
        }
        ae.params.emplace_back("enc_fc.w", linear_weight<T>(kFeatureDim, flat, rng));
        ae.params.emplace_back("enc_fc.b", zero_bias<T>(kFeatureDim));
        ae.params.emplace_back("dec_fc.w", linear_weight<T>(flat, kFeatureDim, rng));
        ae.params.emplace_back("dec_fc.b", zero_bias<T>(flat));
        const int dec_plan[5] = {kChannels[3], kChannels[2], kChannels[1],
                                 kChannels[0], 1};
        for (int b = 0; b < 4; ++b) {
            ae.params.emplace_back("dec" + std::to_string(b + 1) + ".w",
                                   conv_weight<T>(dec_plan[b + 1], dec_plan[b], 3, rng));
            ae.params.emplace_back("dec" + std::to_string(b + 1) + ".b",
                                   zero_bias<T>(dec_plan[b + 1]));
        }
        return ae;
    }

    const Var<T>& p(const std::string& name) const {
        for (const auto& [n, v] : params)
            if (n == name) return v;
        throw ParamError("autoencoder: no parameter named " + name);
    }

    // (N,1,S,S) -> (N,1024)
    Var<T> encode(const Var<T>& x) const {
        using namespace model_detail;
        check_input(x, image_size, "autoencoder.encode");
        Var<T> h = x;
        for (int b = 1; b <= 4; ++b) {
            h = conv2d(h, p("enc" + std::to_string(b) + ".w"),
                       p("enc" + std::to_string(b) + ".b"), 1, 1);
            h = maxpool2x2(relu(h));
        }
        const int n = h.shape()[0];
        const int flat = static_cast<int>(h.numel() / n);
        return linear(reshape(h, {n, flat}), p("enc_fc.w"), p("enc_fc.b"));
    }

    // (N,1024) -> (N,1,S,S)
    Var<T> decode(const Var<T>& phi) const {
        using namespace model_detail;
        if (phi.shape().size() != 2 || phi.shape()[1] != kFeatureDim)
            throw ShapeError("autoencoder.decode: expected (N,1024), got " +
                             shape_str(phi.shape()));
        const int n = phi.shape()[0];
        const int spatial = image_size / 16;
        Var<T> h = linear(phi, p("dec_fc.w"), p("dec_fc.b"));
        h = reshape(h, {n, kChannels[3], spatial, spatial});
        for (int b = 1; b <= 4; ++b) {
            h = nearest_upsample2x(h);
            h = relu(conv2d(h, p("dec" + std::to_string(b) + ".w"),
                            p("dec" + std::to_string(b) + ".b"), 1, 1));
        }
        return h;
    }

    Var<T> reconstruct(const Var<T>& x) const { return decode(encode(x)); }

    std::vector<Var<T>> parameters() const {
        std::vector<Var<T>> out;
        out.reserve(params.size());
        for (const auto& [n, v] : params) out.push_back(v);
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t c = 0;
        for (const auto& [n, v] : params) c += v.numel();
        return c;
    }
};

// Image-to-image refiner: two stride-2 downsampling convs, R residual
// blocks, two nearest-upsample+conv stages, and a final 3x3 conv producing a
// correction added onto the input before clamping to [0,1]. The final conv
// starts at a tenth of the usual scale, so the initial map is close to the
// identity on its input.
template <typename T>
struct Generator {
    int image_size = 64;
    int ngf = 16;          // width of the first downsampling conv
    int res_blocks = 4;    // desk-scale default; 6 at full scale
    bool use_instance_norm = false;
    std::vector<NamedParam<T>> params;

    static Generator make(int image_size, std::uint64_t seed, int res_blocks = 4,
                          int ngf = 16, bool use_instance_norm = false) {
        if (image_size % 4 != 0 || image_size < 8)
            throw ParamError("generator: image size must be a multiple of 4");
        if (res_blocks < 1) throw ParamError("generator: need at least 1 residual block");
        using namespace model_detail;
        Generator g;
        g.image_size = image_size;
        g.ngf = ngf;
        g.res_blocks = res_blocks;
        g.use_instance_norm = use_instance_norm;
        Pcg32 rng(seed, 0x9e);
        const int c = 2 * ngf;

        g.params.emplace_back("down1.w", conv_weight<T>(ngf, 1, 3, rng));
        g.params.emplace_back("down1.b", zero_bias<T>(ngf));
        g.params.emplace_back("down2.w", conv_weight<T>(c, ngf, 3, rng));
        g.params.emplace_back("down2.b", zero_bias<T>(c));
        for (int r = 0; r < res_blocks; ++r) {
            const std::string base = "res" + std::to_string(r + 1);
            g.params.emplace_back(base + ".w1", conv_weight<T>(c, c, 3, rng));
            g.params.emplace_back(base + ".b1", zero_bias<T>(c));
            g.params.emplace_back(base + ".w2", conv_weight<T>(c, c, 3, rng));
            g.params.emplace_back(base + ".b2", zero_bias<T>(c));
        }
        g.params.emplace_back("up1.w", conv_weight<T>(ngf, c, 3, rng));
        g.params.emplace_back("up1.b", zero_bias<T>(ngf));
        g.params.emplace_back("up2.w", conv_weight<T>(ngf, ngf, 3, rng));
        g.params.emplace_back("up2.b", zero_bias<T>(ngf));
        g.params.emplace_back("out.w", conv_weight<T>(1, ngf, 3, rng, 0.1));
        g.params.emplace_back("out.b", zero_bias<T>(1));
        return g;
    }

    const Var<T>& p(const std::string& name) const {
        for (const auto& [n, v] : params)
            if (n == name) return v;
        throw ParamError("generator: no parameter named " + name);
    }

    // (N,1,S,S) -> (N,1,S,S) in [0,1]
    Var<T> forward(const Var<T>& x) const {
        using namespace model_detail;
        check_input(x, image_size, "generator.forward");
        Var<T> h = relu(conv2d(x, p("down1.w"), p("down1.b"), 2, 1));
        h = relu(conv2d(h, p("down2.w"), p("down2.b"), 2, 1));
        for (int r = 1; r <= res_blocks; ++r) {
            const std::string base = "res" + std::to_string(r);
            Var<T> u = conv2d(h, p(base + ".w1"), p(base + ".b1"), 1, 1);
            if (use_instance_norm) u = instance_norm2d(u);
            u = conv2d(relu(u), p(base + ".w2"), p(base + ".b2"), 1, 1);
            if (use_instance_norm) u = instance_norm2d(u);
            h = add(h, u);
        }
        h = relu(conv2d(nearest_upsample2x(h), p("up1.w"), p("up1.b"), 1, 1));
        h = relu(conv2d(nearest_upsample2x(h), p("up2.w"), p("up2.b"), 1, 1));
        const Var<T> delta = conv2d(h, p("out.w"), p("out.b"), 1, 1);
        return clamp01(add(x, delta));
    }

    std::vector<Var<T>> parameters() const {
        std::vector<Var<T>> out;
        out.reserve(params.size());
        for (const auto& [n, v] : params) out.push_back(v);
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t c = 0;
        for (const auto& [n, v] : params) c += v.numel();
        return c;
    }
};

// Wasserstein critic: stride-2 leaky-ReLU conv stack ending in a linear map
// to one unbounded score per batch item.
template <typename T>
struct Critic {
    int image_size = 64;
    int base_channels = 16;  // desk scale; 64 matches the usual full-size plan
    std::vector<NamedParam<T>> params;

    static Critic make(int image_size, std::uint64_t seed, int base_channels = 16) {
        if (image_size % 8 != 0 || image_size < 16)
            throw ParamError("critic: image size must be a multiple of 8");
        using namespace model_detail;
        Critic d;
        d.image_size = image_size;
        d.base_channels = base_channels;
        Pcg32 rng(seed, 0xd1);
        const int c1 = base_channels, c2 = 2 * base_channels, c3 = 4 * base_channels;
        d.params.emplace_back("conv1.w", conv_weight<T>(c1, 1, 3, rng));
        d.params.emplace_back("conv1.b", zero_bias<T>(c1));
        d.params.emplace_back("conv2.w", conv_weight<T>(c2, c1, 3, rng));
        d.params.emplace_back("conv2.b", zero_bias<T>(c2));
        d.params.emplace_back("conv3.w", conv_weight<T>(c3, c2, 3, rng));
        d.params.emplace_back("conv3.b", zero_bias<T>(c3));
        const int flat = c3 * (image_size / 8) * (image_size / 8);
        d.params.emplace_back("head.w", linear_weight<T>(1, flat, rng));
        d.params.emplace_back("head.b", zero_bias<T>(1));
        return d;
    }

    const Var<T>& p(const std::string& name) const {
        for (const auto& [n, v] : params)
            if (n == name) return v;
        throw ParamError("critic: no parameter named " + name);
    }

    // (N,1,S,S) -> (N,1) unbounded scores
    Var<T> forward(const Var<T>& x) const {
        using namespace model_detail;
        check_input(x, image_size, "critic.forward");
        Var<T> h = leaky_relu(conv2d(x, p("conv1.w"), p("conv1.b"), 2, 1), T(0.2));
        h = leaky_relu(conv2d(h, p("conv2.w"), p("conv2.b"), 2, 1), T(0.2));
        h = leaky_relu(conv2d(h, p("conv3.w"), p("conv3.b"), 2, 1), T(0.2));
        const int n = h.shape()[0];
        const int flat = static_cast<int>(h.numel() / n);
        return linear(reshape(h, {n, flat}), p("head.w"), p("head.b"));
    }

    std::vector<Var<T>> parameters() const {
        std::vector<Var<T>> out;
        out.reserve(params.size());
        for (const auto& [n, v] : params) out.push_back(v);
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t c = 0;
        for (const auto& [n, v] : params) c += v.numel();
        return c;
    }
};

// Latent-to-image baseline: linear projection of a Gaussian latent to a
// small feature map, then four upsample+conv stages to full resolution,
// squashed into [0,1] with a scaled tanh.
template <typename T>
struct BaselineGenerator {
    static constexpr int kLatentDim = 128;

    int image_size = 64;
    std::vector<NamedParam<T>> params;

    static BaselineGenerator make(int image_size, std::uint64_t seed) {
        if (image_size % 16 != 0 || image_size < 16)
            throw ParamError("baseline generator: image size must be a multiple of 16");
        using namespace model_detail;
        BaselineGenerator g;
        g.image_size = image_size;
        Pcg32 rng(seed, 0xb6);
        const int spatial = image_size / 16;
        const int plan[5] = {64, 32, 16, 8, 1};
        g.params.emplace_back("proj.w",
                              linear_weight<T>(plan[0] * spatial * spatial,
                                               kLatentDim, rng));
        g.params.emplace_back("proj.b", zero_bias<T>(plan[0] * spatial * spatial));
        for (int b = 0; b < 4; ++b) {
            g.params.emplace_back("up" + std::to_string(b + 1) + ".w",
                                  conv_weight<T>(plan[b + 1], plan[b], 3, rng));
            g.params.emplace_back("up" + std::to_string(b + 1) + ".b",
                                  zero_bias<T>(plan[b + 1]));
        }
        return g;
    }

    const Var<T>& p(const std::string& name) const {
        for (const auto& [n, v] : params)
            if (n == name) return v;
        throw ParamError("baseline generator: no parameter named " + name);
    }

    // (N,128) -> (N,1,S,S) in [0,1]
    Var<T> generate(const Var<T>& z) const {
        using namespace model_detail;
        if (z.shape().size() != 2 || z.shape()[1] != kLatentDim)
            throw ShapeError("baseline generator: expected (N,128) latents, got " +
                             shape_str(z.shape()));
        const int n = z.shape()[0];
        const int spatial = image_size / 16;
        Var<T> h = linear(z, p("proj.w"), p("proj.b"));
        h = reshape(h, {n, 64, spatial, spatial});
        for (int b = 1; b <= 4; ++b) {
            h = conv2d(nearest_upsample2x(h), p("up" + std::to_string(b) + ".w"),
                       p("up" + std::to_string(b) + ".b"), 1, 1);
            if (b < 4) h = relu(h);
        }
        return mul_scalar(add_scalar(tanh_op(h), T(1)), T(0.5));
    }

    std::vector<Var<T>> parameters() const {
        std::vector<Var<T>> out;
        out.reserve(params.size());
        for (const auto& [n, v] : params) out.push_back(v);
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t c = 0;
        for (const auto& [n, v] : params) c += v.numel();
        return c;
    }
};

}  // namespace sasforge
