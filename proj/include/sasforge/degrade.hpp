#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sasforge/common.hpp"
#include "sasforge/image.hpp"
#include "sasforge/rng.hpp"

namespace sasforge {

// Pseudo-real degradation: anisotropic Gaussian blur (coherent imaging
// resolves the two track directions differently), multiplicative L-look
// speckle, then a contrast gamma. Stands in for the unavailable field data
// domain.
struct DegradeConfig {
    int speckle_looks = 4;          // s = mean of L unit-mean exponential draws
    double blur_sigma_along = 1.2;  // pixels, image y direction
    double blur_sigma_across = 0.6; // pixels, image x direction
    double contrast_gamma = 0.85;
    std::uint64_t seed = 0;

    void validate() const {
        if (speckle_looks < 1) throw ParamError("degrade: speckle_looks must be >= 1");
        if (blur_sigma_along < 0.0 || blur_sigma_across < 0.0)
            throw ParamError("degrade: blur sigmas must be non-negative");
        if (contrast_gamma <= 0.0) throw ParamError("degrade: contrast_gamma must be positive");
    }
};

namespace degrade_detail {

inline std::vector<double> gaussian_taps(double sigma) {
    if (sigma <= 0.0) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        taps[i + radius] = w;
        total += w;
    }
    for (auto& w : taps) w /= total;
    return taps;
}

// Separable blur with clamp-to-edge padding; x pass then y pass.
inline Image blur_anisotropic(const Image& img, double sigma_x, double sigma_y) {
    const auto tx = gaussian_taps(sigma_x);
    const auto ty = gaussian_taps(sigma_y);
    const int rx = static_cast<int>(tx.size()) / 2;
    const int ry = static_cast<int>(ty.size()) / 2;
    Image tmp(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int k = -rx; k <= rx; ++k) {
                const int xs = std::clamp(x + k, 0, img.width - 1);
                acc += tx[k + rx] * img.at(xs, y);
            }
            tmp.at(x, y) = static_cast<float>(acc);
        }
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int k = -ry; k <= ry; ++k) {
                const int ys = std::clamp(y + k, 0, img.height - 1);
                acc += ty[k + ry] * tmp.at(x, ys);
            }
            out.at(x, y) = static_cast<float>(acc);
        }
    return out;
}

}  // namespace degrade_detail

// The multiplicative field alone: per pixel, the mean of L unit-mean
// exponential draws, keyed by (seed, image_index, pixel) so results do not
// depend on processing order.
inline std::vector<double> speckle_field(const DegradeConfig& cfg,
                                         std::uint64_t image_index, int width,
                                         int height) {
    cfg.validate();
    std::vector<double> field(static_cast<std::size_t>(width) * height);
    for (std::size_t p = 0; p < field.size(); ++p) {
        double acc = 0.0;
        for (int l = 0; l < cfg.speckle_looks; ++l) {
            const double u = hash_uniform(cfg.seed ^ 0x73706b6cULL, image_index, p, l);
            acc += -std::log1p(-u);
        }
        field[p] = acc / cfg.speckle_looks;
    }
    return field;
}

inline Image degrade_image(const Image& img, const DegradeConfig& cfg,
                           std::uint64_t image_index) {
    cfg.validate();
    Image out = degrade_detail::blur_anisotropic(img, cfg.blur_sigma_across,
                                                 cfg.blur_sigma_along);
    const auto field = speckle_field(cfg, image_index, img.width, img.height);
    for (std::size_t p = 0; p < out.pixels.size(); ++p) {
        const double v = std::pow(out.pixels[p] * field[p], cfg.contrast_gamma);
        out.pixels[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

}  // namespace sasforge
