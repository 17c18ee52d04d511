#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sasforge/autodiff.hpp"
#include "sasforge/common.hpp"
#include "sasforge/image.hpp"
#include "sasforge/models.hpp"
#include "sasforge/rng.hpp"

namespace sasforge {

// d-dimensional Gaussian fit of a feature set: sample mean and unbiased
// sample covariance (row-major d x d, symmetric by construction).
struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> cov;

    int dim() const { return static_cast<int>(mean.size()); }
};

namespace eval_detail {

inline void require_finite(const FeatureStats& s, const char* who) {
    for (double v : s.mean)
        if (!std::isfinite(v)) throw DataError(std::string(who) + ": non-finite mean");
    for (double v : s.cov)
        if (!std::isfinite(v)) throw DataError(std::string(who) + ": non-finite covariance");
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix. `a` is destroyed;
// eigenvalues return unsorted. When `vectors` is non-null it receives the
// row-major matrix whose COLUMNS are the eigenvectors, matching the
// eigenvalue order. Rotations with |a_pq| below tol*scale/d are skipped, so
// late sweeps cost little.
inline std::vector<double> jacobi_eigenvalues(std::vector<double>& a, int d,
                                              std::vector<double>* vectors,
                                              double tol = 1e-10,
                                              int max_sweeps = 60) {
    if (vectors) {
        vectors->assign(static_cast<std::size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) (*vectors)[static_cast<std::size_t>(i) * d + i] = 1.0;
    }
    double norm = 0.0;
    for (double v : a) norm += v * v;
    norm = std::sqrt(norm);
    const double stop = tol * std::max(norm, 1.0);
    const double skip = stop / d;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) {
                const double v = a[static_cast<std::size_t>(p) * d + q];
                off += 2.0 * v * v;
            }
        if (std::sqrt(off) <= stop) break;
        if (sweep == max_sweeps - 1)
            throw NumericError("eigendecomposition: no convergence in " +
                               std::to_string(max_sweeps) + " sweeps");

        for (int p = 0; p < d; ++p) {
            for (int q = p + 1; q < d; ++q) {
                const double apq = a[static_cast<std::size_t>(p) * d + q];
                if (std::abs(apq) <= skip) continue;
                const double app = a[static_cast<std::size_t>(p) * d + p];
                const double aqq = a[static_cast<std::size_t>(q) * d + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (int k = 0; k < d; ++k) {
                    if (k == p || k == q) continue;
                    double& akp = a[static_cast<std::size_t>(k) * d + p];
                    double& akq = a[static_cast<std::size_t>(k) * d + q];
                    const double kp = akp, kq = akq;
                    akp = c * kp - s * kq;
                    akq = s * kp + c * kq;
                    a[static_cast<std::size_t>(p) * d + k] = akp;
                    a[static_cast<std::size_t>(q) * d + k] = akq;
                }
                a[static_cast<std::size_t>(p) * d + p] =
                    c * c * app - 2.0 * s * c * apq + s * s * aqq;
                a[static_cast<std::size_t>(q) * d + q] =
                    s * s * app + 2.0 * s * c * apq + c * c * aqq;
                a[static_cast<std::size_t>(p) * d + q] = 0.0;
                a[static_cast<std::size_t>(q) * d + p] = 0.0;

                if (vectors) {
                    for (int k = 0; k < d; ++k) {
                        double& vkp = (*vectors)[static_cast<std::size_t>(k) * d + p];
                        double& vkq = (*vectors)[static_cast<std::size_t>(k) * d + q];
                        const double kp = vkp, kq = vkq;
                        vkp = c * kp - s * kq;
                        vkq = s * kp + c * kq;
                    }
                }
            }
        }
    }
    std::vector<double> values(d);
    for (int i = 0; i < d; ++i) values[i] = a[static_cast<std::size_t>(i) * d + i];
    return values;
}

// c = a * b for row-major d x d matrices.
inline std::vector<double> matmul_dd(const std::vector<double>& a,
                                     const std::vector<double>& b, int d) {
    std::vector<double> c(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double aik = a[static_cast<std::size_t>(i) * d + k];
            if (aik == 0.0) continue;
            const double* brow = &b[static_cast<std::size_t>(k) * d];
            double* crow = &c[static_cast<std::size_t>(i) * d];
            for (int j = 0; j < d; ++j) crow[j] += aik * brow[j];
        }
    return c;
}

// Symmetric PSD square root via eigendecomposition, negative eigenvalues
// clamped to zero.
inline std::vector<double> sqrtm_psd(std::vector<double> a, int d) {
    std::vector<double> vecs;
    const auto vals = jacobi_eigenvalues(a, d, &vecs);
    // out = sum_k sqrt(max(l_k,0)) v_k v_k^T
    std::vector<double> out(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> col(d);
    for (int k = 0; k < d; ++k) {
        const double r = std::sqrt(std::max(vals[k], 0.0));
        if (r == 0.0) continue;
        for (int i = 0; i < d; ++i) col[i] = vecs[static_cast<std::size_t>(i) * d + k];
        for (int i = 0; i < d; ++i) {
            const double ri = r * col[i];
            if (ri == 0.0) continue;
            double* orow = &out[static_cast<std::size_t>(i) * d];
            for (int j = 0; j < d; ++j) orow[j] += ri * col[j];
        }
    }
    return out;
}

}  // namespace eval_detail

// Encode a batch of images with the feature extractor; one row of 1024
// features per image.
inline std::vector<std::vector<double>> extract_features(
    const std::vector<Image>& images, const Autoencoder<float>& ae) {
    if (images.empty()) throw DataError("extract_features: no images");
    const int size = ae.image_size;
    std::vector<std::vector<double>> rows;
    rows.reserve(images.size());
    NoGradGuard guard;
    const int batch = 16;
    for (std::size_t start = 0; start < images.size(); start += batch) {
        const int n = static_cast<int>(std::min<std::size_t>(batch, images.size() - start));
        Tensor<float> x({n, 1, size, size});
        for (int i = 0; i < n; ++i) {
            const Image& img = images[start + i];
            if (img.width != size || img.height != size)
                throw ShapeError("extract_features: image " +
                                 std::to_string(start + i) + " is " +
                                 std::to_string(img.width) + "x" +
                                 std::to_string(img.height) + ", extractor expects " +
                                 std::to_string(size));
            std::copy(img.pixels.begin(), img.pixels.end(),
                      x.data.begin() + static_cast<std::size_t>(i) * size * size);
        }
        const Tensor<float> phi = ae.encode(Var<float>(std::move(x), false)).value();
        const int d = phi.shape[1];
        for (int i = 0; i < n; ++i)
            rows.emplace_back(phi.data.begin() + static_cast<std::size_t>(i) * d,
                              phi.data.begin() + static_cast<std::size_t>(i + 1) * d);
    }
    return rows;
}

inline FeatureStats feature_stats_of(const std::vector<std::vector<double>>& rows) {
    if (rows.size() < 2) throw DataError("feature_stats: need at least 2 samples");
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows[0].size());
    FeatureStats s;
    s.mean.assign(d, 0.0);
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != d)
            throw ShapeError("feature_stats: ragged feature rows");
        for (int j = 0; j < d; ++j) s.mean[j] += r[j];
    }
    for (double& v : s.mean) v /= n;

    s.cov.assign(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> centered(d);
    for (const auto& r : rows) {
        for (int j = 0; j < d; ++j) centered[j] = r[j] - s.mean[j];
        for (int i = 0; i < d; ++i) {
            const double ci = centered[i];
            if (ci == 0.0) continue;
            double* row = &s.cov[static_cast<std::size_t>(i) * d];
            for (int j = i; j < d; ++j) row[j] += ci * centered[j];
        }
    }
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            const double v = s.cov[static_cast<std::size_t>(i) * d + j] / (n - 1);
            s.cov[static_cast<std::size_t>(i) * d + j] = v;
            s.cov[static_cast<std::size_t>(j) * d + i] = v;
        }
    return s;
}

inline FeatureStats feature_stats(const std::vector<Image>& images,
                                  const Autoencoder<float>& ae) {
    if (images.size() < 2) throw DataError("feature_stats: need at least 2 images");
    return feature_stats_of(extract_features(images, ae));
}

// Fréchet distance between the two Gaussian fits:
//   ||m_a - m_b||^2 + Tr(C_a + C_b - 2 (C_b^{1/2} C_a C_b^{1/2})^{1/2})
// Small negative results from rounding are clamped to zero.
inline double fid(const FeatureStats& a, const FeatureStats& b) {
    using namespace eval_detail;
    const int d = a.dim();
    if (b.dim() != d || a.cov.size() != static_cast<std::size_t>(d) * d ||
        b.cov.size() != static_cast<std::size_t>(d) * d)
        throw ShapeError("fid: dimension mismatch (" + std::to_string(d) + " vs " +
                         std::to_string(b.dim()) + ")");
    require_finite(a, "fid");
    require_finite(b, "fid");

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = a.mean[i] - b.mean[i];
        mean_term += diff * diff;
    }
    double trace_a = 0.0, trace_b = 0.0;
    for (int i = 0; i < d; ++i) {
        trace_a += a.cov[static_cast<std::size_t>(i) * d + i];
        trace_b += b.cov[static_cast<std::size_t>(i) * d + i];
    }

    const auto sb = sqrtm_psd(b.cov, d);
    auto m = matmul_dd(sb, matmul_dd(a.cov, sb, d), d);
    // enforce exact symmetry before the eigensolve; the product is symmetric
    // only up to rounding
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double v = 0.5 * (m[static_cast<std::size_t>(i) * d + j] +
                                    m[static_cast<std::size_t>(j) * d + i]);
            m[static_cast<std::size_t>(i) * d + j] = v;
            m[static_cast<std::size_t>(j) * d + i] = v;
        }
    double m_norm = 0.0;
    for (double v : m) m_norm += v * v;
    m_norm = std::sqrt(m_norm);
    const auto vals = jacobi_eigenvalues(m, d, nullptr);
    // Rank-deficient covariances (fewer samples than features) leave most of
    // the spectrum at zero, where the eigensolver reports noise on the order
    // of its convergence threshold. The square root amplifies that noise, so
    // drop anything below the solver's resolution instead of summing it.
    const double lam_floor = 1e-10 * std::max(m_norm, 1.0);
    double cross = 0.0;
    for (double v : vals)
        if (v > lam_floor) cross += std::sqrt(v);

    const double result = mean_term + trace_a + trace_b - 2.0 * cross;
    if (result < -1e-6 * std::max(1.0, mean_term + trace_a + trace_b))
        throw NumericError("fid: distance " + std::to_string(result) +
                           " below the rounding floor");
    return std::max(result, 0.0);
}

enum class NnMetric { ImageL2, Phi };

// Exact k-nearest-neighbors by linear scan; ties broken toward the lower
// index. Returns (index, distance) pairs, ascending by distance.
inline std::vector<std::pair<int, double>> nearest_neighbors(
    const Image& query, const std::vector<Image>& dataset, int k, NnMetric metric,
    const Autoencoder<float>* ae = nullptr) {
    if (k < 1 || k > static_cast<int>(dataset.size()))
        throw ParamError("nearest_neighbors: k must be in [1, " +
                         std::to_string(dataset.size()) + "]");
    std::vector<double> dist(dataset.size());
    if (metric == NnMetric::ImageL2) {
        for (std::size_t i = 0; i < dataset.size(); ++i)
            dist[i] = image_l2_distance(query, dataset[i]);
    } else {
        if (!ae)
            throw ConfigError("nearest_neighbors: feature metric needs an extractor");
        std::vector<Image> all;
        all.reserve(dataset.size() + 1);
        all.push_back(query);
        for (const auto& img : dataset) all.push_back(img);
        const auto rows = extract_features(all, *ae);
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < rows[0].size(); ++j) {
                const double diff = rows[0][j] - rows[i + 1][j];
                acc += diff * diff;
            }
            dist[i] = std::sqrt(acc);
        }
    }
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
        if (dist[x] != dist[y]) return dist[x] < dist[y];
        return x < y;
    });
    std::vector<std::pair<int, double>> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) out.emplace_back(order[i], dist[order[i]]);
    return out;
}

struct Embedding2D {
    std::vector<std::array<double, 2>> points;
    std::vector<double> kl_history;
};

// Exact t-SNE. Per-point Gaussian bandwidths are bisected until the
// conditional distribution's entropy matches log(perplexity) within 1e-4;
// the embedding descends the KL divergence with early exaggeration (12x for
// the first 250 iterations), momentum 0.5 (0.8 after iteration 250), and a
// learning rate of 200 that decays linearly over the second half.
inline Embedding2D tsne(const std::vector<std::vector<double>>& features,
                        double perplexity, int iterations, std::uint64_t seed) {
    const int n = static_cast<int>(features.size());
    if (n < 4) throw ParamError("tsne: need at least 4 points");
    if (perplexity <= 0.0 || perplexity >= (n - 1) / 3.0)
        throw ParamError("tsne: perplexity must be in (0, (N-1)/3)");
    if (iterations < 1) throw ParamError("tsne: iterations must be positive");
    const int d = static_cast<int>(features[0].size());
    for (const auto& r : features)
        if (static_cast<int>(r.size()) != d)
            throw ShapeError("tsne: ragged feature rows");

    std::vector<double> d2(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (int c = 0; c < d; ++c) {
                const double diff = features[i][c] - features[j][c];
                acc += diff * diff;
            }
            d2[static_cast<std::size_t>(i) * n + j] = acc;
            d2[static_cast<std::size_t>(j) * n + i] = acc;
        }

    // conditional distributions at the requested perplexity
    const double target_h = std::log(perplexity);
    std::vector<double> p(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> row(n);
    for (int i = 0; i < n; ++i) {
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double h = 0.0;
        for (int it = 0; it < 100; ++it) {
            double sum = 0.0, weighted = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) { row[j] = 0.0; continue; }
                const double w = std::exp(-beta * d2[static_cast<std::size_t>(i) * n + j]);
                row[j] = w;
                sum += w;
                weighted += w * d2[static_cast<std::size_t>(i) * n + j];
            }
            if (sum <= 0.0) { h = 0.0; }
            else h = std::log(sum) + beta * weighted / sum;
            if (std::abs(h - target_h) < 1e-4) break;
            if (h > target_h) { lo = beta; beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi); }
            else { hi = beta; beta = 0.5 * (beta + lo); }
        }
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += row[j];
        for (int j = 0; j < n; ++j)
            p[static_cast<std::size_t>(i) * n + j] = (j == i || sum <= 0.0) ? 0.0 : row[j] / sum;
    }
    // symmetrize
    std::vector<double> pj(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            pj[static_cast<std::size_t>(i) * n + j] =
                std::max((p[static_cast<std::size_t>(i) * n + j] +
                          p[static_cast<std::size_t>(j) * n + i]) /
                             (2.0 * n),
                         1e-12);

    Pcg32 rng(seed, 0x75e);
    std::vector<std::array<double, 2>> y(n), inc(n, {0.0, 0.0}), grad(n);
    std::vector<std::array<double, 2>> gain(n, {1.0, 1.0});
    for (auto& pt : y) { pt[0] = 1e-4 * rng.gaussian(); pt[1] = 1e-4 * rng.gaussian(); }

    std::vector<double> w(static_cast<std::size_t>(n) * n, 0.0);
    Embedding2D out;
    out.kl_history.reserve(iterations);

    for (int t = 1; t <= iterations; ++t) {
        const double exaggeration = (t <= 250) ? 12.0 : 1.0;
        double z = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double dx = y[i][0] - y[j][0];
                const double dy = y[i][1] - y[j][1];
                const double wij = 1.0 / (1.0 + dx * dx + dy * dy);
                w[static_cast<std::size_t>(i) * n + j] = wij;
                w[static_cast<std::size_t>(j) * n + i] = wij;
                z += 2.0 * wij;
            }

        double kl = 0.0;
        for (int i = 0; i < n; ++i) {
            grad[i] = {0.0, 0.0};
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const double pij = pj[static_cast<std::size_t>(i) * n + j];
                const double wij = w[static_cast<std::size_t>(i) * n + j];
                const double qij = std::max(wij / z, 1e-12);
                const double coef = 4.0 * (exaggeration * pij - qij) * wij;
                grad[i][0] += coef * (y[i][0] - y[j][0]);
                grad[i][1] += coef * (y[i][1] - y[j][1]);
                kl += pij * std::log(pij / qij);
            }
        }
        out.kl_history.push_back(kl);

        const double momentum = (t <= 250) ? 0.5 : 0.8;
        const int half = iterations / 2;
        double lr = 200.0;
        if (t > half && half > 0)
            lr = 200.0 * (1.0 - 0.9 * static_cast<double>(t - half) / (iterations - half));

        double cx = 0.0, cy = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < 2; ++c) {
                // per-coordinate gain: grow while gradient and velocity
                // disagree, shrink while they agree (reference convention)
                if ((grad[i][c] > 0.0) != (inc[i][c] > 0.0))
                    gain[i][c] += 0.2;
                else
                    gain[i][c] = std::max(gain[i][c] * 0.8, 0.01);
                inc[i][c] = momentum * inc[i][c] - lr * gain[i][c] * grad[i][c];
                y[i][c] += inc[i][c];
            }
            cx += y[i][0];
            cy += y[i][1];
        }
        cx /= n; cy /= n;
        for (int i = 0; i < n; ++i) { y[i][0] -= cx; y[i][1] -= cy; }
    }

    for (const auto& pt : y)
        if (!std::isfinite(pt[0]) || !std::isfinite(pt[1]))
            throw NumericError("tsne: embedding diverged");
    out.points = std::move(y);
    return out;
}

// Integer shift of b's content relative to a, found as the argmax of the
// zero-padded cross-correlation of the mean-subtracted images. Ties prefer
// the smaller displacement.
inline std::pair<int, int> cross_correlation_peak(const Image& a, const Image& b,
                                                  int max_shift = 0) {
    if (!a.same_size(b)) throw ShapeError("cross_correlation_peak: size mismatch");
    if (max_shift <= 0) max_shift = std::min(a.width, a.height) / 2;
    const double mean_a = a.mean(), mean_b = b.mean();
    int best_dx = 0, best_dy = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int dy = -max_shift; dy <= max_shift; ++dy)
        for (int dx = -max_shift; dx <= max_shift; ++dx) {
            double acc = 0.0;
            const int x0 = std::max(0, -dx), x1 = std::min(a.width, a.width - dx);
            const int y0 = std::max(0, -dy), y1 = std::min(a.height, a.height - dy);
            for (int yy = y0; yy < y1; ++yy)
                for (int xx = x0; xx < x1; ++xx)
                    acc += (a.at(xx, yy) - mean_a) * (b.at(xx + dx, yy + dy) - mean_b);
            const bool better =
                acc > best ||
                (acc == best && dx * dx + dy * dy < best_dx * best_dx + best_dy * best_dy);
            if (better) { best = acc; best_dx = dx; best_dy = dy; }
        }
    return {best_dx, best_dy};
}

}  // namespace sasforge
