#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sasforge/autodiff.hpp"
#include "sasforge/checkpoint.hpp"
#include "sasforge/common.hpp"
#include "sasforge/image.hpp"
#include "sasforge/manifest.hpp"
#include "sasforge/models.hpp"
#include "sasforge/rng.hpp"

namespace sasforge {

// Where the Lipschitz penalty evaluates the critic's input gradient: at the
// generated samples themselves, or at random real/fake interpolates.
enum class GpMode { GeneratedSamples, RealFakeInterpolation };
enum class LipschitzMode { GradientPenalty, WeightClipping };

struct TrainConfig {
    double lr = 0.001;
    int batch_size = 4;
    double lambda_gp = 10.0;
    int n_critic = 5;
    double mu_phi = 1.0;        // feature-penalty weight
    double gamma_report = 1.0;  // feature-distance report threshold, monitored only
    int iterations = 1000;
    std::uint64_t seed = 0;
    GpMode gp_mode = GpMode::GeneratedSamples;
    LipschitzMode lipschitz_mode = LipschitzMode::GradientPenalty;
    double clip_c = 0.01;       // used by weight clipping
    int checkpoint_every = 0;   // 0 disables periodic checkpoints
    std::string checkpoint_dir; // also receives the diagnostic dump on abort

    void validate() const {
        if (lr <= 0.0) throw ParamError("train: lr must be positive");
        if (batch_size < 1) throw ParamError("train: batch_size must be >= 1");
        if (lambda_gp < 0.0) throw ParamError("train: lambda_gp must be >= 0");
        if (n_critic < 1) throw ParamError("train: n_critic must be >= 1");
        if (mu_phi < 0.0) throw ParamError("train: mu_phi must be >= 0");
        if (gamma_report <= 0.0) throw ParamError("train: gamma must be positive");
        if (iterations < 0) throw ParamError("train: iterations must be >= 0");
        if (lipschitz_mode == LipschitzMode::WeightClipping && clip_c <= 0.0)
            throw ParamError("train: clip_c must be positive");
        if (checkpoint_every < 0) throw ParamError("train: checkpoint_every must be >= 0");
    }
};

struct Dataset {
    std::string role;  // "rendered" or "pseudo-real"
    std::vector<Image> images;
    Manifest manifest;  // optional provenance; may be empty

    int image_size() const {
        if (images.empty()) throw DataError("dataset (" + role + "): no images");
        const int w = images[0].width, h = images[0].height;
        if (w != h) throw DataError("dataset (" + role + "): images must be square");
        for (const auto& img : images)
            if (img.width != w || img.height != h)
                throw DataError("dataset (" + role + "): mixed image sizes");
        return w;
    }
};

struct MetricsRow {
    int iter = 0;
    double critic_loss = 0.0;
    double gen_loss = 0.0;
    double gp_term = 0.0;
    double phi_term = 0.0;
    double mean_grad_norm = 0.0;
};

inline void write_metrics_csv(const std::string& path,
                              const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("metrics: cannot open " + path + " for writing");
    out << "iter,critic_loss,gen_loss,gp_term,phi_term,mean_grad_norm\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.iter << ',' << r.critic_loss << ',' << r.gen_loss << ','
            << r.gp_term << ',' << r.phi_term << ',' << r.mean_grad_norm << '\n';
    if (!out) throw DataError("metrics: write failed for " + path);
}

namespace train_detail {

template <typename T>
Tensor<T> make_batch(const std::vector<Image>& images, const std::vector<int>& idx) {
    const int size = images[idx[0]].width;
    Tensor<T> x({static_cast<int>(idx.size()), 1, size, size});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Image& img = images[idx[i]];
        for (std::size_t p = 0; p < img.pixels.size(); ++p)
            x.data[i * img.pixels.size() + p] = static_cast<T>(img.pixels[p]);
    }
    return x;
}

template <typename T>
std::vector<int> sample_indices(Pcg32& rng, int n, int count) {
    std::vector<int> idx(count);
    for (auto& v : idx) v = static_cast<int>(rng.below(static_cast<std::uint32_t>(n)));
    return idx;
}

template <typename T>
double scalar_value(const Var<T>& v) {
    return static_cast<double>(v.value().data[0]);
}

}  // namespace train_detail

// mean over the batch of the critic's per-sample input-gradient norm,
// without building a second-order graph. For monitoring only.
template <typename T, typename Scorer>
double mean_input_grad_norm(const Scorer& score, const Tensor<T>& batch) {
    Var<T> x(batch, true);
    const auto gx = backward(sum(score(x)), std::vector<Var<T>>{x})[0];
    const int n = batch.shape[0];
    const int pixels = static_cast<int>(batch.data.size()) / n;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int p = 0; p < pixels; ++p) {
            const double g = gx.value().data[static_cast<std::size_t>(i) * pixels + p];
            s += g * g;
        }
        acc += std::sqrt(s);
    }
    return acc / n;
}

template <typename T>
struct CriticObjective {
    Var<T> loss;                 // scalar with graph attached
    double wasserstein = 0.0;    // mean D(fake) - mean D(real)
    double gp_term = 0.0;        // lambda * penalty
    double mean_grad_norm = 0.0; // mean per-sample ||d D(xhat)/d xhat||
};

// Critic objective for minimization:
//   mean D(fake) - mean D(real) + lambda * mean (||grad_xhat D(xhat)|| - 1)^2
// The penalty point xhat is the fake batch itself or a per-sample random
// interpolate between real and fake. Scorer maps a (N,1,S,S) Var to (N,1)
// scores; Critic::forward fits, as does any test stand-in.
template <typename T, typename Scorer>
CriticObjective<T> critic_loss(const Scorer& score, const Tensor<T>& real,
                               const Tensor<T>& fake, T lambda_gp, GpMode gp_mode,
                               std::uint64_t eps_seed = 0) {
    if (real.shape != fake.shape)
        throw ShapeError("critic_loss: real batch " + shape_str(real.shape) +
                         " vs fake batch " + shape_str(fake.shape));
    const int n = real.shape[0];
    const int pixels = static_cast<int>(real.data.size()) / n;

    CriticObjective<T> out{};
    const Var<T> real_v(real, false);
    const Var<T> fake_v(fake, false);

    if (lambda_gp == T(0)) {
        out.loss = sub(mean(score(fake_v)), mean(score(real_v)));
        out.wasserstein = train_detail::scalar_value(out.loss);
        return out;
    }

    Tensor<T> hat = fake;
    if (gp_mode == GpMode::RealFakeInterpolation) {
        for (int i = 0; i < n; ++i) {
            const T eps = static_cast<T>(hash_uniform(eps_seed ^ 0x677000ULL, i));
            for (int p = 0; p < pixels; ++p) {
                const std::size_t at = static_cast<std::size_t>(i) * pixels + p;
                hat.data[at] = eps * real.data[at] + (T(1) - eps) * fake.data[at];
            }
        }
    }
    Var<T> hat_v(std::move(hat), true);
    const Var<T> hat_scores = score(hat_v);

    const Var<T> gx =
        backward(sum(hat_scores), std::vector<Var<T>>{hat_v}, true)[0];
    const Var<T> norms = l2_norm_per_sample(reshape(gx, {n, pixels}));
    const Var<T> penalty = mean(square(add_scalar(norms, T(-1))));

    // in generated-samples mode the fake scores are already on hand
    const Var<T> fake_scores =
        (gp_mode == GpMode::GeneratedSamples) ? hat_scores : score(fake_v);
    const Var<T> wdist = sub(mean(fake_scores), mean(score(real_v)));
    out.loss = add(wdist, mul_scalar(penalty, lambda_gp));
    out.wasserstein = train_detail::scalar_value(wdist);
    out.gp_term = lambda_gp * train_detail::scalar_value(penalty);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += static_cast<double>(norms.value().data[i]);
    out.mean_grad_norm = acc / n;
    return out;
}

template <typename T>
struct GeneratorObjective {
    Var<T> loss;
    double adversarial = 0.0;   // -mean D(G(p))
    double phi_term = 0.0;      // mu * mean ||phi(p) - phi(G(p))||^2
    double mean_phi_dist = 0.0; // mean ||phi(p) - phi(G(p))||, reported vs gamma
};

// Generator objective: -mean D(G(p)) + mu * mean ||phi(p) - phi(G(p))||^2.
// The feature extractor is frozen; its parameters receive no updates here.
template <typename T, typename Gen, typename Scorer>
GeneratorObjective<T> generator_loss(const Gen& generate, const Scorer& score,
                                     const Autoencoder<T>& phi,
                                     const Tensor<T>& renders, T mu_phi) {
    const Var<T> p(renders, false);
    const Var<T> fake = generate(p);
    const Var<T> adv = mul_scalar(mean(score(fake)), T(-1));

    GeneratorObjective<T> out{};
    out.adversarial = train_detail::scalar_value(adv);
    if (mu_phi == T(0)) {
        out.loss = adv;
        return out;
    }

    Tensor<T> phi_ref;
    {
        NoGradGuard guard;
        phi_ref = phi.encode(p).value();
    }
    const Var<T> diff = sub(phi.encode(fake), constant(phi_ref));
    const Var<T> dist = l2_norm_per_sample(diff);  // (N,1)
    const Var<T> feat = mean(square(dist));
    out.loss = add(adv, mul_scalar(feat, mu_phi));
    out.phi_term = mu_phi * train_detail::scalar_value(feat);
    out.mean_phi_dist = train_detail::scalar_value(mean(dist));
    return out;
}

struct AeTrainResult {
    Autoencoder<float> model;
    std::vector<double> loss_history;
    double heldout_mse = 0.0;
    double mean_image_mse = 0.0;  // held-out MSE of predicting the train mean image
};

namespace train_detail {

inline double mse_against(const std::vector<Image>& images,
                          const std::vector<int>& idx,
                          const Autoencoder<float>& model) {
    NoGradGuard guard;
    double acc = 0.0;
    std::size_t count = 0;
    const int chunk = 8;
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        std::vector<int> part(idx.begin() + start,
                              idx.begin() + std::min(idx.size(), start + chunk));
        const Tensor<float> x = make_batch<float>(images, part);
        const Tensor<float> y = model.reconstruct(Var<float>(x, false)).value();
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double d = static_cast<double>(y.data[i]) - x.data[i];
            acc += d * d;
        }
        count += x.data.size();
    }
    return acc / static_cast<double>(count);
}

}  // namespace train_detail

// L2-reconstruction training of the feature extractor. A fifth of the
// dataset (when it is big enough) is held out; the result reports both the
// held-out reconstruction MSE and the MSE of predicting the training-set
// mean image, the baseline it must beat.
inline AeTrainResult train_autoencoder(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    const int size = data.image_size();
    const int n = static_cast<int>(data.images.size());

    std::vector<int> train_idx, held_idx;
    if (n >= 8) {
        const int held = std::max(1, n / 5);
        for (int i = 0; i < n - held; ++i) train_idx.push_back(i);
        for (int i = n - held; i < n; ++i) held_idx.push_back(i);
    } else {
        for (int i = 0; i < n; ++i) train_idx.push_back(i);
        held_idx = train_idx;
    }

    AeTrainResult result{Autoencoder<float>::make(size, cfg.seed), {}, 0.0, 0.0};
    auto params = result.model.parameters();
    AdamState<float> state;
    Pcg32 rng(cfg.seed, 0x7ae);

    result.loss_history.reserve(cfg.iterations);
    for (int it = 1; it <= cfg.iterations; ++it) {
        const auto idx = train_detail::sample_indices<float>(
            rng, static_cast<int>(train_idx.size()), cfg.batch_size);
        std::vector<int> mapped(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) mapped[i] = train_idx[idx[i]];
        const Var<float> x(train_detail::make_batch<float>(data.images, mapped), false);
        const Var<float> loss = mean(square(sub(result.model.reconstruct(x), x)));
        const double value = train_detail::scalar_value(loss);
        result.loss_history.push_back(value);
        if (!std::isfinite(value))
            throw NumericError("train_autoencoder: loss diverged at step " +
                               std::to_string(it));
        auto grads = backward(loss, params);
        adam_step(params, grads, state, static_cast<float>(cfg.lr));
    }

    result.heldout_mse = train_detail::mse_against(data.images, held_idx, result.model);

    Image mean_img(size, size, 0.0f);
    for (int i : train_idx)
        for (std::size_t p = 0; p < mean_img.pixels.size(); ++p)
            mean_img.pixels[p] += data.images[i].pixels[p];
    for (auto& v : mean_img.pixels) v /= static_cast<float>(train_idx.size());
    double acc = 0.0;
    std::size_t count = 0;
    for (int i : held_idx)
        for (std::size_t p = 0; p < mean_img.pixels.size(); ++p) {
            const double d = data.images[i].pixels[p] - mean_img.pixels[p];
            acc += d * d;
            ++count;
        }
    result.mean_image_mse = acc / static_cast<double>(count);
    return result;
}

struct GanTrainResult {
    Generator<float> generator;
    Critic<float> critic;
    std::vector<MetricsRow> metrics;
};

namespace train_detail {

inline void clip_weights(std::vector<Var<float>>& params, float c) {
    for (auto& p : params)
        for (auto& v : p.value_mut().data) v = std::clamp(v, -c, c);
}

template <typename Model>
void diagnostic_dump(const Model& model, const std::string& dir,
                     const std::string& name) {
    if (dir.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    save_checkpoint((std::filesystem::path(dir) / name).string(),
                    snapshot_parameters(model));
}

}  // namespace train_detail

// Alternating WGAN training of the refiner against the pseudo-real domain:
// n_critic critic steps per generator step, Adam for both, per-iteration
// metrics row. Aborts with a diagnostic checkpoint on non-finite losses.
inline GanTrainResult train_sasgan(const Dataset& rendered, const Dataset& real,
                                   const Autoencoder<float>& phi,
                                   const TrainConfig& cfg) {
    cfg.validate();
    const int size = rendered.image_size();
    if (real.image_size() != size)
        throw ShapeError("train_sasgan: rendered " + std::to_string(size) +
                         " vs real " + std::to_string(real.image_size()));
    if (phi.image_size != size)
        throw ConfigError("train_sasgan: feature extractor expects " +
                          std::to_string(phi.image_size) + ", datasets are " +
                          std::to_string(size));

    GanTrainResult result{Generator<float>::make(size, cfg.seed),
                          Critic<float>::make(size, cfg.seed + 1),
                          {}};
    auto g_params = result.generator.parameters();
    auto d_params = result.critic.parameters();
    AdamState<float> g_state, d_state;
    Pcg32 rng(cfg.seed, 0x6a11);

    const auto score = [&](const Var<float>& x) { return result.critic.forward(x); };
    const auto refine = [&](const Var<float>& x) { return result.generator.forward(x); };
    const bool use_gp = cfg.lipschitz_mode == LipschitzMode::GradientPenalty;

    result.metrics.reserve(cfg.iterations);
    for (int it = 1; it <= cfg.iterations; ++it) {
        MetricsRow row;
        row.iter = it;

        Tensor<float> last_fake({1, 1, size, size});
        for (int c = 0; c < cfg.n_critic; ++c) {
            const auto real_idx = train_detail::sample_indices<float>(
                rng, static_cast<int>(real.images.size()), cfg.batch_size);
            const auto rend_idx = train_detail::sample_indices<float>(
                rng, static_cast<int>(rendered.images.size()), cfg.batch_size);
            const Tensor<float> real_b = train_detail::make_batch<float>(real.images, real_idx);
            Tensor<float> fake_b;
            {
                NoGradGuard guard;
                fake_b = result.generator
                             .forward(Var<float>(
                                 train_detail::make_batch<float>(rendered.images, rend_idx),
                                 false))
                             .value();
            }
            const std::uint64_t eps_seed =
                hash_counter(cfg.seed, static_cast<std::uint64_t>(it), c);
            const auto obj = critic_loss(
                score, real_b, fake_b, use_gp ? static_cast<float>(cfg.lambda_gp) : 0.0f,
                cfg.gp_mode, eps_seed);
            auto grads = backward(obj.loss, d_params);
            adam_step(d_params, grads, d_state, static_cast<float>(cfg.lr));
            if (!use_gp)
                train_detail::clip_weights(d_params, static_cast<float>(cfg.clip_c));
            if (c == cfg.n_critic - 1) {
                row.critic_loss = train_detail::scalar_value(obj.loss);
                row.gp_term = obj.gp_term;
                row.mean_grad_norm =
                    use_gp ? obj.mean_grad_norm : mean_input_grad_norm(score, fake_b);
            }
        }

        const auto rend_idx = train_detail::sample_indices<float>(
            rng, static_cast<int>(rendered.images.size()), cfg.batch_size);
        const auto gobj = generator_loss(
            refine, score, phi,
            train_detail::make_batch<float>(rendered.images, rend_idx),
            static_cast<float>(cfg.mu_phi));
        auto grads = backward(gobj.loss, g_params);
        adam_step(g_params, grads, g_state, static_cast<float>(cfg.lr));
        row.gen_loss = train_detail::scalar_value(gobj.loss);
        row.phi_term = gobj.phi_term;

        result.metrics.push_back(row);
        if (!std::isfinite(row.critic_loss) || !std::isfinite(row.gen_loss) ||
            !std::isfinite(row.gp_term) || !std::isfinite(row.phi_term) ||
            !std::isfinite(row.mean_grad_norm)) {
            train_detail::diagnostic_dump(result.generator, cfg.checkpoint_dir,
                                          "diagnostic_generator.sfw");
            train_detail::diagnostic_dump(result.critic, cfg.checkpoint_dir,
                                          "diagnostic_critic.sfw");
            throw NumericError("train_sasgan: non-finite metrics at iteration " +
                               std::to_string(it));
        }
        if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 &&
            !cfg.checkpoint_dir.empty()) {
            char tag[32];
            std::snprintf(tag, sizeof(tag), "iter_%06d", it);
            train_detail::diagnostic_dump(result.generator, cfg.checkpoint_dir,
                                          std::string(tag) + "_generator.sfw");
            train_detail::diagnostic_dump(result.critic, cfg.checkpoint_dir,
                                          std::string(tag) + "_critic.sfw");
        }
    }
    return result;
}

struct DcganTrainResult {
    BaselineGenerator<float> generator;
    Critic<float> critic;
    std::vector<MetricsRow> metrics;
};

// Same alternating loop with latent draws replacing renders and no feature
// penalty; the unconditional baseline the refiner is compared against.
inline DcganTrainResult train_dcgan(const Dataset& real, const TrainConfig& cfg) {
    cfg.validate();
    const int size = real.image_size();
    DcganTrainResult result{BaselineGenerator<float>::make(size, cfg.seed),
                            Critic<float>::make(size, cfg.seed + 1),
                            {}};
    auto g_params = result.generator.parameters();
    auto d_params = result.critic.parameters();
    AdamState<float> g_state, d_state;
    Pcg32 rng(cfg.seed, 0xdc6a);

    const auto score = [&](const Var<float>& x) { return result.critic.forward(x); };
    const bool use_gp = cfg.lipschitz_mode == LipschitzMode::GradientPenalty;
    const auto draw_latents = [&](int count) {
        Tensor<float> z({count, BaselineGenerator<float>::kLatentDim});
        for (auto& v : z.data) v = static_cast<float>(rng.gaussian());
        return z;
    };

    result.metrics.reserve(cfg.iterations);
    for (int it = 1; it <= cfg.iterations; ++it) {
        MetricsRow row;
        row.iter = it;

        for (int c = 0; c < cfg.n_critic; ++c) {
            const auto real_idx = train_detail::sample_indices<float>(
                rng, static_cast<int>(real.images.size()), cfg.batch_size);
            const Tensor<float> real_b = train_detail::make_batch<float>(real.images, real_idx);
            Tensor<float> fake_b;
            {
                NoGradGuard guard;
                fake_b = result.generator
                             .generate(Var<float>(draw_latents(cfg.batch_size), false))
                             .value();
            }
            const std::uint64_t eps_seed =
                hash_counter(cfg.seed ^ 0xdcULL, static_cast<std::uint64_t>(it), c);
            const auto obj = critic_loss(
                score, real_b, fake_b, use_gp ? static_cast<float>(cfg.lambda_gp) : 0.0f,
                cfg.gp_mode, eps_seed);
            auto grads = backward(obj.loss, d_params);
            adam_step(d_params, grads, d_state, static_cast<float>(cfg.lr));
            if (!use_gp)
                train_detail::clip_weights(d_params, static_cast<float>(cfg.clip_c));
            if (c == cfg.n_critic - 1) {
                row.critic_loss = train_detail::scalar_value(obj.loss);
                row.gp_term = obj.gp_term;
                row.mean_grad_norm =
                    use_gp ? obj.mean_grad_norm : mean_input_grad_norm(score, fake_b);
            }
        }

        const Var<float> z(draw_latents(cfg.batch_size), false);
        const Var<float> gen_loss =
            mul_scalar(mean(result.critic.forward(result.generator.generate(z))), -1.0f);
        auto grads = backward(gen_loss, g_params);
        adam_step(g_params, grads, g_state, static_cast<float>(cfg.lr));
        row.gen_loss = train_detail::scalar_value(gen_loss);

        result.metrics.push_back(row);
        if (!std::isfinite(row.critic_loss) || !std::isfinite(row.gen_loss) ||
            !std::isfinite(row.gp_term) || !std::isfinite(row.mean_grad_norm)) {
            train_detail::diagnostic_dump(result.generator, cfg.checkpoint_dir,
                                          "diagnostic_generator.sfw");
            train_detail::diagnostic_dump(result.critic, cfg.checkpoint_dir,
                                          "diagnostic_critic.sfw");
            throw NumericError("train_dcgan: non-finite metrics at iteration " +
                               std::to_string(it));
        }
    }
    return result;
}

}  // namespace sasforge
