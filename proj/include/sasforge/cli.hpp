#pragma once

// Command-line front end. Every command is a plain function over parsed
// options so the test suite can drive it in-process; tools/sasforge.cpp is
// a two-line wrapper. Settings resolve as CLI flag > config file > default,
// and each command echoes its effective values to run-config.txt next to
// its outputs so a run can be reproduced from its artifacts alone.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sasforge/checkpoint.hpp"
#include "sasforge/common.hpp"
#include "sasforge/config.hpp"
#include "sasforge/degrade.hpp"
#include "sasforge/eval.hpp"
#include "sasforge/image.hpp"
#include "sasforge/manifest.hpp"
#include "sasforge/models.hpp"
#include "sasforge/render.hpp"
#include "sasforge/scene.hpp"
#include "sasforge/train.hpp"

namespace sasforge {
namespace cli {

namespace fs = std::filesystem;

inline std::string fmt17(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

// SASFORGE_THREADS caps render parallelism; unset means library default.
inline int thread_cap() {
    const char* env = std::getenv("SASFORGE_THREADS");
    if (!env || !*env) return 0;
    try {
        const int v = std::stoi(env);
        return v < 1 ? 1 : v;
    } catch (...) {
        throw ConfigError(std::string("SASFORGE_THREADS: expected an integer, got '") +
                          env + "'");
    }
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw DataError("cannot create output directory " + dir);
}

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << content;
    if (!out) throw DataError("write failed for " + path);
}

inline std::vector<std::string> list_pgms(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pgm")
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

struct LoadedImages {
    Dataset data;
    std::vector<std::string> names;
};

// Manifest order when a manifest is present (it also carries the role and
// pose provenance), otherwise sorted directory order.
inline LoadedImages load_images(const std::string& dir,
                                const std::string& fallback_role) {
    LoadedImages out;
    const fs::path man = fs::path(dir) / "manifest.csv";
    if (fs::exists(man)) {
        out.data.manifest = load_manifest(man.string());
        for (const auto& e : out.data.manifest.entries) {
            out.names.push_back(e.file);
            out.data.images.push_back(read_pgm((fs::path(dir) / e.file).string()));
        }
        out.data.role = out.data.manifest.entries.empty()
                            ? fallback_role
                            : out.data.manifest.entries[0].role;
    } else {
        out.names = list_pgms(dir);
        if (out.names.empty()) throw DataError("no PGM images in " + dir);
        for (const auto& n : out.names)
            out.data.images.push_back(read_pgm((fs::path(dir) / n).string()));
        out.data.role = fallback_role;
    }
    return out;
}

inline Autoencoder<float> load_autoencoder(const std::string& path, int size) {
    auto model = Autoencoder<float>::make(size, 0);
    load_parameters(model, load_checkpoint(path), "autoencoder");
    return model;
}

// Key/value echo accumulated per command, emitted as one INI section ahead
// of any scene/render sections the command also resolved.
class RunConfig {
public:
    explicit RunConfig(const std::string& command) : section_(command) {}

    void add(const std::string& key, const std::string& v) {
        kv_.emplace_back(key, v);
    }
    void add(const std::string& key, const char* v) { kv_.emplace_back(key, v); }
    void add(const std::string& key, double v) { kv_.emplace_back(key, fmt17(v)); }
    void add(const std::string& key, int v) { kv_.emplace_back(key, std::to_string(v)); }
    void add(const std::string& key, std::uint64_t v) {
        kv_.emplace_back(key, std::to_string(v));
    }

    void append_raw(const std::string& text) { raw_ += text; }

    void write(const std::string& out_dir) const {
        std::ostringstream os;
        os << "[" << section_ << "]\n";
        for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
        if (!raw_.empty()) os << "\n" << raw_;
        write_text((fs::path(out_dir) / "run-config.txt").string(), os.str());
    }

private:
    std::string section_;
    std::vector<std::pair<std::string, std::string>> kv_;
    std::string raw_;
};

// ---------------------------------------------------------------------------
// render-dataset

struct RenderDatasetOpts {
    std::string out;
    std::string config_path;
    std::string from_manifest;
    std::uint64_t seed = 0;
    int count = 0;
    int size = 64;
    int depth = 8;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* count_opt = nullptr;
    CLI::Option* size_opt = nullptr;
    CLI::Option* depth_opt = nullptr;
};

inline void render_entry(const SceneConfig& base, const RenderConfig& rc,
                         const ManifestEntry& e, int threads, int maxval,
                         const std::string& out_dir) {
    const int px = base.camera.pixels;
    const double foot = base.camera.footprint_m;
    const auto to_m = [&](double p) { return ((p + 0.5) / px - 0.5) * foot; };

    SceneConfig c = base;
    c.layout = TargetLayout::Single;
    c.seafloor.seed = e.scene_seed;
    c.single_target.center_xy_m = {to_m(e.center_px_x), to_m(e.center_px_y)};
    c.single_target.yaw_rad = e.yaw_rad;
    c.single_target.burial_frac = e.burial_frac;

    RenderConfig r = rc;
    r.seed = e.scene_seed;

    const Image img = render(build_scene(c), r, threads);
    write_pgm((fs::path(out_dir) / e.file).string(), img, maxval);
}

inline int run_render_dataset(const RenderDatasetOpts& o, std::ostream& out) {
    const ConfigFile f = o.config_path.empty()
                             ? ConfigFile()
                             : ConfigFile::parse_file(o.config_path);
    SceneConfig base = parse_scene_config(f);
    const RenderConfig rc = parse_render_config(f);
    const std::uint64_t seed =
        o.seed_opt->count() ? o.seed : f.get_u64("dataset", "seed", 0);
    const int count = o.count_opt->count()
                          ? o.count
                          : static_cast<int>(f.get_int("dataset", "count", 0));
    const int depth = o.depth_opt->count()
                          ? o.depth
                          : static_cast<int>(f.get_int("dataset", "depth", 8));
    if (o.size_opt->count()) base.camera.pixels = o.size;
    if (count < 0) throw ParamError("render-dataset: --count must be >= 0");
    if (depth != 8 && depth != 16)
        throw ParamError("render-dataset: --depth must be 8 or 16");
    const int maxval = depth == 16 ? 65535 : 255;
    const int threads = thread_cap();

    ensure_dir(o.out);

    Manifest manifest;
    if (!o.from_manifest.empty()) {
        manifest = load_manifest(o.from_manifest, /*check_files=*/false);
    } else {
        // poses are drawn in pixel coordinates so the manifest regenerates
        // the exact render inputs on reproduction
        Pcg32 rng(seed, 0x7265);
        const int px = base.camera.pixels;
        const double foot = base.camera.footprint_m;
        const auto to_px = [&](double m) { return (m / foot + 0.5) * px - 0.5; };
        const double lo = to_px(-0.3 * foot), hi = to_px(0.3 * foot);
        for (int i = 0; i < count; ++i) {
            ManifestEntry e;
            char name[32];
            std::snprintf(name, sizeof name, "chip_%05d.pgm", i);
            e.file = name;
            e.scene_seed = rng.next_u64();
            e.center_px_x = rng.uniform(lo, hi);
            e.center_px_y = rng.uniform(lo, hi);
            e.yaw_rad = rng.uniform(0.0, 6.283185307179586477);
            e.burial_frac = rng.uniform(0.0, 0.5);
            e.role = "rendered";
            manifest.entries.push_back(std::move(e));
        }
    }

    for (const auto& e : manifest.entries)
        render_entry(base, rc, e, threads, maxval, o.out);
    save_manifest((fs::path(o.out) / "manifest.csv").string(), manifest);

    RunConfig echo("dataset");
    echo.add("command", "render-dataset");
    echo.add("count", static_cast<int>(manifest.entries.size()));
    echo.add("seed", seed);
    echo.add("depth", depth);
    if (!o.from_manifest.empty()) echo.add("from_manifest", o.from_manifest);
    echo.append_raw(scene_config_to_string(base));
    echo.append_raw("\n" + render_config_to_string(rc));
    echo.write(o.out);

    out << "render-dataset: " << manifest.entries.size() << " images at "
        << base.camera.pixels << "x" << base.camera.pixels << " -> " << o.out
        << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// make-pseudoreal

struct MakePseudorealOpts {
    std::string in, out, config_path;
    std::uint64_t seed = 0;
    int looks = 4;
    double blur_along = 1.2;
    double blur_across = 0.6;
    double gamma = 0.85;
    int depth = 8;
    CLI::Option *seed_opt = nullptr, *looks_opt = nullptr, *along_opt = nullptr,
                *across_opt = nullptr, *gamma_opt = nullptr, *depth_opt = nullptr;
};

inline int run_make_pseudoreal(const MakePseudorealOpts& o, std::ostream& out) {
    const ConfigFile f = o.config_path.empty()
                             ? ConfigFile()
                             : ConfigFile::parse_file(o.config_path);
    DegradeConfig dc;
    dc.speckle_looks = o.looks_opt->count()
                           ? o.looks
                           : static_cast<int>(f.get_int("degrade", "speckle_looks",
                                                        dc.speckle_looks));
    dc.blur_sigma_along =
        o.along_opt->count()
            ? o.blur_along
            : f.get_double("degrade", "blur_sigma_along", dc.blur_sigma_along);
    dc.blur_sigma_across =
        o.across_opt->count()
            ? o.blur_across
            : f.get_double("degrade", "blur_sigma_across", dc.blur_sigma_across);
    dc.contrast_gamma =
        o.gamma_opt->count()
            ? o.gamma
            : f.get_double("degrade", "contrast_gamma", dc.contrast_gamma);
    dc.seed = o.seed_opt->count() ? o.seed : f.get_u64("degrade", "seed", 0);
    const int depth = o.depth_opt->count()
                          ? o.depth
                          : static_cast<int>(f.get_int("degrade", "depth", 8));
    if (depth != 8 && depth != 16)
        throw ParamError("make-pseudoreal: --depth must be 8 or 16");
    dc.validate();

    const LoadedImages loaded = load_images(o.in, "rendered");
    ensure_dir(o.out);
    const int maxval = depth == 16 ? 65535 : 255;
    for (std::size_t i = 0; i < loaded.data.images.size(); ++i) {
        const Image deg = degrade_image(loaded.data.images[i], dc,
                                        static_cast<std::uint64_t>(i));
        write_pgm((fs::path(o.out) / loaded.names[i]).string(), deg, maxval);
    }
    if (!loaded.data.manifest.entries.empty()) {
        Manifest m = loaded.data.manifest;
        for (auto& e : m.entries) e.role = "pseudo-real";
        save_manifest((fs::path(o.out) / "manifest.csv").string(), m);
    }

    RunConfig echo("degrade");
    echo.add("command", "make-pseudoreal");
    echo.add("in", o.in);
    echo.add("speckle_looks", dc.speckle_looks);
    echo.add("blur_sigma_along", dc.blur_sigma_along);
    echo.add("blur_sigma_across", dc.blur_sigma_across);
    echo.add("contrast_gamma", dc.contrast_gamma);
    echo.add("seed", dc.seed);
    echo.add("depth", depth);
    echo.write(o.out);

    out << "make-pseudoreal: " << loaded.data.images.size() << " images -> "
        << o.out << " (looks=" << dc.speckle_looks << ", blur="
        << dc.blur_sigma_along << "/" << dc.blur_sigma_across << ", gamma="
        << dc.contrast_gamma << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// shared training option block

struct TrainOpts {
    std::string out, config_path;
    double lr = 0.001;
    int batch = 4;
    int iterations = 1000;
    std::uint64_t seed = 0;
    double lambda_gp = 10.0;
    int n_critic = 5;
    double mu_phi = 1.0;
    double gamma_report = 1.0;
    std::string gp_mode = "generated";
    std::string lipschitz = "gp";
    double clip_c = 0.01;
    int checkpoint_every = 0;
    CLI::Option *lr_opt = nullptr, *batch_opt = nullptr, *iter_opt = nullptr,
                *seed_opt = nullptr, *lambda_opt = nullptr, *ncritic_opt = nullptr,
                *mu_opt = nullptr, *gamma_opt = nullptr, *gpmode_opt = nullptr,
                *lipschitz_opt = nullptr, *clip_opt = nullptr, *ckpt_opt = nullptr;
};

inline GpMode gp_mode_from_name(const std::string& s) {
    if (s == "generated") return GpMode::GeneratedSamples;
    if (s == "interpolation") return GpMode::RealFakeInterpolation;
    throw ConfigError("gp_mode: expected generated|interpolation, got '" + s + "'");
}

inline LipschitzMode lipschitz_from_name(const std::string& s) {
    if (s == "gp") return LipschitzMode::GradientPenalty;
    if (s == "clip") return LipschitzMode::WeightClipping;
    throw ConfigError("lipschitz: expected gp|clip, got '" + s + "'");
}

inline TrainConfig resolve_train_config(const TrainOpts& o, const ConfigFile& f) {
    TrainConfig c;
    c.lr = o.lr_opt->count() ? o.lr : f.get_double("train", "lr", c.lr);
    c.batch_size = o.batch_opt->count()
                       ? o.batch
                       : static_cast<int>(f.get_int("train", "batch_size",
                                                    c.batch_size));
    c.iterations = o.iter_opt->count()
                       ? o.iterations
                       : static_cast<int>(f.get_int("train", "iterations",
                                                    o.iterations));
    c.seed = o.seed_opt->count() ? o.seed : f.get_u64("train", "seed", 0);
    c.lambda_gp = o.lambda_opt->count()
                      ? o.lambda_gp
                      : f.get_double("train", "lambda_gp", c.lambda_gp);
    c.n_critic = o.ncritic_opt->count()
                     ? o.n_critic
                     : static_cast<int>(f.get_int("train", "n_critic", c.n_critic));
    c.mu_phi =
        o.mu_opt->count() ? o.mu_phi : f.get_double("train", "mu_phi", c.mu_phi);
    c.gamma_report = o.gamma_opt->count()
                         ? o.gamma_report
                         : f.get_double("train", "gamma", c.gamma_report);
    c.gp_mode = gp_mode_from_name(
        o.gpmode_opt->count() ? o.gp_mode
                              : f.get_string("train", "gp_mode", o.gp_mode));
    c.lipschitz_mode = lipschitz_from_name(
        o.lipschitz_opt->count() ? o.lipschitz
                                 : f.get_string("train", "lipschitz", o.lipschitz));
    c.clip_c =
        o.clip_opt->count() ? o.clip_c : f.get_double("train", "clip_c", c.clip_c);
    c.checkpoint_every =
        o.ckpt_opt->count()
            ? o.checkpoint_every
            : static_cast<int>(f.get_int("train", "checkpoint_every", 0));
    c.checkpoint_dir = o.out;
    return c;
}

inline void echo_train_config(RunConfig& echo, const TrainConfig& c) {
    echo.add("iterations", c.iterations);
    echo.add("lr", c.lr);
    echo.add("batch_size", c.batch_size);
    echo.add("seed", c.seed);
    echo.add("lambda_gp", c.lambda_gp);
    echo.add("n_critic", c.n_critic);
    echo.add("mu_phi", c.mu_phi);
    echo.add("gamma", c.gamma_report);
    echo.add("gp_mode", c.gp_mode == GpMode::GeneratedSamples ? "generated"
                                                              : "interpolation");
    echo.add("lipschitz",
             c.lipschitz_mode == LipschitzMode::GradientPenalty ? "gp" : "clip");
    echo.add("clip_c", c.clip_c);
    echo.add("checkpoint_every", c.checkpoint_every);
}

// ---------------------------------------------------------------------------
// train-ae

struct TrainAeOpts {
    std::string data;
    TrainOpts train;
};

inline int run_train_ae(const TrainAeOpts& o, std::ostream& out) {
    const ConfigFile f = o.train.config_path.empty()
                             ? ConfigFile()
                             : ConfigFile::parse_file(o.train.config_path);
    TrainConfig cfg = resolve_train_config(o.train, f);
    const Dataset data = load_images(o.data, "pseudo-real").data;
    ensure_dir(o.train.out);

    const AeTrainResult r = train_autoencoder(data, cfg);
    save_checkpoint((fs::path(o.train.out) / "ae.sfw").string(),
                    snapshot_parameters(r.model));
    {
        std::ostringstream os;
        os << "iter,loss\n";
        os.precision(10);
        for (std::size_t i = 0; i < r.loss_history.size(); ++i)
            os << i + 1 << "," << r.loss_history[i] << "\n";
        write_text((fs::path(o.train.out) / "ae_loss.csv").string(), os.str());
    }

    RunConfig echo("train");
    echo.add("command", "train-ae");
    echo.add("data", o.data);
    echo_train_config(echo, cfg);
    echo.write(o.train.out);

    out << "train-ae: " << cfg.iterations << " iterations on "
        << data.images.size() << " images, final loss "
        << (r.loss_history.empty() ? 0.0 : r.loss_history.back())
        << ", held-out mse " << r.heldout_mse << " (mean-image baseline "
        << r.mean_image_mse << ") -> " << o.train.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-gan

struct TrainGanOpts {
    std::string renders, real, ae;
    TrainOpts train;
};

inline int run_train_gan(const TrainGanOpts& o, std::ostream& out) {
    if (o.ae.empty())
        throw ConfigError("train-gan: --ae is required (autoencoder checkpoint)");
    if (!fs::exists(o.ae))
        throw ConfigError("--ae: checkpoint not found: " + o.ae);
    const ConfigFile f = o.train.config_path.empty()
                             ? ConfigFile()
                             : ConfigFile::parse_file(o.train.config_path);
    TrainConfig cfg = resolve_train_config(o.train, f);

    const Dataset rendered = load_images(o.renders, "rendered").data;
    const Dataset real = load_images(o.real, "pseudo-real").data;
    const Autoencoder<float> phi = load_autoencoder(o.ae, rendered.image_size());
    ensure_dir(o.train.out);

    const GanTrainResult r = train_sasgan(rendered, real, phi, cfg);
    save_checkpoint((fs::path(o.train.out) / "generator.sfw").string(),
                    snapshot_parameters(r.generator));
    save_checkpoint((fs::path(o.train.out) / "critic.sfw").string(),
                    snapshot_parameters(r.critic));
    write_metrics_csv((fs::path(o.train.out) / "metrics.csv").string(), r.metrics);

    RunConfig echo("train");
    echo.add("command", "train-gan");
    echo.add("renders", o.renders);
    echo.add("real", o.real);
    echo.add("ae", o.ae);
    echo_train_config(echo, cfg);
    echo.write(o.train.out);

    double tail_norm = 0.0;
    if (!r.metrics.empty()) {
        const std::size_t span = std::min<std::size_t>(100, r.metrics.size());
        for (std::size_t i = r.metrics.size() - span; i < r.metrics.size(); ++i)
            tail_norm += r.metrics[i].mean_grad_norm;
        tail_norm /= static_cast<double>(span);
    }
    out << "train-gan: " << cfg.iterations << " iterations, final critic loss "
        << (r.metrics.empty() ? 0.0 : r.metrics.back().critic_loss)
        << ", mean |grad| over tail " << tail_norm << " -> " << o.train.out
        << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-dcgan

struct TrainDcganOpts {
    std::string real;
    TrainOpts train;
};

inline int run_train_dcgan(const TrainDcganOpts& o, std::ostream& out) {
    const ConfigFile f = o.train.config_path.empty()
                             ? ConfigFile()
                             : ConfigFile::parse_file(o.train.config_path);
    TrainConfig cfg = resolve_train_config(o.train, f);
    const Dataset real = load_images(o.real, "pseudo-real").data;
    ensure_dir(o.train.out);

    const DcganTrainResult r = train_dcgan(real, cfg);
    save_checkpoint((fs::path(o.train.out) / "baseline_generator.sfw").string(),
                    snapshot_parameters(r.generator));
    save_checkpoint((fs::path(o.train.out) / "critic.sfw").string(),
                    snapshot_parameters(r.critic));
    write_metrics_csv((fs::path(o.train.out) / "metrics.csv").string(), r.metrics);

    RunConfig echo("train");
    echo.add("command", "train-dcgan");
    echo.add("real", o.real);
    echo_train_config(echo, cfg);
    echo.write(o.train.out);

    out << "train-dcgan: " << cfg.iterations << " iterations, final critic loss "
        << (r.metrics.empty() ? 0.0 : r.metrics.back().critic_loss) << " -> "
        << o.train.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOpts {
    std::string checkpoint, in, out;
    int count = 16;
    std::uint64_t seed = 0;
    int depth = 8;
};

inline bool checkpoint_has(const std::vector<NamedTensor>& ckpt,
                           const std::string& name) {
    for (const auto& [n, t] : ckpt)
        if (n == name) return true;
    return false;
}

inline Image image_from_plane(const Tensor<float>& batch, int index, int size) {
    Image img(size, size);
    const std::size_t base = static_cast<std::size_t>(index) * size * size;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            img.at(x, y) = batch.data[base + static_cast<std::size_t>(y) * size + x];
    return img;
}

inline int run_generate(const GenerateOpts& o, std::ostream& out) {
    const auto ckpt = load_checkpoint(o.checkpoint);
    ensure_dir(o.out);
    const int maxval = o.depth == 16 ? 65535 : 255;
    if (o.depth != 8 && o.depth != 16)
        throw ParamError("generate: --depth must be 8 or 16");

    RunConfig echo("generate");
    echo.add("command", "generate");
    echo.add("checkpoint", o.checkpoint);
    echo.add("depth", o.depth);

    NoGradGuard guard;
    int produced = 0;
    if (checkpoint_has(ckpt, "proj.w")) {
        // latent sampler: image size follows from the projection shape
        int flat = 0;
        for (const auto& [n, t] : ckpt)
            if (n == "proj.w") flat = t.shape[0];
        const int spatial = static_cast<int>(std::lround(std::sqrt(flat / 64.0)));
        const int size = 16 * spatial;
        if (spatial < 1 || 64 * spatial * spatial != flat)
            throw DataError("generate: unrecognized projection shape in " +
                            o.checkpoint);
        auto model = BaselineGenerator<float>::make(size, 0);
        load_parameters(model, ckpt, "baseline generator");

        Pcg32 rng(o.seed, 0x6a7e);
        for (int start = 0; start < o.count; start += 16) {
            const int n = std::min(16, o.count - start);
            Tensor<float> z({n, BaselineGenerator<float>::kLatentDim});
            for (auto& v : z.data) v = static_cast<float>(rng.gaussian());
            const Var<float> yv = model.generate(Var<float>(std::move(z), false));
            const Tensor<float>& y = yv.value();
            for (int i = 0; i < n; ++i) {
                char name[32];
                std::snprintf(name, sizeof name, "sample_%05d.pgm", start + i);
                write_pgm((fs::path(o.out) / name).string(),
                          image_from_plane(y, i, size), maxval);
                ++produced;
            }
        }
        echo.add("count", o.count);
        echo.add("seed", o.seed);
    } else {
        if (o.in.empty())
            throw ConfigError(
                "generate: --in is required to refine renders with this checkpoint");
        const LoadedImages loaded = load_images(o.in, "rendered");
        const int size = loaded.data.image_size();
        int ngf = 0, res = 0;
        for (const auto& [n, t] : ckpt) {
            if (n == "down1.w") ngf = t.shape[0];
            if (n.rfind("res", 0) == 0 && n.size() > 3 &&
                n.substr(n.size() - 3) == ".w1")
                ++res;
        }
        if (ngf == 0 || res == 0)
            throw DataError("generate: " + o.checkpoint +
                            " is not a refiner or latent generator checkpoint");
        auto model = Generator<float>::make(size, 0, res, ngf);
        load_parameters(model, ckpt, "generator");

        const int n_total = static_cast<int>(loaded.data.images.size());
        for (int start = 0; start < n_total; start += 16) {
            const int n = std::min(16, n_total - start);
            std::vector<int> idx(n);
            for (int i = 0; i < n; ++i) idx[i] = start + i;
            const Tensor<float> x =
                train_detail::make_batch<float>(loaded.data.images, idx);
            const Var<float> yv = model.forward(Var<float>(x, false));
            const Tensor<float>& y = yv.value();
            for (int i = 0; i < n; ++i) {
                write_pgm((fs::path(o.out) / loaded.names[start + i]).string(),
                          image_from_plane(y, i, size), maxval);
                ++produced;
            }
        }
        echo.add("in", o.in);
    }
    echo.write(o.out);
    out << "generate: " << produced << " images -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval-fid

struct EvalFidOpts {
    std::string a, b, ae, out;
};

inline int run_eval_fid(const EvalFidOpts& o, std::ostream& out) {
    if (o.ae.empty())
        throw ConfigError("eval-fid: --ae is required (autoencoder checkpoint)");
    const LoadedImages da = load_images(o.a, "a");
    const LoadedImages db = load_images(o.b, "b");
    const Autoencoder<float> ae = load_autoencoder(o.ae, da.data.image_size());
    const double v =
        fid(feature_stats(da.data.images, ae), feature_stats(db.data.images, ae));
    if (!o.out.empty()) {
        ensure_dir(o.out);
        write_text((fs::path(o.out) / "fid.csv").string(),
                   "a,b,fid\n" + o.a + "," + o.b + "," + fmt17(v) + "\n");
        RunConfig echo("eval");
        echo.add("command", "eval-fid");
        echo.add("a", o.a);
        echo.add("b", o.b);
        echo.add("ae", o.ae);
        echo.write(o.out);
    }
    std::ostringstream os;
    os.precision(10);
    os << "eval-fid: fid(" << o.a << ", " << o.b << ") = " << v << "\n";
    out << os.str();
    return 0;
}

// ---------------------------------------------------------------------------
// eval-nn

struct EvalNnOpts {
    std::string query, data, ae, out;
    int k = 5;
    std::string metric = "l2";
};

inline int run_eval_nn(const EvalNnOpts& o, std::ostream& out) {
    const NnMetric metric = o.metric == "phi" ? NnMetric::Phi : NnMetric::ImageL2;
    if (metric == NnMetric::Phi && o.ae.empty())
        throw ConfigError("eval-nn: --metric phi requires --ae");
    const LoadedImages queries = load_images(o.query, "query");
    const LoadedImages data = load_images(o.data, "data");
    ensure_dir(o.out);

    std::optional<Autoencoder<float>> ae;
    if (metric == NnMetric::Phi)
        ae.emplace(load_autoencoder(o.ae, queries.data.image_size()));

    std::ostringstream os;
    os << "query_id,rank,neighbor_id,distance\n";
    for (std::size_t q = 0; q < queries.data.images.size(); ++q) {
        const auto nn = nearest_neighbors(queries.data.images[q],
                                          data.data.images, o.k, metric,
                                          ae ? &*ae : nullptr);
        for (std::size_t r = 0; r < nn.size(); ++r)
            os << queries.names[q] << "," << r + 1 << ","
               << data.names[static_cast<std::size_t>(nn[r].first)] << ","
               << fmt17(nn[r].second) << "\n";
    }
    write_text((fs::path(o.out) / "nn.csv").string(), os.str());

    RunConfig echo("eval");
    echo.add("command", "eval-nn");
    echo.add("query", o.query);
    echo.add("data", o.data);
    echo.add("k", o.k);
    echo.add("metric", o.metric);
    if (!o.ae.empty()) echo.add("ae", o.ae);
    echo.write(o.out);

    out << "eval-nn: " << queries.data.images.size() << " queries, k=" << o.k
        << " (" << o.metric << ") -> " << o.out << "/nn.csv\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval-tsne

struct EvalTsneOpts {
    std::string data, ae, out;
    double perplexity = 30.0;
    int iterations = 1000;
    std::uint64_t seed = 0;
};

inline int run_eval_tsne(const EvalTsneOpts& o, std::ostream& out) {
    if (o.ae.empty())
        throw ConfigError("eval-tsne: --ae is required (autoencoder checkpoint)");
    const LoadedImages data = load_images(o.data, "data");
    const Autoencoder<float> ae = load_autoencoder(o.ae, data.data.image_size());
    const auto features = extract_features(data.data.images, ae);
    const Embedding2D emb = tsne(features, o.perplexity, o.iterations, o.seed);
    ensure_dir(o.out);

    std::ostringstream os;
    os << "id,x,y\n";
    for (std::size_t i = 0; i < emb.points.size(); ++i)
        os << data.names[i] << "," << fmt17(emb.points[i][0]) << ","
           << fmt17(emb.points[i][1]) << "\n";
    write_text((fs::path(o.out) / "tsne.csv").string(), os.str());

    std::ostringstream kl;
    kl << "iter,kl\n";
    kl.precision(10);
    for (std::size_t i = 0; i < emb.kl_history.size(); ++i)
        kl << i + 1 << "," << emb.kl_history[i] << "\n";
    write_text((fs::path(o.out) / "tsne_kl.csv").string(), kl.str());

    RunConfig echo("eval");
    echo.add("command", "eval-tsne");
    echo.add("data", o.data);
    echo.add("ae", o.ae);
    echo.add("perplexity", o.perplexity);
    echo.add("iterations", o.iterations);
    echo.add("seed", o.seed);
    echo.write(o.out);

    out << "eval-tsne: " << emb.points.size() << " points, final kl "
        << (emb.kl_history.empty() ? 0.0 : emb.kl_history.back()) << " -> "
        << o.out << "/tsne.csv\n";
    return 0;
}

// ---------------------------------------------------------------------------
// argument surface

inline void add_train_flags(CLI::App* sub, TrainOpts& t) {
    sub->add_option("--out", t.out, "output directory")->required();
    sub->add_option("--config", t.config_path, "INI config file");
    t.iter_opt = sub->add_option("--iterations", t.iterations, "training steps");
    t.lr_opt = sub->add_option("--lr", t.lr, "learning rate");
    t.batch_opt = sub->add_option("--batch", t.batch, "batch size");
    t.seed_opt = sub->add_option("--seed", t.seed, "master seed");
    t.lambda_opt = sub->add_option("--lambda-gp", t.lambda_gp,
                                   "gradient penalty weight");
    t.ncritic_opt =
        sub->add_option("--n-critic", t.n_critic, "critic steps per generator step");
    t.mu_opt = sub->add_option("--mu-phi", t.mu_phi, "feature-match weight");
    t.gamma_opt = sub->add_option("--gamma", t.gamma_report,
                                  "feature-distance report threshold");
    t.gpmode_opt = sub->add_option("--gp-mode", t.gp_mode, "penalty point")
                       ->check(CLI::IsMember({"generated", "interpolation"}));
    t.lipschitz_opt = sub->add_option("--lipschitz", t.lipschitz,
                                      "lipschitz control")
                          ->check(CLI::IsMember({"gp", "clip"}));
    t.clip_opt = sub->add_option("--clip-c", t.clip_c, "weight clip bound");
    t.ckpt_opt = sub->add_option("--checkpoint-every", t.checkpoint_every,
                                 "periodic checkpoint interval (0 = off)");
}

inline int cli_main(std::vector<std::string> args,
                    std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
    CLI::App app{"sasforge: synthetic sonar imagery pipeline"};
    app.name("sasforge");
    app.require_subcommand(1);

    RenderDatasetOpts rd;
    auto* rd_cmd = app.add_subcommand("render-dataset",
                                      "render target chips with randomized poses");
    rd_cmd->add_option("--out", rd.out, "output directory")->required();
    rd_cmd->add_option("--config", rd.config_path, "INI config file");
    rd_cmd->add_option("--from-manifest", rd.from_manifest,
                       "re-render the poses recorded in an existing manifest");
    rd.seed_opt = rd_cmd->add_option("--seed", rd.seed, "master pose seed");
    rd.count_opt = rd_cmd->add_option("--count", rd.count, "number of images");
    rd.size_opt = rd_cmd->add_option("--size", rd.size, "image side in pixels")
                      ->check(CLI::IsMember({64, 256}));
    rd.depth_opt = rd_cmd->add_option("--depth", rd.depth, "PGM bit depth (8|16)");

    MakePseudorealOpts mp;
    auto* mp_cmd = app.add_subcommand(
        "make-pseudoreal", "blur, speckle and gamma-adjust rendered chips");
    mp_cmd->add_option("--in", mp.in, "input directory")->required();
    mp_cmd->add_option("--out", mp.out, "output directory")->required();
    mp_cmd->add_option("--config", mp.config_path, "INI config file");
    mp.seed_opt = mp_cmd->add_option("--seed", mp.seed, "speckle seed");
    mp.looks_opt = mp_cmd->add_option("--looks", mp.looks, "speckle looks L");
    mp.along_opt =
        mp_cmd->add_option("--blur-along", mp.blur_along, "along-track sigma, px");
    mp.across_opt = mp_cmd->add_option("--blur-across", mp.blur_across,
                                       "across-track sigma, px");
    mp.gamma_opt = mp_cmd->add_option("--gamma", mp.gamma, "contrast gamma");
    mp.depth_opt = mp_cmd->add_option("--depth", mp.depth, "PGM bit depth (8|16)");

    TrainAeOpts ta;
    auto* ta_cmd =
        app.add_subcommand("train-ae", "train the feature autoencoder");
    ta_cmd->add_option("--data", ta.data, "training image directory")->required();
    add_train_flags(ta_cmd, ta.train);

    TrainGanOpts tg;
    auto* tg_cmd = app.add_subcommand(
        "train-gan", "adversarially refine renders toward the pseudo-real set");
    tg_cmd->add_option("--renders", tg.renders, "rendered image directory")
        ->required();
    tg_cmd->add_option("--real", tg.real, "pseudo-real image directory")
        ->required();
    tg_cmd->add_option("--ae", tg.ae, "trained autoencoder checkpoint");
    add_train_flags(tg_cmd, tg.train);

    TrainDcganOpts td;
    auto* td_cmd = app.add_subcommand(
        "train-dcgan", "train the unconditional latent-sample baseline");
    td_cmd->add_option("--real", td.real, "pseudo-real image directory")
        ->required();
    add_train_flags(td_cmd, td.train);

    GenerateOpts ge;
    auto* ge_cmd = app.add_subcommand(
        "generate", "run a generator checkpoint over renders or latent draws");
    ge_cmd->add_option("--checkpoint", ge.checkpoint, "generator checkpoint")
        ->required();
    ge_cmd->add_option("--out", ge.out, "output directory")->required();
    ge_cmd->add_option("--in", ge.in, "render directory (refiner checkpoints)");
    ge_cmd->add_option("--count", ge.count, "samples to draw (latent checkpoints)");
    ge_cmd->add_option("--seed", ge.seed, "latent seed");
    ge_cmd->add_option("--depth", ge.depth, "PGM bit depth (8|16)");

    EvalFidOpts ef;
    auto* ef_cmd = app.add_subcommand(
        "eval-fid", "distribution distance between two image directories");
    ef_cmd->add_option("--a", ef.a, "first image directory")->required();
    ef_cmd->add_option("--b", ef.b, "second image directory")->required();
    ef_cmd->add_option("--ae", ef.ae, "trained autoencoder checkpoint");
    ef_cmd->add_option("--out", ef.out, "optional report directory");

    EvalNnOpts en;
    auto* en_cmd = app.add_subcommand(
        "eval-nn", "nearest training neighbors of each query image");
    en_cmd->add_option("--query", en.query, "query image directory")->required();
    en_cmd->add_option("--data", en.data, "reference image directory")->required();
    en_cmd->add_option("--out", en.out, "report directory")->required();
    en_cmd->add_option("--k", en.k, "neighbors per query");
    en_cmd->add_option("--metric", en.metric, "distance metric")
        ->check(CLI::IsMember({"l2", "phi"}));
    en_cmd->add_option("--ae", en.ae, "autoencoder checkpoint (phi metric)");

    EvalTsneOpts et;
    auto* et_cmd = app.add_subcommand(
        "eval-tsne", "2-d embedding of autoencoder features");
    et_cmd->add_option("--data", et.data, "image directory")->required();
    et_cmd->add_option("--ae", et.ae, "trained autoencoder checkpoint");
    et_cmd->add_option("--out", et.out, "report directory")->required();
    et_cmd->add_option("--perplexity", et.perplexity, "target perplexity");
    et_cmd->add_option("--iterations", et.iterations, "descent iterations");
    et_cmd->add_option("--seed", et.seed, "embedding init seed");

    try {
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (rd_cmd->parsed()) return run_render_dataset(rd, out);
        if (mp_cmd->parsed()) return run_make_pseudoreal(mp, out);
        if (ta_cmd->parsed()) return run_train_ae(ta, out);
        if (tg_cmd->parsed()) return run_train_gan(tg, out);
        if (td_cmd->parsed()) return run_train_dcgan(td, out);
        if (ge_cmd->parsed()) return run_generate(ge, out);
        if (ef_cmd->parsed()) return run_eval_fid(ef, out);
        if (en_cmd->parsed()) return run_eval_nn(en, out);
        if (et_cmd->parsed()) return run_eval_tsne(et, out);
    } catch (const ParamError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}

}  // namespace cli
}  // namespace sasforge
