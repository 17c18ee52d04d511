#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sasforge/common.hpp"
#include "sasforge/config.hpp"
#include "sasforge/rng.hpp"

namespace sasforge {

struct Vec2 {
    double x = 0, y = 0;
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

// ---------------------------------------------------------------------------
// Domain types. Lengths are meters, angles radians throughout.
// ---------------------------------------------------------------------------

struct SeafloorSpec {
    int grid_size = 128;              // nodes per side, >= 2
    double extent_m = 14.0;           // physical side length
    double rms_height_m = 0.02;       // target rms of the synthesized field
    double correlation_length_m = 0.5;
    std::uint64_t seed = 0;

    friend bool operator==(const SeafloorSpec&, const SeafloorSpec&) = default;
};

inline void validate(const SeafloorSpec& s) {
    if (s.grid_size < 2) throw ParamError("seafloor: grid_size must be >= 2");
    if (!(s.extent_m > 0)) throw ParamError("seafloor: extent_m must be > 0");
    if (!(s.rms_height_m >= 0)) throw ParamError("seafloor: rms_height_m must be >= 0");
    if (!(s.correlation_length_m > 0))
        throw ParamError("seafloor: correlation_length_m must be > 0");
}

// Square grid of heights at nodes spanning [-extent/2, extent/2]^2.
struct Heightmap {
    std::vector<double> grid;  // row-major, side*side nodes
    int side = 0;
    double extent_m = 0;

    double node_spacing() const { return extent_m / (side - 1); }

    double at(int i, int j) const {  // i = row (y), j = col (x)
        return grid[static_cast<size_t>(i) * side + j];
    }
    double& at(int i, int j) { return grid[static_cast<size_t>(i) * side + j]; }

    bool contains(double x, double y) const {
        const double h = extent_m / 2;
        return x >= -h && x <= h && y >= -h && y <= h;
    }

    // Bilinear height; coordinates clamped to the grid.
    double height_at(double x, double y) const {
        double u = (x + extent_m / 2) / node_spacing();
        double v = (y + extent_m / 2) / node_spacing();
        u = std::clamp(u, 0.0, static_cast<double>(side - 1));
        v = std::clamp(v, 0.0, static_cast<double>(side - 1));
        int j = std::min(static_cast<int>(u), side - 2);
        int i = std::min(static_cast<int>(v), side - 2);
        const double fu = u - j, fv = v - i;
        const double h00 = at(i, j), h01 = at(i, j + 1);
        const double h10 = at(i + 1, j), h11 = at(i + 1, j + 1);
        return h00 * (1 - fu) * (1 - fv) + h01 * fu * (1 - fv) +
               h10 * (1 - fu) * fv + h11 * fu * fv;
    }

    double min_height() const {
        return *std::min_element(grid.begin(), grid.end());
    }
    double max_height() const {
        return *std::max_element(grid.begin(), grid.end());
    }

    friend bool operator==(const Heightmap&, const Heightmap&) = default;
};

struct CylinderTarget {
    Vec2 center_xy_m;
    double length_m = 2.0;
    double radius_m = 0.25;
    double yaw_rad = 0.0;        // rotation about vertical, 0 = axis along +x
    double burial_frac = 0.0;    // fraction of diameter below the local floor
    double roughness_amp = 0.0;  // normal perturbation, relative to radius

    friend bool operator==(const CylinderTarget&, const CylinderTarget&) = default;
};

inline void validate(const CylinderTarget& t) {
    if (!(t.length_m > 0)) throw ParamError("target: length_m must be > 0");
    if (!(t.radius_m > 0)) throw ParamError("target: radius_m must be > 0");
    if (!(t.burial_frac >= 0 && t.burial_frac <= 1))
        throw ParamError("target: burial_frac must be in [0,1]");
    if (!(t.roughness_amp >= 0))
        throw ParamError("target: roughness_amp must be >= 0");
}

struct LightArraySpec {
    int count = 33;
    Vec2 track_start_m{-30.0, -20.0};
    Vec2 track_end_m{-30.0, 20.0};
    double altitude_m = 15.0;
    double cone_half_angle_rad = 1.35;
    double intensity = 0.09;  // per-source radiance scale

    friend bool operator==(const LightArraySpec&, const LightArraySpec&) = default;
};

inline void validate(const LightArraySpec& l) {
    if (l.count < 1) throw ParamError("lights: count must be >= 1");
    if (!(l.altitude_m > 0)) throw ParamError("lights: altitude_m must be > 0");
    if (!(l.cone_half_angle_rad > 0 && l.cone_half_angle_rad < 1.5707963267948966))
        throw ParamError("lights: cone_half_angle_rad must be in (0, pi/2)");
}

// Evenly spaced source positions along the track segment at fixed altitude.
struct LightPos {
    double x, y, z;
};

inline std::vector<LightPos> light_positions(const LightArraySpec& l) {
    std::vector<LightPos> pts;
    pts.reserve(l.count);
    for (int k = 0; k < l.count; ++k) {
        const double t = (l.count == 1) ? 0.5 : static_cast<double>(k) / (l.count - 1);
        pts.push_back({l.track_start_m.x + t * (l.track_end_m.x - l.track_start_m.x),
                       l.track_start_m.y + t * (l.track_end_m.y - l.track_start_m.y),
                       l.altitude_m});
    }
    return pts;
}

struct CameraSpec {
    Vec2 center_xy_m;
    double footprint_m = 10.0;  // imaged square side
    int pixels = 64;

    friend bool operator==(const CameraSpec&, const CameraSpec&) = default;
};

inline void validate(const CameraSpec& c) {
    if (!(c.footprint_m > 0)) throw ParamError("camera: footprint_m must be > 0");
    if (c.pixels < 16) throw ParamError("camera: pixels must be >= 16");
}

struct Scene {
    Heightmap heightmap;
    std::vector<CylinderTarget> targets;
    LightArraySpec lights;
    CameraSpec camera;
    double background_noise_sigma = 0.0;

    friend bool operator==(const Scene&, const Scene&) = default;
};

// ---------------------------------------------------------------------------
// Heightmap synthesis: white Gaussian noise filtered with a separable
// periodic Gaussian (a Gaussian frequency-domain multiplier), then rescaled
// so the sample rms equals rms_height_m exactly. The resulting correlation
// function is exp(-r^2 / correlation_length^2).
// ---------------------------------------------------------------------------
inline Heightmap synthesize_heightmap(const SeafloorSpec& spec) {
    validate(spec);
    Heightmap hm;
    hm.side = spec.grid_size;
    hm.extent_m = spec.extent_m;
    const size_t n = static_cast<size_t>(hm.side) * hm.side;
    hm.grid.assign(n, 0.0);
    if (spec.rms_height_m == 0.0) return hm;

    const int g = hm.side;
    std::vector<double> noise(n);
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j)
            noise[static_cast<size_t>(i) * g + j] =
                hash_gaussian(spec.seed, static_cast<std::uint64_t>(i),
                              static_cast<std::uint64_t>(j));

    // Kernel std in nodes; correlation exp(-r^2/l^2) needs kernel std l/2.
    const double dx = hm.node_spacing();
    const double sigma_px = std::max(1e-9, 0.5 * spec.correlation_length_m / dx);
    const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma_px)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * (k / sigma_px) * (k / sigma_px));
        ksum += kernel[k + radius];
    }
    for (double& k : kernel) k /= ksum;

    // Separable convolution with periodic wrap keeps the field stationary.
    std::vector<double> tmp(n);
    auto wrap = [g](int idx) {
        idx %= g;
        return idx < 0 ? idx + g : idx;
    };
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) {
            double s = 0;
            for (int k = -radius; k <= radius; ++k)
                s += kernel[k + radius] * noise[static_cast<size_t>(i) * g + wrap(j + k)];
            tmp[static_cast<size_t>(i) * g + j] = s;
        }
    for (int j = 0; j < g; ++j)
        for (int i = 0; i < g; ++i) {
            double s = 0;
            for (int k = -radius; k <= radius; ++k)
                s += kernel[k + radius] * tmp[static_cast<size_t>(wrap(i + k)) * g + j];
            hm.grid[static_cast<size_t>(i) * g + j] = s;
        }

    double mean = 0;
    for (double v : hm.grid) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (double& v : hm.grid) {
        v -= mean;
        var += v * v;
    }
    var /= static_cast<double>(n);
    const double scale = spec.rms_height_m / std::sqrt(std::max(var, 1e-300));
    for (double& v : hm.grid) v *= scale;
    return hm;
}

// ---------------------------------------------------------------------------
// Target fields: regular grid of pitch spacing_m centered in the extent,
// floor(extent/spacing) cells per side, random yaw and burial per cell.
// ---------------------------------------------------------------------------
struct TargetFieldAttrs {
    double length_m = 2.0;
    double radius_m = 0.25;
    double roughness_amp = 0.35;
    double burial_min = 0.0;
    double burial_max = 0.5;

    friend bool operator==(const TargetFieldAttrs&, const TargetFieldAttrs&) = default;
};

inline std::vector<CylinderTarget> sample_target_field(
    double extent_m, double spacing_m, std::uint64_t seed,
    const TargetFieldAttrs& attrs = {}) {
    if (!(spacing_m > 0)) throw ParamError("sample_target_field: spacing_m must be > 0");
    if (!(spacing_m <= extent_m))
        throw ParamError("sample_target_field: spacing_m must be <= extent_m");
    const int per_side = static_cast<int>(std::floor(extent_m / spacing_m));
    const double origin = -0.5 * per_side * spacing_m + 0.5 * spacing_m;
    Pcg32 rng(seed, /*stream=*/0x7a4fULL);
    std::vector<CylinderTarget> targets;
    targets.reserve(static_cast<size_t>(per_side) * per_side);
    for (int r = 0; r < per_side; ++r)
        for (int c = 0; c < per_side; ++c) {
            CylinderTarget t;
            t.center_xy_m = {origin + c * spacing_m, origin + r * spacing_m};
            t.length_m = attrs.length_m;
            t.radius_m = attrs.radius_m;
            t.roughness_amp = attrs.roughness_amp;
            t.yaw_rad = rng.uniform(0.0, 6.283185307179586477);
            t.burial_frac = rng.uniform(attrs.burial_min, attrs.burial_max);
            targets.push_back(t);
        }
    return targets;
}

// ---------------------------------------------------------------------------
// Scene configuration. Mirrors the config file sections:
// [seafloor] [targets] [lights] [camera] [noise].
// ---------------------------------------------------------------------------
enum class TargetLayout { None, Single, Grid };

struct SceneConfig {
    SeafloorSpec seafloor;

    TargetLayout layout = TargetLayout::Single;
    CylinderTarget single_target;  // used when layout == Single
    double grid_spacing_m = 5.0;   // used when layout == Grid
    std::uint64_t target_seed = 0;
    TargetFieldAttrs field_attrs;

    LightArraySpec lights;              // altitude resolved at build time
    std::optional<double> altitude_m;   // explicit override
    double max_range_m = 150.0;         // altitude default = 0.1 * max range

    CameraSpec camera;
    double background_noise_sigma = 0.03;

    friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

inline const char* layout_name(TargetLayout l) {
    switch (l) {
        case TargetLayout::None: return "none";
        case TargetLayout::Single: return "single";
        case TargetLayout::Grid: return "grid";
    }
    return "single";
}

inline TargetLayout layout_from_name(const std::string& s) {
    if (s == "none") return TargetLayout::None;
    if (s == "single") return TargetLayout::Single;
    if (s == "grid") return TargetLayout::Grid;
    throw ConfigError("targets.layout: expected none|single|grid, got '" + s + "'");
}

inline SceneConfig parse_scene_config(const ConfigFile& f) {
    SceneConfig c;
    c.seafloor.grid_size =
        static_cast<int>(f.get_int("seafloor", "grid_size", c.seafloor.grid_size));
    c.seafloor.extent_m = f.get_double("seafloor", "extent_m", c.seafloor.extent_m);
    c.seafloor.rms_height_m =
        f.get_double("seafloor", "rms_height_m", c.seafloor.rms_height_m);
    c.seafloor.correlation_length_m = f.get_double(
        "seafloor", "correlation_length_m", c.seafloor.correlation_length_m);
    c.seafloor.seed = f.get_u64("seafloor", "seed", c.seafloor.seed);

    c.layout = layout_from_name(
        f.get_string("targets", "layout", layout_name(c.layout)));
    c.single_target.center_xy_m.x =
        f.get_double("targets", "center_x_m", c.single_target.center_xy_m.x);
    c.single_target.center_xy_m.y =
        f.get_double("targets", "center_y_m", c.single_target.center_xy_m.y);
    c.single_target.length_m =
        f.get_double("targets", "length_m", c.single_target.length_m);
    c.single_target.radius_m =
        f.get_double("targets", "radius_m", c.single_target.radius_m);
    c.single_target.yaw_rad =
        f.get_double("targets", "yaw_rad", c.single_target.yaw_rad);
    c.single_target.burial_frac =
        f.get_double("targets", "burial_frac", c.single_target.burial_frac);
    c.single_target.roughness_amp =
        f.get_double("targets", "roughness_amp", c.single_target.roughness_amp);
    c.grid_spacing_m = f.get_double("targets", "spacing_m", c.grid_spacing_m);
    c.target_seed = f.get_u64("targets", "seed", c.target_seed);
    c.field_attrs.length_m = c.single_target.length_m;
    c.field_attrs.radius_m = c.single_target.radius_m;
    c.field_attrs.roughness_amp = c.single_target.roughness_amp;
    c.field_attrs.burial_min =
        f.get_double("targets", "burial_min", c.field_attrs.burial_min);
    c.field_attrs.burial_max =
        f.get_double("targets", "burial_max", c.field_attrs.burial_max);

    c.lights.count = static_cast<int>(f.get_int("lights", "count", c.lights.count));
    c.lights.track_start_m.x =
        f.get_double("lights", "track_start_x_m", c.lights.track_start_m.x);
    c.lights.track_start_m.y =
        f.get_double("lights", "track_start_y_m", c.lights.track_start_m.y);
    c.lights.track_end_m.x =
        f.get_double("lights", "track_end_x_m", c.lights.track_end_m.x);
    c.lights.track_end_m.y =
        f.get_double("lights", "track_end_y_m", c.lights.track_end_m.y);
    c.lights.cone_half_angle_rad = f.get_double(
        "lights", "cone_half_angle_rad", c.lights.cone_half_angle_rad);
    c.lights.intensity = f.get_double("lights", "intensity", c.lights.intensity);
    c.max_range_m = f.get_double("lights", "max_range_m", c.max_range_m);
    if (f.has("lights", "altitude_m"))
        c.altitude_m = f.get_double("lights", "altitude_m", 0.0);

    c.camera.center_xy_m.x =
        f.get_double("camera", "center_x_m", c.camera.center_xy_m.x);
    c.camera.center_xy_m.y =
        f.get_double("camera", "center_y_m", c.camera.center_xy_m.y);
    c.camera.footprint_m = f.get_double("camera", "footprint_m", c.camera.footprint_m);
    c.camera.pixels = static_cast<int>(f.get_int("camera", "pixels", c.camera.pixels));

    c.background_noise_sigma =
        f.get_double("noise", "background_sigma", c.background_noise_sigma);
    return c;
}

inline SceneConfig load_scene_config(const std::string& path) {
    const ConfigFile f = ConfigFile::parse_file(path);
    SceneConfig c = parse_scene_config(f);
    f.finish();
    return c;
}

namespace detail {
inline std::string fmt_g17(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}
}  // namespace detail

inline std::string scene_config_to_string(const SceneConfig& c) {
    std::ostringstream os;
    using detail::fmt_g17;
    os << "[seafloor]\n";
    os << "grid_size = " << c.seafloor.grid_size << "\n";
    os << "extent_m = " << fmt_g17(c.seafloor.extent_m) << "\n";
    os << "rms_height_m = " << fmt_g17(c.seafloor.rms_height_m) << "\n";
    os << "correlation_length_m = " << fmt_g17(c.seafloor.correlation_length_m) << "\n";
    os << "seed = " << c.seafloor.seed << "\n\n";
    os << "[targets]\n";
    os << "layout = " << layout_name(c.layout) << "\n";
    os << "center_x_m = " << fmt_g17(c.single_target.center_xy_m.x) << "\n";
    os << "center_y_m = " << fmt_g17(c.single_target.center_xy_m.y) << "\n";
    os << "length_m = " << fmt_g17(c.single_target.length_m) << "\n";
    os << "radius_m = " << fmt_g17(c.single_target.radius_m) << "\n";
    os << "yaw_rad = " << fmt_g17(c.single_target.yaw_rad) << "\n";
    os << "burial_frac = " << fmt_g17(c.single_target.burial_frac) << "\n";
    os << "roughness_amp = " << fmt_g17(c.single_target.roughness_amp) << "\n";
    os << "spacing_m = " << fmt_g17(c.grid_spacing_m) << "\n";
    os << "seed = " << c.target_seed << "\n";
    os << "burial_min = " << fmt_g17(c.field_attrs.burial_min) << "\n";
    os << "burial_max = " << fmt_g17(c.field_attrs.burial_max) << "\n\n";
    os << "[lights]\n";
    os << "count = " << c.lights.count << "\n";
    os << "track_start_x_m = " << fmt_g17(c.lights.track_start_m.x) << "\n";
    os << "track_start_y_m = " << fmt_g17(c.lights.track_start_m.y) << "\n";
    os << "track_end_x_m = " << fmt_g17(c.lights.track_end_m.x) << "\n";
    os << "track_end_y_m = " << fmt_g17(c.lights.track_end_m.y) << "\n";
    os << "cone_half_angle_rad = " << fmt_g17(c.lights.cone_half_angle_rad) << "\n";
    os << "intensity = " << fmt_g17(c.lights.intensity) << "\n";
    os << "max_range_m = " << fmt_g17(c.max_range_m) << "\n";
    if (c.altitude_m) os << "altitude_m = " << fmt_g17(*c.altitude_m) << "\n";
    os << "\n[camera]\n";
    os << "center_x_m = " << fmt_g17(c.camera.center_xy_m.x) << "\n";
    os << "center_y_m = " << fmt_g17(c.camera.center_xy_m.y) << "\n";
    os << "footprint_m = " << fmt_g17(c.camera.footprint_m) << "\n";
    os << "pixels = " << c.camera.pixels << "\n\n";
    os << "[noise]\n";
    os << "background_sigma = " << fmt_g17(c.background_noise_sigma) << "\n";
    return os.str();
}

// Builds the scene: synthesizes the heightmap, lays out targets, resolves
// the light altitude (default one tenth of the maximum range), validates.
inline Scene build_scene(const SceneConfig& cfg) {
    validate(cfg.seafloor);
    validate(cfg.camera);
    if (!(cfg.max_range_m > 0)) throw ParamError("lights: max_range_m must be > 0");

    Scene scene;
    scene.heightmap = synthesize_heightmap(cfg.seafloor);
    scene.camera = cfg.camera;
    scene.lights = cfg.lights;
    scene.lights.altitude_m =
        cfg.altitude_m ? *cfg.altitude_m : 0.1 * cfg.max_range_m;
    validate(scene.lights);
    scene.background_noise_sigma = cfg.background_noise_sigma;
    if (!(cfg.background_noise_sigma >= 0))
        throw ParamError("noise: background_sigma must be >= 0");

    switch (cfg.layout) {
        case TargetLayout::None:
            break;
        case TargetLayout::Single:
            scene.targets.push_back(cfg.single_target);
            break;
        case TargetLayout::Grid:
            scene.targets = sample_target_field(cfg.seafloor.extent_m,
                                                cfg.grid_spacing_m,
                                                cfg.target_seed, cfg.field_attrs);
            break;
    }
    for (size_t i = 0; i < scene.targets.size(); ++i) {
        const CylinderTarget& t = scene.targets[i];
        validate(t);
        if (!scene.heightmap.contains(t.center_xy_m.x, t.center_xy_m.y)) {
            std::ostringstream os;
            os << "scene: target " << i << " at (" << t.center_xy_m.x << ", "
               << t.center_xy_m.y << ") lies outside the heightmap extent "
               << cfg.seafloor.extent_m << " m";
            throw ParamError(os.str());
        }
    }
    return scene;
}

// Desk presets: 64x64 chips for training/tests and a 256x256 variant.
inline SceneConfig default_chip_config(int size = 64) {
    if (size != 64 && size != 256)
        throw ParamError("default_chip_config: size must be 64 or 256");
    SceneConfig c;
    c.seafloor = SeafloorSpec{size == 64 ? 128 : 384, 14.0, 0.02, 0.5, 1};
    c.layout = TargetLayout::Single;
    c.single_target = CylinderTarget{{0.0, 0.0}, 2.0, 0.25, 0.6, 0.0, 0.35};
    c.lights.count = 33;
    c.lights.track_start_m = {-30.0, -20.0};
    c.lights.track_end_m = {-30.0, 20.0};
    c.lights.cone_half_angle_rad = 1.35;
    c.lights.intensity = 0.09;
    c.altitude_m.reset();  // resolved from max_range_m at build time
    c.max_range_m = 150.0;
    c.camera = CameraSpec{{0.0, 0.0}, 10.0, size};
    c.background_noise_sigma = 0.03;
    return c;
}

}  // namespace sasforge
