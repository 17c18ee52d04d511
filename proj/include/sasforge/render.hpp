#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sasforge/common.hpp"
#include "sasforge/config.hpp"
#include "sasforge/image.hpp"
#include "sasforge/rng.hpp"
#include "sasforge/scene.hpp"

namespace sasforge {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        return {x / n, y / n, z / n};
    }
};

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit length
};

inline void validate(const Ray& r) {
    if (std::abs(r.dir.norm() - 1.0) > 1e-9)
        throw ParamError("ray: direction must be unit length");
}

struct SurfaceHit {
    double t = 0;  // distance along the ray, meters
    Vec3 normal;   // unit, outward
};

struct RenderConfig {
    int samples_per_pixel = 1;
    double ambient = 0.06;
    double specular_exponent = 40.0;
    double specular_strength = 0.6;  // material knob, weights the glint term
    std::uint64_t seed = 0;
    double tone_gamma = 0.6;
};

inline void validate(const RenderConfig& c) {
    if (c.samples_per_pixel < 1)
        throw ParamError("render: samples_per_pixel must be >= 1");
    if (!(c.ambient >= 0 && c.ambient < 1))
        throw ParamError("render: ambient must be in [0,1)");
    if (!(c.specular_exponent > 0))
        throw ParamError("render: specular_exponent must be > 0");
    if (!(c.specular_strength >= 0))
        throw ParamError("render: specular_strength must be >= 0");
    if (!(c.tone_gamma > 0)) throw ParamError("render: tone_gamma must be > 0");
}

inline RenderConfig parse_render_config(const ConfigFile& f) {
    RenderConfig c;
    c.samples_per_pixel = static_cast<int>(
        f.get_int("render", "samples_per_pixel", c.samples_per_pixel));
    c.ambient = f.get_double("render", "ambient", c.ambient);
    c.specular_exponent =
        f.get_double("render", "specular_exponent", c.specular_exponent);
    c.specular_strength =
        f.get_double("render", "specular_strength", c.specular_strength);
    c.seed = f.get_u64("render", "seed", c.seed);
    c.tone_gamma = f.get_double("render", "tone_gamma", c.tone_gamma);
    return c;
}

inline std::string render_config_to_string(const RenderConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "[render]\n";
    os << "samples_per_pixel = " << c.samples_per_pixel << "\n";
    os << "ambient = " << c.ambient << "\n";
    os << "specular_exponent = " << c.specular_exponent << "\n";
    os << "specular_strength = " << c.specular_strength << "\n";
    os << "seed = " << c.seed << "\n";
    os << "tone_gamma = " << c.tone_gamma << "\n";
    return os.str();
}

namespace detail {

constexpr double kRayEps = 1e-6;       // minimum accepted hit distance
constexpr double kFloorClipEps = 1e-9; // slack for the burial clip

// Smooth lattice value noise in [-1,1]; purely a function of (a, b, salt).
inline double value_noise(double a, double b, std::uint64_t salt) {
    const double fa = std::floor(a), fb = std::floor(b);
    const std::int64_t ia = static_cast<std::int64_t>(fa);
    const std::int64_t ib = static_cast<std::int64_t>(fb);
    auto corner = [&](std::int64_t i, std::int64_t j) {
        return 2.0 * hash_uniform(salt, static_cast<std::uint64_t>(i),
                                  static_cast<std::uint64_t>(j)) -
               1.0;
    };
    double u = a - fa, v = b - fb;
    u = u * u * (3 - 2 * u);
    v = v * v * (3 - 2 * v);
    const double c00 = corner(ia, ib), c01 = corner(ia + 1, ib);
    const double c10 = corner(ia, ib + 1), c11 = corner(ia + 1, ib + 1);
    return c00 * (1 - u) * (1 - v) + c01 * u * (1 - v) + c10 * (1 - u) * v +
           c11 * u * v;
}

}  // namespace detail

// Finite capped cylinder lying on (or sunk into) the seafloor. The axis is
// horizontal at height local_floor_z + r - 2r*burial_frac; hits below the
// local floor are discarded, which clips the buried part of the body.
inline std::optional<SurfaceHit> intersect_cylinder(const Ray& ray,
                                                    const CylinderTarget& target,
                                                    double local_floor_z) {
    validate(ray);
    const double r = target.radius_m;
    const double half_len = 0.5 * target.length_m;
    const Vec3 axis{std::cos(target.yaw_rad), std::sin(target.yaw_rad), 0.0};
    const Vec3 center{target.center_xy_m.x, target.center_xy_m.y,
                      local_floor_z + r - 2.0 * r * target.burial_frac};
    if (center.z + r <= local_floor_z) return std::nullopt;  // fully buried

    // Conservative bounding-sphere reject on the ray line.
    const Vec3 w = center - ray.origin;
    const Vec3 cr = w.cross(ray.dir);
    const double bound2 = half_len * half_len + r * r;
    if (cr.dot(cr) > bound2) return std::nullopt;

    const Vec3 p = ray.origin - center;
    const double da = ray.dir.dot(axis);
    const double pa = p.dot(axis);
    const Vec3 dp = ray.dir - axis * da;  // direction, axis component removed
    const Vec3 pp = p - axis * pa;

    double best_t = std::numeric_limits<double>::infinity();
    Vec3 best_n;
    auto consider = [&](double t, const Vec3& n) {
        if (t <= detail::kRayEps || t >= best_t) return;
        const double z = ray.origin.z + t * ray.dir.z;
        if (z < local_floor_z - detail::kFloorClipEps) return;  // buried part
        best_t = t;
        best_n = n;
    };

    // Lateral surface: |pp + t*dp|^2 = r^2.
    const double a = dp.dot(dp);
    if (a > 1e-16) {
        const double b = 2.0 * pp.dot(dp);
        const double c = pp.dot(pp) - r * r;
        const double disc = b * b - 4 * a * c;
        if (disc >= 0) {
            const double sq = std::sqrt(disc);
            for (const double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
                const double axial = pa + t * da;
                if (std::abs(axial) <= half_len) {
                    const Vec3 q = p + ray.dir * t;
                    const Vec3 n = (q - axis * q.dot(axis)) * (1.0 / r);
                    consider(t, n);
                }
            }
        }
    }

    // End caps: planes at +-half_len along the axis.
    if (std::abs(da) > 1e-16) {
        for (const double s : {half_len, -half_len}) {
            const double t = (s - pa) / da;
            const Vec3 q = p + ray.dir * t;
            const Vec3 radial = q - axis * q.dot(axis);
            if (radial.dot(radial) <= r * r)
                consider(t, s > 0 ? axis : axis * -1.0);
        }
    }

    if (!std::isfinite(best_t)) return std::nullopt;

    if (target.roughness_amp > 0) {
        // Perturb the normal with value noise over local surface coordinates
        // so the pattern translates and rotates with the target.
        const Vec3 q = (ray.origin + ray.dir * best_t) - center;
        const double axial = q.dot(axis);
        const Vec3 radial = q - axis * axial;
        const Vec3 side = axis.cross(Vec3{0, 0, 1});
        const double psi = std::atan2(radial.dot(Vec3{0, 0, 1}), radial.dot(side));
        const double cell = 0.6 * r;
        const double u = axial / cell;
        const double v = psi * r / cell;
        const Vec3 bump{detail::value_noise(u, v, 0x726f756768ULL + 1),
                        detail::value_noise(u, v, 0x726f756768ULL + 2),
                        detail::value_noise(u, v, 0x726f756768ULL + 3)};
        best_n = (best_n + bump * target.roughness_amp).normalized();
    }
    return SurfaceHit{best_t, best_n};
}

namespace detail {

// Grid traversal over bilinear heightmap cells. Cells are visited in ray
// order, so the first crossing found is the nearest; tmax bounds the march
// (shadow rays pass the light distance). zmin/zmax are the precomputed grid
// extremes, used to clip the march to the height band of the surface.
inline std::optional<SurfaceHit> heightmap_trace(const Ray& ray, const Heightmap& hm,
                                                 double tmax, double zmin,
                                                 double zmax) {
    const double half = hm.extent_m / 2;
    const double dx = hm.node_spacing();
    const int cells = hm.side - 1;

    // Clip the parameter range to the xy extent box.
    double t0 = 0.0, t1 = tmax;
    for (int axis = 0; axis < 2; ++axis) {
        const double o = axis == 0 ? ray.origin.x : ray.origin.y;
        const double d = axis == 0 ? ray.dir.x : ray.dir.y;
        if (std::abs(d) < 1e-15) {
            if (o < -half || o > half) return std::nullopt;
        } else {
            double ta = (-half - o) / d, tb = (half - o) / d;
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
        }
    }
    // Clip to the height band of the surface.
    if (std::abs(ray.dir.z) > 1e-15) {
        double ta = (zmin - ray.origin.z) / ray.dir.z;
        double tb = (zmax - ray.origin.z) / ray.dir.z;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    } else if (ray.origin.z > zmax || ray.origin.z < zmin) {
        return std::nullopt;
    }
    if (t0 > t1) return std::nullopt;

    auto cell_of = [&](double w) {
        return std::clamp(static_cast<int>((w + half) / dx), 0, cells - 1);
    };

    // Solves the ray-vs-bilinear-patch quadratic inside one cell.
    auto test_cell = [&](int ci, int cj, double ta, double tb)
        -> std::optional<SurfaceHit> {
        const double x0 = -half + cj * dx;
        const double y0 = -half + ci * dx;
        const double h00 = hm.at(ci, cj), h01 = hm.at(ci, cj + 1);
        const double h10 = hm.at(ci + 1, cj), h11 = hm.at(ci + 1, cj + 1);
        const double A = h01 - h00, B = h10 - h00, C = h00 - h01 - h10 + h11;
        const double u0 = (ray.origin.x - x0) / dx, du = ray.dir.x / dx;
        const double v0 = (ray.origin.y - y0) / dx, dv = ray.dir.y / dx;
        const double qa = -C * du * dv;
        const double qb = ray.dir.z - A * du - B * dv - C * (u0 * dv + v0 * du);
        const double qc = ray.origin.z - h00 - A * u0 - B * v0 - C * u0 * v0;

        double roots[2];
        int nroots = 0;
        if (std::abs(qa) < 1e-14) {
            if (std::abs(qb) > 1e-14) roots[nroots++] = -qc / qb;
        } else {
            const double disc = qb * qb - 4 * qa * qc;
            if (disc >= 0) {
                const double sq = std::sqrt(disc);
                roots[nroots++] = (-qb - sq) / (2 * qa);
                roots[nroots++] = (-qb + sq) / (2 * qa);
                if (roots[0] > roots[1]) std::swap(roots[0], roots[1]);
            }
        }
        for (int k = 0; k < nroots; ++k) {
            const double t = roots[k];
            if (t < std::max(ta, kRayEps) - 1e-12 || t > tb + 1e-12) continue;
            // Normal from central differences of the interpolated surface.
            const double hx = ray.origin.x + t * ray.dir.x;
            const double hy = ray.origin.y + t * ray.dir.y;
            const double gx =
                (hm.height_at(hx + dx, hy) - hm.height_at(hx - dx, hy)) / (2 * dx);
            const double gy =
                (hm.height_at(hx, hy + dx) - hm.height_at(hx, hy - dx)) / (2 * dx);
            const Vec3 n = Vec3{-gx, -gy, 1.0}.normalized();
            return SurfaceHit{t, n};
        }
        return std::nullopt;
    };

    // Vertical fast path: a single cell.
    if (std::abs(ray.dir.x) < 1e-15 && std::abs(ray.dir.y) < 1e-15) {
        const int cj = cell_of(ray.origin.x);
        const int ci = cell_of(ray.origin.y);
        return test_cell(ci, cj, t0, t1);
    }

    // 2-D DDA over cells.
    const double sx = ray.origin.x + (t0 + 1e-12) * ray.dir.x;
    const double sy = ray.origin.y + (t0 + 1e-12) * ray.dir.y;
    int cj = cell_of(sx), ci = cell_of(sy);
    const int step_j = ray.dir.x > 0 ? 1 : -1;
    const int step_i = ray.dir.y > 0 ? 1 : -1;
    const double tdj = std::abs(ray.dir.x) > 1e-15
                           ? dx / std::abs(ray.dir.x)
                           : std::numeric_limits<double>::infinity();
    const double tdi = std::abs(ray.dir.y) > 1e-15
                           ? dx / std::abs(ray.dir.y)
                           : std::numeric_limits<double>::infinity();
    auto boundary_t = [&](int cell, int step, double o, double d) {
        if (std::abs(d) < 1e-15) return std::numeric_limits<double>::infinity();
        const double edge = -half + (cell + (step > 0 ? 1 : 0)) * dx;
        return (edge - o) / d;
    };
    double tmj = boundary_t(cj, step_j, ray.origin.x, ray.dir.x);
    double tmi = boundary_t(ci, step_i, ray.origin.y, ray.dir.y);

    double tcur = t0;
    while (tcur <= t1 + 1e-12) {
        const double tnext = std::min({tmj, tmi, t1 + 1e-12});
        if (auto hit = test_cell(ci, cj, tcur, std::min(tnext, t1))) return hit;
        if (tmj < tmi) {
            cj += step_j;
            tcur = tmj;
            tmj += tdj;
            if (cj < 0 || cj >= cells) break;
        } else {
            ci += step_i;
            tcur = tmi;
            tmi += tdi;
            if (ci < 0 || ci >= cells) break;
        }
        if (tcur > t1 + 1e-12) break;
    }
    return std::nullopt;
}

}  // namespace detail

// Nearest intersection with the bilinear heightmap surface.
inline std::optional<SurfaceHit> intersect_heightmap(const Ray& ray,
                                                     const Heightmap& hm) {
    validate(ray);
    if (hm.side < 2) return std::nullopt;
    return detail::heightmap_trace(ray, hm,
                                   std::numeric_limits<double>::infinity(),
                                   hm.min_height(), hm.max_height());
}

// Pre-noise, pre-tone-map shading buffer in doubles.
struct RawImage {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
    double mean() const {
        double s = 0;
        for (double v : values) s += v;
        return values.empty() ? 0.0 : s / static_cast<double>(values.size());
    }
};

inline int resolve_render_threads(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SASFORGE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

namespace detail {

struct PreparedTarget {
    CylinderTarget target;
    double local_floor_z = 0;
    double top_z = 0;
};

struct PreparedScene {
    const Scene* scene = nullptr;
    std::vector<LightPos> lights;
    std::vector<PreparedTarget> targets;
    double zmin = 0, zmax = 0;  // heightmap band
    double ray_origin_z = 0;

    explicit PreparedScene(const Scene& s) : scene(&s) {
        lights = light_positions(s.lights);
        zmin = s.heightmap.min_height();
        zmax = s.heightmap.max_height();
        double top = zmax;
        for (const CylinderTarget& t : s.targets) {
            PreparedTarget pt;
            pt.target = t;
            pt.local_floor_z = s.heightmap.height_at(t.center_xy_m.x, t.center_xy_m.y);
            pt.top_z = pt.local_floor_z + t.radius_m * (2.0 - 2.0 * t.burial_frac);
            top = std::max(top, pt.top_z);
            targets.push_back(pt);
        }
        ray_origin_z = top + 1.0;
    }

    std::optional<SurfaceHit> nearest(const Ray& ray) const {
        std::optional<SurfaceHit> best = heightmap_trace(
            ray, scene->heightmap, std::numeric_limits<double>::infinity(), zmin,
            zmax);
        for (const PreparedTarget& pt : targets) {
            const auto hit = intersect_cylinder(ray, pt.target, pt.local_floor_z);
            if (hit && (!best || hit->t < best->t)) best = hit;
        }
        return best;
    }

    bool occluded(const Ray& ray, double tmax) const {
        for (const PreparedTarget& pt : targets) {
            const auto hit = intersect_cylinder(ray, pt.target, pt.local_floor_z);
            if (hit && hit->t < tmax) return true;
        }
        const auto hit = heightmap_trace(ray, scene->heightmap, tmax, zmin, zmax);
        return hit.has_value();
    }
};

inline double shade(const PreparedScene& ps, const RenderConfig& cfg,
                    const Vec3& pos, const Vec3& normal) {
    const LightArraySpec& la = ps.scene->lights;
    double v = cfg.ambient;
    for (const LightPos& lp : ps.lights) {
        const Vec3 to_light{lp.x - pos.x, lp.y - pos.y, lp.z - pos.z};
        const double dist = to_light.norm();
        const Vec3 l = to_light * (1.0 / dist);

        // Beam gating: angle between the source's downward axis and the
        // direction from source to hit, cosine falloff inside the cone.
        const double cos_axis = std::clamp(l.z, -1.0, 1.0);
        const double theta = std::acos(cos_axis);
        double cone_w = 0.0;
        if (theta < la.cone_half_angle_rad)
            cone_w = std::cos(1.5707963267948966 * theta / la.cone_half_angle_rad);

        const double diffuse = std::max(0.0, normal.dot(l));
        const Vec3 h = (l + Vec3{0, 0, 1}).normalized();
        const double glint =
            cfg.specular_strength *
            std::pow(std::max(0.0, normal.dot(h)), cfg.specular_exponent);
        const double term = cone_w * diffuse + glint;
        if (term <= 0) continue;

        const Ray shadow{pos + normal * 1e-4, l};
        if (ps.occluded(shadow, dist)) continue;
        v += la.intensity * term;
    }
    return v;
}

}  // namespace detail

// Shading pass only: one orthographic ray bundle per pixel, straight down
// over the camera footprint. Pixel (px, py) covers world
// x = cx + ((px+sx)/P - 0.5)*F, y = cy + ((py+sy)/P - 0.5)*F (row 0 = south).
inline RawImage render_linear(const Scene& scene, const RenderConfig& cfg,
                              int n_threads = 0) {
    validate(cfg);
    validate(scene.camera);
    if (scene.lights.count < 1)
        throw ConfigError("render: scene has zero light sources");
    validate(scene.lights);
    for (const CylinderTarget& t : scene.targets) validate(t);

    const detail::PreparedScene ps(scene);
    const int P = scene.camera.pixels;
    const double F = scene.camera.footprint_m;
    const double cx = scene.camera.center_xy_m.x;
    const double cy = scene.camera.center_xy_m.y;
    RawImage out;
    out.width = P;
    out.height = P;
    out.values.assign(static_cast<size_t>(P) * P, 0.0);

    auto render_rows = [&](int row_begin, int row_end) {
        for (int py = row_begin; py < row_end; ++py) {
            for (int px = 0; px < P; ++px) {
                double acc = 0;
                for (int s = 0; s < cfg.samples_per_pixel; ++s) {
                    double sx = 0.5, sy = 0.5;
                    if (cfg.samples_per_pixel > 1) {
                        sx = hash_uniform(cfg.seed ^ 0x5a5a5a5aULL,
                                          static_cast<std::uint64_t>(px),
                                          static_cast<std::uint64_t>(py), 2 * s);
                        sy = hash_uniform(cfg.seed ^ 0x5a5a5a5aULL,
                                          static_cast<std::uint64_t>(px),
                                          static_cast<std::uint64_t>(py), 2 * s + 1);
                    }
                    const double wx = cx + ((px + sx) / P - 0.5) * F;
                    const double wy = cy + ((py + sy) / P - 0.5) * F;
                    const Ray ray{{wx, wy, ps.ray_origin_z}, {0, 0, -1}};
                    if (const auto hit = ps.nearest(ray)) {
                        const Vec3 pos = ray.origin + ray.dir * hit->t;
                        acc += detail::shade(ps, cfg, pos, hit->normal);
                    }
                }
                out.values[static_cast<size_t>(py) * P + px] =
                    acc / cfg.samples_per_pixel;
            }
        }
    };

    const int threads = std::min(resolve_render_threads(n_threads), P);
    if (threads <= 1) {
        render_rows(0, P);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int k = 0; k < threads; ++k) {
            const int lo = static_cast<int>(static_cast<long>(P) * k / threads);
            const int hi = static_cast<int>(static_cast<long>(P) * (k + 1) / threads);
            pool.emplace_back(render_rows, lo, hi);
        }
        for (std::thread& th : pool) th.join();
    }
    return out;
}

// Full render: shading, additive Gaussian pixel noise keyed by (seed, x, y),
// then tone mapping v -> clamp(v)^gamma into [0,1].
inline Image render(const Scene& scene, const RenderConfig& cfg, int n_threads = 0) {
    const RawImage raw = render_linear(scene, cfg, n_threads);
    Image img(raw.width, raw.height);
    const double sigma = scene.background_noise_sigma;
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x) {
            double v = raw.at(x, y);
            if (sigma > 0)
                v += sigma * hash_gaussian(cfg.seed ^ 0x6e6f697365ULL,
                                           static_cast<std::uint64_t>(x),
                                           static_cast<std::uint64_t>(y));
            v = std::clamp(v, 0.0, 1.0);
            img.at(x, y) = static_cast<float>(std::pow(v, cfg.tone_gamma));
        }
    return img;
}

}  // namespace sasforge
