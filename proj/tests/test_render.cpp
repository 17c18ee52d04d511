#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <vector>

#include "sasforge/render.hpp"
#include "sasforge/rng.hpp"
#include "sasforge/scene.hpp"

using namespace sasforge;

namespace {

// Point membership in the solid capped cylinder (no floor clip).
bool inside_cylinder_solid(const Vec3& p, const CylinderTarget& t, double cz) {
    const Vec3 axis{std::cos(t.yaw_rad), std::sin(t.yaw_rad), 0.0};
    const Vec3 q{p.x - t.center_xy_m.x, p.y - t.center_xy_m.y, p.z - cz};
    const double axial = q.dot(axis);
    if (std::abs(axial) > 0.5 * t.length_m) return false;
    const Vec3 radial = q - axis * axial;
    return radial.dot(radial) <= t.radius_m * t.radius_m;
}

// March the ray, bisect every boundary crossing of the solid, and return the
// nearest crossing whose height clears the local floor. Mirrors the clipping
// rule the analytic intersector documents.
std::optional<double> march_cylinder(const Ray& ray, const CylinderTarget& t,
                                     double floor_z, double t_end, double dt) {
    const double cz = floor_z + t.radius_m - 2.0 * t.radius_m * t.burial_frac;
    bool prev = inside_cylinder_solid(ray.origin, t, cz);
    for (double tc = dt; tc <= t_end; tc += dt) {
        const Vec3 p = ray.origin + ray.dir * tc;
        const bool cur = inside_cylinder_solid(p, t, cz);
        if (cur != prev) {
            double lo = tc - dt, hi = tc;
            for (int k = 0; k < 80; ++k) {
                const double mid = 0.5 * (lo + hi);
                if (inside_cylinder_solid(ray.origin + ray.dir * mid, t, cz) == prev)
                    lo = mid;
                else
                    hi = mid;
            }
            const double th = 0.5 * (lo + hi);
            const double z = ray.origin.z + th * ray.dir.z;
            if (z >= floor_z - 1e-9) return th;
            prev = cur;
        }
    }
    return std::nullopt;
}

std::optional<double> march_heightmap(const Ray& ray, const Heightmap& hm,
                                      double t_end, double dt) {
    auto above = [&](double tc) {
        const Vec3 p = ray.origin + ray.dir * tc;
        if (!hm.contains(p.x, p.y)) return true;  // outside the extent: no surface
        return p.z > hm.height_at(p.x, p.y);
    };
    bool prev = above(0.0);
    for (double tc = dt; tc <= t_end; tc += dt) {
        const bool cur = above(tc);
        if (cur != prev) {
            double lo = tc - dt, hi = tc;
            for (int k = 0; k < 80; ++k) {
                const double mid = 0.5 * (lo + hi);
                if (above(mid) == prev)
                    lo = mid;
                else
                    hi = mid;
            }
            const double th = 0.5 * (lo + hi);
            const Vec3 p = ray.origin + ray.dir * th;
            if (hm.contains(p.x, p.y)) return th;
            prev = cur;
        }
    }
    return std::nullopt;
}

Scene flat_scene_single_distant_light() {
    SceneConfig c = default_chip_config(64);
    c.seafloor.rms_height_m = 0.0;
    c.layout = TargetLayout::None;
    c.lights.count = 1;
    c.lights.track_start_m = {0.0, 0.0};
    c.lights.track_end_m = {0.0, 0.0};
    c.altitude_m = 1.0e6;
    c.background_noise_sigma = 0.0;
    return build_scene(c);
}

}  // namespace

TEST_CASE("cylinder intersection agrees with a marching oracle") {
    Pcg32 rng(2024, 77);
    int hits = 0;
    for (int trial = 0; trial < 60; ++trial) {
        CylinderTarget t;
        t.center_xy_m = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        t.length_m = rng.uniform(0.5, 3.0);
        t.radius_m = rng.uniform(0.1, 0.5);
        t.yaw_rad = rng.uniform(0.0, 6.28);
        t.burial_frac = rng.uniform(0.0, 1.0);
        const double floor_z = rng.uniform(-0.2, 0.2);

        // Aim at the vicinity of the body from a random direction.
        const double az = rng.uniform(0.0, 6.28), el = rng.uniform(0.1, 1.5);
        const Vec3 origin{t.center_xy_m.x + 6 * std::cos(az) * std::cos(el),
                          t.center_xy_m.y + 6 * std::sin(az) * std::cos(el),
                          floor_z + 6 * std::sin(el)};
        const Vec3 aim{t.center_xy_m.x + rng.uniform(-0.4, 0.4),
                       t.center_xy_m.y + rng.uniform(-0.4, 0.4),
                       floor_z + rng.uniform(0.0, 0.4)};
        const Ray ray{origin, (aim - origin).normalized()};

        const auto analytic = intersect_cylinder(ray, t, floor_z);
        const auto marched = march_cylinder(ray, t, floor_z, 14.0, 4e-4);
        REQUIRE(analytic.has_value() == marched.has_value());
        if (analytic) {
            ++hits;
            REQUIRE(analytic->t == Catch::Approx(*marched).margin(1e-6));
            REQUIRE(analytic->normal.norm() == Catch::Approx(1.0).margin(1e-9));
        }
    }
    REQUIRE(hits > 15);  // the trial set must actually exercise hits
}

TEST_CASE("fully buried cylinder is never hit") {
    CylinderTarget t;
    t.burial_frac = 1.0;
    const Ray down{{0.0, 0.0, 5.0}, {0.0, 0.0, -1.0}};
    REQUIRE_FALSE(intersect_cylinder(down, t, 0.0).has_value());

    t.burial_frac = 0.0;  // proud body: top at one diameter above the floor
    const auto hit = intersect_cylinder(down, t, 0.0);
    REQUIRE(hit.has_value());
    REQUIRE(5.0 - hit->t == Catch::Approx(2 * t.radius_m).margin(1e-12));
    REQUIRE(hit->normal.z == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("half buried cylinder keeps its upper half") {
    CylinderTarget t;
    t.burial_frac = 0.5;  // axis exactly at the floor
    const Ray down{{0.0, 0.0, 5.0}, {0.0, 0.0, -1.0}};
    const auto hit = intersect_cylinder(down, t, 0.0);
    REQUIRE(hit.has_value());
    REQUIRE(5.0 - hit->t == Catch::Approx(t.radius_m).margin(1e-12));

    // A ray skimming below the floor line must pass through untouched.
    const Ray skim{{-5.0, 0.1, -0.1}, {1.0, 0.0, 0.0}};
    REQUIRE_FALSE(intersect_cylinder(skim, t, 0.0).has_value());
}

TEST_CASE("heightmap intersection agrees with a marching oracle") {
    SeafloorSpec s;
    s.grid_size = 64;
    s.extent_m = 8.0;
    s.rms_height_m = 0.05;
    s.correlation_length_m = 0.5;
    s.seed = 11;
    const Heightmap hm = synthesize_heightmap(s);

    Pcg32 rng(555, 1);
    int hits = 0;
    for (int trial = 0; trial < 120; ++trial) {
        const Vec3 origin{rng.uniform(-3.5, 3.5), rng.uniform(-3.5, 3.5),
                          hm.max_height() + rng.uniform(0.5, 2.0)};
        Vec3 dir{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                 -rng.uniform(0.25, 1.0)};
        dir = dir.normalized();
        const Ray ray{origin, dir};

        const auto analytic = intersect_heightmap(ray, hm);
        const auto marched = march_heightmap(ray, hm, 30.0, 2e-3);
        REQUIRE(analytic.has_value() == marched.has_value());
        if (analytic) {
            ++hits;
            REQUIRE(analytic->t == Catch::Approx(*marched).margin(1e-6));
            REQUIRE(analytic->normal.z > 0.0);
            REQUIRE(analytic->normal.norm() == Catch::Approx(1.0).margin(1e-9));
        }
    }
    REQUIRE(hits > 60);
}

TEST_CASE("shadow rays toward the sources agree with the marching oracle") {
    SeafloorSpec s;
    s.grid_size = 96;
    s.extent_m = 14.0;
    s.rms_height_m = 0.08;
    s.correlation_length_m = 0.4;
    s.seed = 23;
    const Heightmap hm = synthesize_heightmap(s);

    Pcg32 rng(808, 2);
    for (int trial = 0; trial < 40; ++trial) {
        const double x = rng.uniform(-4.0, 4.0), y = rng.uniform(-4.0, 4.0);
        const Vec3 start{x, y, hm.height_at(x, y) + 1e-3};
        const Vec3 light{-30.0, rng.uniform(-20.0, 20.0), 15.0};
        const Ray ray{start, (light - start).normalized()};
        const auto analytic = intersect_heightmap(ray, hm);
        const auto marched = march_heightmap(ray, hm, 45.0, 1e-3);
        REQUIRE(analytic.has_value() == marched.has_value());
        if (analytic) REQUIRE(analytic->t == Catch::Approx(*marched).margin(1e-6));
    }
}

TEST_CASE("flat seafloor under one distant source renders uniformly") {
    const Scene scene = flat_scene_single_distant_light();
    RenderConfig cfg;
    cfg.seed = 4;
    const RawImage img = render_linear(scene, cfg);
    double lo = 1e30, hi = -1e30;
    for (double v : img.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    REQUIRE(hi - lo < 1e-6);
    // ambient + intensity * (cone-gated Lambert + glint), all factors ~ 1.
    const double expect =
        cfg.ambient + scene.lights.intensity * (1.0 + cfg.specular_strength);
    REQUIRE(img.values[0] == Catch::Approx(expect).margin(1e-6));
}

TEST_CASE("raising the ambient floor strictly raises the mean") {
    SceneConfig c = default_chip_config(64);
    c.camera.pixels = 32;
    c.seafloor.grid_size = 64;
    const Scene scene = build_scene(c);
    RenderConfig cfg;
    double prev = -1.0;
    for (double ambient : {0.0, 0.02, 0.05, 0.1, 0.2}) {
        cfg.ambient = ambient;
        const double m = render_linear(scene, cfg).mean();
        REQUIRE(m > prev);
        prev = m;
    }
}

TEST_CASE("render is bit-identical across thread counts") {
    const SceneConfig c = default_chip_config(64);
    const Scene scene = build_scene(c);
    RenderConfig cfg;
    cfg.seed = 99;
    const Image one = render(scene, cfg, 1);
    const Image four = render(scene, cfg, 4);
    const Image seven = render(scene, cfg, 7);
    REQUIRE(one.pixels == four.pixels);
    REQUIRE(one.pixels == seven.pixels);
}

TEST_CASE("pixel noise is keyed by seed and position") {
    SceneConfig c = default_chip_config(64);
    const Scene scene = build_scene(c);
    RenderConfig cfg;
    cfg.seed = 1;
    const Image a = render(scene, cfg);
    const Image b = render(scene, cfg);
    REQUIRE(a.pixels == b.pixels);

    cfg.seed = 2;
    const Image other = render(scene, cfg);
    REQUIRE(a.pixels != other.pixels);

    // With noise off, the tone map applied to the linear pass reproduces
    // the full render exactly.
    SceneConfig quiet = c;
    quiet.background_noise_sigma = 0.0;
    const Scene qscene = build_scene(quiet);
    cfg.seed = 1;
    const Image full = render(qscene, cfg);
    const RawImage raw = render_linear(qscene, cfg);
    for (int y = 0; y < full.height; ++y)
        for (int x = 0; x < full.width; ++x) {
            const float expect = static_cast<float>(
                std::pow(std::clamp(raw.at(x, y), 0.0, 1.0), cfg.tone_gamma));
            REQUIRE(full.at(x, y) == expect);
        }
}

TEST_CASE("proud target casts a shadow away from the sources") {
    SceneConfig c = default_chip_config(64);
    c.seafloor.rms_height_m = 0.0;  // flat floor isolates the target shadow
    c.single_target.yaw_rad = 1.5707963267948966;  // axis along +y
    c.background_noise_sigma = 0.0;
    const Scene with_target = build_scene(c);
    c.layout = TargetLayout::None;
    const Scene floor_only = build_scene(c);

    RenderConfig cfg;
    const RawImage a = render_linear(with_target, cfg);
    const RawImage b = render_linear(floor_only, cfg);

    const int P = with_target.camera.pixels;
    auto strip_mean = [&](const RawImage& img, int x0, int x1, int half_rows) {
        double s = 0;
        int n = 0;
        for (int y = P / 2 - half_rows; y < P / 2 + half_rows; ++y)
            for (int x = x0; x < x1; ++x, ++n) s += img.at(x, y);
        return s / n;
    };

    // Sources sit far west (-x); the shadow falls east, just past the body.
    const double near_shadow = strip_mean(a, 34, 38, 3);
    const double near_floor = strip_mean(b, 34, 38, 3);
    REQUIRE(near_shadow < 0.4 * near_floor);
    REQUIRE(near_shadow >= cfg.ambient - 1e-12);  // never below the ambient floor

    // Beyond the geometric shadow tip the floor is unchanged.
    REQUIRE(strip_mean(a, 44, 52, 3) ==
            Catch::Approx(strip_mean(b, 44, 52, 3)).epsilon(1e-3));
    // No shadow toward the sources.
    REQUIRE(strip_mean(a, 2, 12, 8) ==
            Catch::Approx(strip_mean(b, 2, 12, 8)).margin(1e-9));
    // The lateral surface faces the grazing light: brighter than the floor.
    REQUIRE(strip_mean(a, 29, 34, 3) > 1.2 * strip_mean(b, 29, 34, 3));
}

TEST_CASE("zero light sources is a configuration error") {
    Scene scene = build_scene(default_chip_config(64));
    scene.lights.count = 0;
    RenderConfig cfg;
    REQUIRE_THROWS_AS(render(scene, cfg), ConfigError);
}

TEST_CASE("render rejects invalid settings") {
    const Scene scene = build_scene(default_chip_config(64));
    RenderConfig cfg;
    cfg.samples_per_pixel = 0;
    REQUIRE_THROWS_AS(render(scene, cfg), ParamError);
    cfg = RenderConfig{};
    cfg.tone_gamma = 0.0;
    REQUIRE_THROWS_AS(render(scene, cfg), ParamError);
    cfg = RenderConfig{};
    cfg.ambient = 1.0;
    REQUIRE_THROWS_AS(render(scene, cfg), ParamError);
}

TEST_CASE("default chip renders comfortably fast") {
    const Scene scene = build_scene(default_chip_config(64));
    RenderConfig cfg;
    render(scene, cfg, 1);  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    render(scene, cfg, 1);
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    REQUIRE(ms < 3000.0);
}
