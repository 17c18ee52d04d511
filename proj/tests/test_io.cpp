#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

#include "sasforge/checkpoint.hpp"
#include "sasforge/degrade.hpp"
#include "sasforge/manifest.hpp"
#include "sasforge/models.hpp"
#include "util.hpp"

using namespace sasforge;

TEST_CASE("checkpoint round-trip is bitwise lossless") {
    testutil::TempDir tmp;
    Pcg32 rng(5, 0x10);
    std::vector<NamedTensor> params;
    Tensor<float> a({3, 2});
    for (auto& v : a.data) v = static_cast<float>(rng.uniform(-10.0, 10.0));
    a.data[0] = 0.0f;
    a.data[1] = -0.0f;
    a.data[2] = 1.1754944e-38f;
    Tensor<float> b({4});
    for (auto& v : b.data) v = static_cast<float>(rng.gaussian());
    params.emplace_back("layer.weight", a);
    params.emplace_back("layer.bias", b);

    const std::string path = tmp.file("weights.sfw");
    save_checkpoint(path, params);
    const auto loaded = load_checkpoint(path);

    REQUIRE(loaded.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        REQUIRE(loaded[i].first == params[i].first);
        REQUIRE(loaded[i].second.shape == params[i].second.shape);
        REQUIRE(std::memcmp(loaded[i].second.data.data(), params[i].second.data.data(),
                            params[i].second.data.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("model weights survive a save and reload") {
    testutil::TempDir tmp;
    auto src = Autoencoder<float>::make(32, 21);
    const std::string path = tmp.file("ae.sfw");
    save_checkpoint(path, snapshot_parameters(src));

    auto dst = Autoencoder<float>::make(32, 99);  // different init
    load_parameters(dst, load_checkpoint(path), "autoencoder");
    for (std::size_t i = 0; i < src.params.size(); ++i)
        REQUIRE(dst.params[i].second.value() == src.params[i].second.value());

    Pcg32 rng(7, 0x11);
    Tensor<float> x({1, 1, 32, 32});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    const Var<float> xs(x, false);
    REQUIRE(dst.encode(xs).value() == src.encode(xs).value());
}

TEST_CASE("checkpoint loader rejects malformed files") {
    testutil::TempDir tmp;
    const std::string path = tmp.file("bad.sfw");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE";
    }
    REQUIRE_THROWS_AS(load_checkpoint(path), DataError);
    {
        std::ofstream out(path, std::ios::binary);
        out << "SFW1";  // truncated after magic
    }
    REQUIRE_THROWS_AS(load_checkpoint(path), DataError);
    REQUIRE_THROWS_AS(load_checkpoint(tmp.file("missing.sfw")), DataError);

    // valid file but wrong model
    std::vector<NamedTensor> params;
    params.emplace_back("x", Tensor<float>({2, 2}));
    save_checkpoint(path, params);
    auto model = Autoencoder<float>::make(32, 1);
    REQUIRE_THROWS_AS(load_parameters(model, load_checkpoint(path), "autoencoder"),
                      DataError);
}

TEST_CASE("manifest round-trips every field") {
    testutil::TempDir tmp;
    Manifest m;
    m.entries.push_back({"chip_0000.pgm", 12345678901234567ull, 31.5, 28.25,
                         2.718281828459045, 0.125, "rendered"});
    m.entries.push_back({"chip_0001.pgm", 42, -3.0, 63.0, 0.0, 0.5, "pseudo-real"});
    for (const auto& e : m.entries) {
        std::ofstream touch(tmp.file(e.file));
        touch << "x";
    }
    const std::string path = tmp.file("manifest.csv");
    save_manifest(path, m);
    const auto back = load_manifest(path);
    REQUIRE(back.entries.size() == 2);
    REQUIRE(back.entries[0] == m.entries[0]);
    REQUIRE(back.entries[1] == m.entries[1]);
}

TEST_CASE("manifest rejects duplicates and missing files") {
    testutil::TempDir tmp;
    Manifest m;
    m.entries.push_back({"a.pgm", 1, 0, 0, 0, 0, "rendered"});
    m.entries.push_back({"a.pgm", 2, 0, 0, 0, 0, "rendered"});
    REQUIRE_THROWS_AS(save_manifest(tmp.file("m.csv"), m), DataError);

    m.entries.pop_back();
    save_manifest(tmp.file("m.csv"), m);  // a.pgm never written
    REQUIRE_THROWS_AS(load_manifest(tmp.file("m.csv")), DataError);
    REQUIRE_NOTHROW(load_manifest(tmp.file("m.csv"), false));
}

TEST_CASE("blur preserves constants and matches a direct convolution") {
    Image flat(9, 7, 0.37f);
    const Image blurred = degrade_detail::blur_anisotropic(flat, 1.5, 0.8);
    for (float v : blurred.pixels) REQUIRE(std::abs(v - 0.37f) < 1e-6f);

    // separable pass vs direct 2-d convolution with clamped edges
    Pcg32 rng(13, 0x12);
    Image img(11, 9);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    const double sx = 0.9, sy = 1.7;
    const Image fast = degrade_detail::blur_anisotropic(img, sx, sy);

    const auto tx = degrade_detail::gaussian_taps(sx);
    const auto ty = degrade_detail::gaussian_taps(sy);
    const int rx = static_cast<int>(tx.size()) / 2;
    const int ry = static_cast<int>(ty.size()) / 2;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int ky = -ry; ky <= ry; ++ky)
                for (int kx = -rx; kx <= rx; ++kx) {
                    const int xs = std::clamp(x + kx, 0, img.width - 1);
                    const int ys = std::clamp(y + ky, 0, img.height - 1);
                    acc += tx[kx + rx] * ty[ky + ry] * img.at(xs, ys);
                }
            REQUIRE(std::abs(fast.at(x, y) - acc) < 1e-6);
        }
}

TEST_CASE("many-look speckle collapses to the identity") {
    Pcg32 rng(17, 0x13);
    Image img(32, 32);
    for (auto& v : img.pixels) v = static_cast<float>(0.2 + 0.6 * rng.uniform());

    DegradeConfig cfg;
    cfg.speckle_looks = 4096;
    cfg.blur_sigma_along = 0.0;
    cfg.blur_sigma_across = 0.0;
    cfg.contrast_gamma = 1.0;
    cfg.seed = 3;
    const Image out = degrade_image(img, cfg, 0);
    double mean_abs = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        mean_abs += std::abs(out.pixels[i] - img.pixels[i]);
    mean_abs /= img.pixels.size();
    REQUIRE(mean_abs < 0.02);
}

TEST_CASE("single-look speckle has exponential moments") {
    DegradeConfig cfg;
    cfg.speckle_looks = 1;
    cfg.seed = 9;
    const int w = 64, h = 64;
    const auto field = speckle_field(cfg, 5, w, h);

    // pre-clamp product on a constant 0.5 image is 0.5 * s
    double mean = 0.0, sq = 0.0;
    for (double s : field) {
        const double v = 0.5 * s;
        mean += v;
        sq += v * v;
    }
    mean /= field.size();
    const double stddev = std::sqrt(sq / field.size() - mean * mean);
    REQUIRE(std::abs(mean - 0.5) < 0.03);
    REQUIRE(std::abs(stddev - 0.5) < 0.05);

    // L looks average L draws: variance shrinks by 1/L
    cfg.speckle_looks = 16;
    const auto field16 = speckle_field(cfg, 5, w, h);
    double m16 = 0.0, sq16 = 0.0;
    for (double s : field16) { m16 += s; sq16 += s * s; }
    m16 /= field16.size();
    const double sd16 = std::sqrt(sq16 / field16.size() - m16 * m16);
    REQUIRE(std::abs(m16 - 1.0) < 0.03);
    REQUIRE(std::abs(sd16 - 0.25) < 0.04);
}

TEST_CASE("degradation is deterministic and keyed by image index") {
    Pcg32 rng(19, 0x14);
    Image img(24, 24);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    DegradeConfig cfg;
    cfg.seed = 11;
    const Image a = degrade_image(img, cfg, 3);
    const Image b = degrade_image(img, cfg, 3);
    REQUIRE(a.pixels == b.pixels);
    const Image c = degrade_image(img, cfg, 4);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        diff += std::abs(a.pixels[i] - c.pixels[i]);
    REQUIRE(diff > 0.1);

    DegradeConfig other = cfg;
    other.seed = 12;
    const Image d = degrade_image(img, other, 3);
    diff = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        diff += std::abs(a.pixels[i] - d.pixels[i]);
    REQUIRE(diff > 0.1);
}

TEST_CASE("degrade validates its parameters") {
    DegradeConfig cfg;
    cfg.speckle_looks = 0;
    REQUIRE_THROWS_AS(cfg.validate(), ParamError);
    cfg.speckle_looks = 1;
    cfg.contrast_gamma = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), ParamError);
    cfg.contrast_gamma = 1.0;
    cfg.blur_sigma_along = -0.5;
    REQUIRE_THROWS_AS(cfg.validate(), ParamError);
}

TEST_CASE("image files quantize and read back within half a step") {
    testutil::TempDir tmp;
    Pcg32 rng(23, 0x15);
    Image img(17, 13);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    img.pixels[0] = 0.0f;
    img.pixels[1] = 1.0f;

    const std::string p8 = tmp.file("a.pgm");
    write_pgm(p8, img, 255);
    const Image r8 = read_pgm(p8);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        REQUIRE(std::abs(r8.pixels[i] - img.pixels[i]) <= 0.5f / 255.0f + 1e-7f);

    const std::string p16 = tmp.file("b.pgm");
    write_pgm(p16, img, 65535);
    const Image r16 = read_pgm(p16);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        REQUIRE(std::abs(r16.pixels[i] - img.pixels[i]) <= 0.5f / 65535.0f + 1e-7f);
}
