#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sasforge/common.hpp"

namespace sasforge {

// Single-channel image, row-major, intensities nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {
        if (w <= 0 || h <= 0) throw ParamError("Image: non-positive size");
    }

    float& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
    float at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
    size_t size() const { return pixels.size(); }

    bool same_size(const Image& o) const {
        return width == o.width && height == o.height;
    }

    float mean() const {
        double s = 0;
        for (float v : pixels) s += v;
        return pixels.empty() ? 0.0f : static_cast<float>(s / pixels.size());
    }
};

inline double image_l2_distance(const Image& a, const Image& b) {
    if (!a.same_size(b)) throw ShapeError("image_l2_distance: size mismatch");
    double s = 0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        s += d * d;
    }
    return std::sqrt(s);
}

namespace detail {

inline int pgm_next_token(std::istream& in, std::string& tok) {
    tok.clear();
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {  // comment to end of line
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok.empty() ? EOF : 0;
}

}  // namespace detail

// Binary PGM (P5). maxval 255 writes one byte per pixel, 65535 writes
// big-endian 16-bit words per the netpbm convention. value = round(v*maxval).
inline void write_pgm(const std::string& path, const Image& img, int maxval = 255) {
    if (maxval != 255 && maxval != 65535)
        throw ParamError("write_pgm: maxval must be 255 or 65535");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_pgm: cannot open " + path);
    out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
    std::vector<unsigned char> buf;
    buf.reserve(img.size() * (maxval == 255 ? 1 : 2));
    for (float v : img.pixels) {
        const double clamped = std::min(1.0, std::max(0.0, static_cast<double>(v)));
        const unsigned q = static_cast<unsigned>(std::lround(clamped * maxval));
        if (maxval == 255) {
            buf.push_back(static_cast<unsigned char>(q));
        } else {
            buf.push_back(static_cast<unsigned char>(q >> 8));
            buf.push_back(static_cast<unsigned char>(q & 0xff));
        }
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("write_pgm: write failed for " + path);
}

inline Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_pgm: cannot open " + path);
    std::string tok;
    if (detail::pgm_next_token(in, tok) == EOF || tok != "P5")
        throw DataError("read_pgm: not a binary PGM (P5): " + path);
    long w = 0, h = 0, maxval = 0;
    auto read_int = [&](long& dst) {
        if (detail::pgm_next_token(in, tok) == EOF)
            throw DataError("read_pgm: truncated header: " + path);
        try {
            dst = std::stol(tok);
        } catch (...) {
            throw DataError("read_pgm: bad header token '" + tok + "' in " + path);
        }
    };
    read_int(w);
    read_int(h);
    read_int(maxval);
    if (w <= 0 || h <= 0 || (maxval != 255 && maxval != 65535))
        throw DataError("read_pgm: unsupported dimensions/maxval in " + path);
    // Exactly one whitespace byte separates the header from the raster; the
    // token reader has already consumed it.
    Image img(static_cast<int>(w), static_cast<int>(h));
    const size_t n = img.size();
    const size_t bytes = n * (maxval == 255 ? 1 : 2);
    std::vector<unsigned char> buf(bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (static_cast<size_t>(in.gcount()) != bytes)
        throw DataError("read_pgm: truncated raster in " + path);
    const float scale = 1.0f / static_cast<float>(maxval);
    if (maxval == 255) {
        for (size_t i = 0; i < n; ++i) img.pixels[i] = buf[i] * scale;
    } else {
        for (size_t i = 0; i < n; ++i) {
            const unsigned q = (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1];
            img.pixels[i] = q * scale;
        }
    }
    return img;
}

}  // namespace sasforge
