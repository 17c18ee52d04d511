#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "sasforge/common.hpp"
#include "sasforge/tensor.hpp"

namespace sasforge {

// Binary weight file: magic "SFW1", a u32 format version, a table of named
// shapes, then the float32 payloads in declaration order. All integers and
// floats little-endian. Round-trips are bitwise exact.

using NamedTensor = std::pair<std::string, Tensor<float>>;

namespace ckpt_detail {

static_assert(sizeof(float) == 4, "float32 payloads assume 4-byte float");

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw DataError("checkpoint: truncated file " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline bool host_is_little_endian() {
    const std::uint32_t probe = 1;
    unsigned char first;
    std::memcpy(&first, &probe, 1);
    return first == 1;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<NamedTensor>& params) {
    using namespace ckpt_detail;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
    out.write("SFW1", 4);
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (const auto& [name, t] : params) {
        if (host_is_little_endian()) {
            out.write(reinterpret_cast<const char*>(t.data.data()),
                      static_cast<std::streamsize>(t.data.size() * 4));
        } else {
            for (float v : t.data) {
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                put_u32(out, bits);
            }
        }
    }
    if (!out) throw DataError("checkpoint: write failed for " + path);
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "SFW1", 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    const std::uint32_t version = get_u32(in, path);
    if (version != 1)
        throw DataError("checkpoint: unsupported version " + std::to_string(version) +
                        " in " + path);
    const std::uint32_t count = get_u32(in, path);
    std::vector<std::string> names(count);
    std::vector<std::vector<int>> shapes(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(in, path);
        if (name_len > 4096) throw DataError("checkpoint: oversized name in " + path);
        names[i].resize(name_len);
        in.read(names[i].data(), name_len);
        if (static_cast<std::uint32_t>(in.gcount()) != name_len)
            throw DataError("checkpoint: truncated file " + path);
        const std::uint32_t rank = get_u32(in, path);
        if (rank > 8) throw DataError("checkpoint: oversized rank in " + path);
        shapes[i].resize(rank);
        for (std::uint32_t r = 0; r < rank; ++r) {
            const std::uint32_t d = get_u32(in, path);
            if (d == 0 || d > (1u << 28))
                throw DataError("checkpoint: bad dimension in " + path);
            shapes[i][r] = static_cast<int>(d);
        }
    }
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor<float> t(shapes[i]);
        if (host_is_little_endian()) {
            in.read(reinterpret_cast<char*>(t.data.data()),
                    static_cast<std::streamsize>(t.data.size() * 4));
            if (static_cast<std::size_t>(in.gcount()) != t.data.size() * 4)
                throw DataError("checkpoint: truncated payload in " + path);
        } else {
            for (auto& v : t.data) {
                const std::uint32_t bits = get_u32(in, path);
                std::memcpy(&v, &bits, 4);
            }
        }
        out.emplace_back(std::move(names[i]), std::move(t));
    }
    return out;
}

// Copies loaded tensors into a model's parameter list, matching by name and
// shape. The model defines which parameters must exist. Values pass through
// float32, the checkpoint's payload type.
template <typename Model>
void load_parameters(Model& model, const std::vector<NamedTensor>& loaded,
                     const std::string& what) {
    if (loaded.size() != model.params.size())
        throw DataError(what + ": checkpoint has " + std::to_string(loaded.size()) +
                        " tensors, model expects " +
                        std::to_string(model.params.size()));
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        auto& [name, var] = model.params[i];
        if (loaded[i].first != name)
            throw DataError(what + ": parameter " + std::to_string(i) + " is '" +
                            loaded[i].first + "', expected '" + name + "'");
        if (loaded[i].second.shape != var.shape())
            throw DataError(what + ": shape mismatch for '" + name + "': file has " +
                            shape_str(loaded[i].second.shape) + ", model has " +
                            shape_str(var.shape()));
        auto& dst = var.value_mut();
        for (std::size_t j = 0; j < dst.data.size(); ++j)
            dst.data[j] = loaded[i].second.data[j];
    }
}

template <typename Model>
std::vector<NamedTensor> snapshot_parameters(const Model& model) {
    std::vector<NamedTensor> out;
    out.reserve(model.params.size());
    for (const auto& [name, var] : model.params) {
        Tensor<float> t(var.shape());
        for (std::size_t j = 0; j < t.data.size(); ++j)
            t.data[j] = static_cast<float>(var.value().data[j]);
        out.emplace_back(name, std::move(t));
    }
    return out;
}

}  // namespace sasforge
