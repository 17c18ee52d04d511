#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "sasforge/common.hpp"

namespace sasforge {

// Per-image dataset record. center is in pixel coordinates of the chip so
// translation experiments can be scripted directly against it.
struct ManifestEntry {
    std::string file;
    std::uint64_t scene_seed = 0;
    double center_px_x = 0.0;
    double center_px_y = 0.0;
    double yaw_rad = 0.0;
    double burial_frac = 0.0;
    std::string role;  // "rendered", "pseudo-real", "generated"

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
    std::vector<ManifestEntry> entries;

    void require_unique_files() const {
        std::unordered_set<std::string> seen;
        for (const auto& e : entries)
            if (!seen.insert(e.file).second)
                throw DataError("manifest: duplicate file name " + e.file);
    }
};

namespace manifest_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace manifest_detail

inline void save_manifest(const std::string& path, const Manifest& m) {
    m.require_unique_files();
    std::ofstream out(path);
    if (!out) throw DataError("manifest: cannot open " + path + " for writing");
    out << "file,scene_seed,center_px_x,center_px_y,yaw_rad,burial_frac,role\n";
    out.precision(17);
    for (const auto& e : m.entries)
        out << e.file << ',' << e.scene_seed << ',' << e.center_px_x << ','
            << e.center_px_y << ',' << e.yaw_rad << ',' << e.burial_frac << ','
            << e.role << '\n';
    if (!out) throw DataError("manifest: write failed for " + path);
}

// check_files: verify every referenced image exists next to the manifest.
inline Manifest load_manifest(const std::string& path, bool check_files = true) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest: cannot open " + path);
    std::string line;
    if (!std::getline(in, line))
        throw DataError("manifest: empty file " + path);
    Manifest m;
    const std::filesystem::path dir = std::filesystem::path(path).parent_path();
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = manifest_detail::split_csv_line(line);
        if (f.size() != 7)
            throw DataError("manifest: expected 7 fields at " + path + ":" +
                            std::to_string(lineno));
        ManifestEntry e;
        e.file = f[0];
        try {
            e.scene_seed = std::stoull(f[1]);
            e.center_px_x = std::stod(f[2]);
            e.center_px_y = std::stod(f[3]);
            e.yaw_rad = std::stod(f[4]);
            e.burial_frac = std::stod(f[5]);
        } catch (...) {
            throw DataError("manifest: bad numeric field at " + path + ":" +
                            std::to_string(lineno));
        }
        e.role = f[6];
        if (check_files && !std::filesystem::exists(dir / e.file))
            throw DataError("manifest: missing image " + (dir / e.file).string());
        m.entries.push_back(std::move(e));
    }
    m.require_unique_files();
    return m;
}

}  // namespace sasforge
