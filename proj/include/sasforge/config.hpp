#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sasforge/common.hpp"

namespace sasforge {

// Parsed `key = value` file with `[section]` headers. Lines starting with
// '#' (after whitespace) are comments. Consumers pull typed values through
// the getters; finish() then rejects any key nobody consumed, which is how
// unknown keys become errors without every consumer naming the full schema.
class ConfigFile {
public:
    ConfigFile() = default;

    static ConfigFile parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot open " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_string(ss.str(), path);
    }

    static ConfigFile parse_string(const std::string& text,
                                   const std::string& origin = "<string>") {
        ConfigFile cfg;
        cfg.origin_ = origin;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) +
                                      ": malformed section header '" + t + "'");
                section = trim(t.substr(1, t.size() - 2));
                if (section.empty())
                    throw ConfigError(origin + ":" + std::to_string(lineno) +
                                      ": empty section name");
                cfg.values_[section];  // allow empty sections
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + t + "'");
            const std::string key = trim(t.substr(0, eq));
            const std::string val = trim(t.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            if (cfg.values_[section].count(key))
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": duplicate key '" + qualify(section, key) + "'");
            cfg.values_[section][key] = val;
        }
        return cfg;
    }

    bool has(const std::string& section, const std::string& key) const {
        const auto s = values_.find(section);
        return s != values_.end() && s->second.count(key) > 0;
    }

    bool has_section(const std::string& section) const {
        return values_.count(section) > 0;
    }

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
        if (!has(section, key)) return fallback;
        consumed_.insert(qualify(section, key));
        return values_.at(section).at(key);
    }

    double get_double(const std::string& section, const std::string& key,
                      double fallback) const {
        if (!has(section, key)) return fallback;
        const std::string raw = get_string(section, key, "");
        try {
            size_t pos = 0;
            const double v = std::stod(raw, &pos);
            if (pos != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (...) {
            throw ConfigError(origin_ + ": key '" + qualify(section, key) +
                              "': expected a number, got '" + raw + "'");
        }
    }

    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const {
        if (!has(section, key)) return fallback;
        const std::string raw = get_string(section, key, "");
        try {
            size_t pos = 0;
            const std::int64_t v = std::stoll(raw, &pos);
            if (pos != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (...) {
            throw ConfigError(origin_ + ": key '" + qualify(section, key) +
                              "': expected an integer, got '" + raw + "'");
        }
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const {
        if (!has(section, key)) return fallback;
        const std::string raw = get_string(section, key, "");
        try {
            size_t pos = 0;
            const std::uint64_t v = std::stoull(raw, &pos);
            if (pos != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (...) {
            throw ConfigError(origin_ + ": key '" + qualify(section, key) +
                              "': expected an unsigned integer, got '" + raw + "'");
        }
    }

    // Errors out if the file holds keys no consumer asked for.
    void finish() const {
        std::vector<std::string> unknown;
        for (const auto& [sec, kv] : values_)
            for (const auto& [key, val] : kv)
                if (!consumed_.count(qualify(sec, key)))
                    unknown.push_back(qualify(sec, key));
        if (!unknown.empty()) {
            std::string msg = origin_ + ": unknown key(s):";
            for (const auto& k : unknown) msg += " '" + k + "'";
            throw ConfigError(msg);
        }
    }

private:
    static std::string trim(const std::string& s) {
        size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    static std::string qualify(const std::string& section, const std::string& key) {
        return section.empty() ? key : section + "." + key;
    }

    std::string origin_ = "<empty>";
    std::map<std::string, std::map<std::string, std::string>> values_;
    mutable std::set<std::string> consumed_;
};

}  // namespace sasforge
