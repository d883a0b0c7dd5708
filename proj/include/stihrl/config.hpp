#pragma once

// Flat key/value configuration with dotted keys:
//
//     # comment
//     zone.cell_size_deg = 0.01
//     time.mode = hour48_weekpart
//
// Later sources override earlier ones: file < environment < command line.

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "common.hpp"

extern char** environ;

namespace stihrl {

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos == std::string_view::npos ? s.size() - start : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Hex SHA-256 of a byte string.
inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        fail(ErrorKind::io, "sha256: digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(read_file_bytes(path)); }

class Config {
public:
    Config() = default;

    static Config parse(std::string_view text, const std::string& origin = "<text>") {
        Config cfg;
        std::size_t line_no = 0;
        for (const auto& raw : split(text, '\n')) {
            ++line_no;
            std::string line = trim(raw);
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                fail(ErrorKind::config, origin + ":" + std::to_string(line_no) + ": expected key = value");
            std::string key = trim(std::string_view(line).substr(0, eq));
            std::string value = trim(std::string_view(line).substr(eq + 1));
            if (key.empty())
                fail(ErrorKind::config, origin + ":" + std::to_string(line_no) + ": empty key");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) fail(ErrorKind::missing_artifact, "config file not found: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path);
    }

    /// Environment overrides: STIHRL_<key with '.' written as "__">=value,
    /// e.g. STIHRL_train__epochs=3.
    void apply_environment(const std::string& prefix = "STIHRL_") {
        for (char** env = environ; env && *env; ++env) {
            std::string_view entry(*env);
            if (!entry.starts_with(prefix)) continue;
            const auto eq = entry.find('=');
            if (eq == std::string_view::npos) continue;
            std::string key(entry.substr(prefix.size(), eq - prefix.size()));
            std::string dotted;
            for (std::size_t i = 0; i < key.size(); ++i) {
                if (key[i] == '_' && i + 1 < key.size() && key[i + 1] == '_') {
                    dotted.push_back('.');
                    ++i;
                } else {
                    dotted.push_back(key[i]);
                }
            }
            if (!dotted.empty()) values_[dotted] = std::string(entry.substr(eq + 1));
        }
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    void merge(const Config& other) {
        for (const auto& [k, v] : other.values_) values_[k] = v;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            fail(ErrorKind::config, "config key " + key + ": not a number: " + it->second);
        }
    }

    long long get_int(const std::string& key, long long fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            fail(ErrorKind::config, "config key " + key + ": not an integer: " + it->second);
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const auto& v = it->second;
        if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
        if (v == "0" || v == "false" || v == "no" || v == "off") return false;
        fail(ErrorKind::config, "config key " + key + ": not a boolean: " + v);
    }

    std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        for (const auto& part : split(it->second, ',')) {
            Config tmp;
            tmp.set("v", trim(part));
            out.push_back(tmp.get_double("v", 0.0));
        }
        return out;
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

    /// Canonical text: sorted "key = value" lines. Key order in the source
    /// file does not affect it.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

    std::string hash() const { return sha256_hex(canonical()); }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace stihrl
