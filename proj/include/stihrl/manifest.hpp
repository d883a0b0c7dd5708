#pragma once

// Run manifests: everything needed to repeat a CLI invocation and check that
// its outputs came out the same.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "config.hpp"

#ifndef STIHRL_VERSION
#define STIHRL_VERSION "0.0.0"
#endif

namespace stihrl {

inline constexpr const char* kToolVersion = STIHRL_VERSION;

struct StageTiming {
    std::string stage;
    double seconds = 0;
};

struct RunManifest {
    std::string command;
    std::vector<std::string> args;  // argv after the program name
    Config config;                  // fully resolved: file, environment, flags
    std::map<std::string, std::uint64_t> seeds;
    std::map<std::string, std::string> inputs;     // path -> sha256
    std::map<std::string, std::string> artifacts;  // role -> path
    std::map<std::string, std::string> artifact_hashes;
    std::vector<StageTiming> timings;
    std::string tool_version = kToolVersion;
    int threads = 1;

    void add_input(const std::string& path) { inputs[path] = sha256_file(path); }

    void add_artifact(const std::string& role, const std::string& path) {
        artifacts[role] = path;
        artifact_hashes[role] = sha256_file(path);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "stihrl-manifest";
        j["version"] = 1;
        j["tool_version"] = tool_version;
        j["command"] = command;
        j["args"] = args;
        j["threads"] = threads;
        j["config"] = config.canonical();
        j["config_hash"] = config.hash();
        j["seeds"] = seeds;
        j["inputs"] = inputs;
        j["artifacts"] = artifacts;
        j["artifact_sha256"] = artifact_hashes;
        auto& t = j["wall_clock_seconds"];
        t = nlohmann::json::array();
        for (const auto& s : timings) t.push_back({{"stage", s.stage}, {"seconds", s.seconds}});
        return j;
    }

    static RunManifest from_json(const nlohmann::json& j) {
        try {
            if (j.at("format") != "stihrl-manifest" || j.at("version") != 1)
                fail(ErrorKind::corrupt, "not a version-1 run manifest");
            RunManifest m;
            m.command = j.at("command").get<std::string>();
            m.args = j.at("args").get<std::vector<std::string>>();
            m.threads = j.at("threads").get<int>();
            m.config = Config::parse(j.at("config").get<std::string>(), "<manifest>");
            m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
            m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
            m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
            m.artifact_hashes = j.at("artifact_sha256").get<std::map<std::string, std::string>>();
            m.tool_version = j.at("tool_version").get<std::string>();
            for (const auto& t : j.at("wall_clock_seconds"))
                m.timings.push_back({t.at("stage").get<std::string>(), t.at("seconds").get<double>()});
            return m;
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::corrupt, std::string("malformed run manifest: ") + e.what());
        }
    }

    void save(const std::string& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

    static RunManifest load(const std::string& path) {
        std::ifstream in(path);
        if (!in) fail(ErrorKind::missing_artifact, "run manifest not found: " + path);
        try {
            return from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorKind::corrupt, "unreadable run manifest " + path + ": " + e.what());
        }
    }
};

/// Adds a timing entry for the enclosing scope.
class StageTimer {
public:
    StageTimer(RunManifest& m, std::string stage)
        : manifest_(m), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start_;
        manifest_.timings.push_back({stage_, d.count()});
    }
    StageTimer(const StageTimer&) = delete;
    StageTimer& operator=(const StageTimer&) = delete;

private:
    RunManifest& manifest_;
    std::string stage_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace stihrl
