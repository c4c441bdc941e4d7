#pragma once
// manifest.hpp
//
// Dataset manifest: everything needed to regenerate each degraded image
// byte-identically.  Serialized as UTF-8 JSON with sorted keys and a
// trailing newline so manifests diff cleanly.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nightforge/weather.hpp"

namespace nightforge {

struct ManifestEntry {
    std::string clean_path;
    std::string degraded_path;
    std::string kind;
    double exposure_e = 0.2;
    double darkness_variation = 0.0;
    std::uint64_t darkness_seed = 0;
    std::uint64_t image_index = 0;
    WeatherRecord weather;
};

struct Manifest {
    std::string version = "1";
    std::uint64_t master_seed = 0;
    std::vector<ManifestEntry> entries;
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
    nlohmann::json j;
    j["version"] = m.version;
    j["master_seed"] = m.master_seed;
    j["entries"] = nlohmann::json::array();
    for (const ManifestEntry& e : m.entries) {
        nlohmann::json je;
        je["clean_path"] = e.clean_path;
        je["degraded_path"] = e.degraded_path;
        je["kind"] = e.kind;
        je["exposure_e"] = e.exposure_e;
        je["darkness_variation"] = e.darkness_variation;
        je["darkness_seed"] = e.darkness_seed;
        je["image_index"] = e.image_index;
        nlohmann::json jw;
        jw["field_seed"] = e.weather.field_seed;
        jw["params"] = nlohmann::json(e.weather.params);
        je["weather"] = jw;
        j["entries"].push_back(je);
    }
    return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
    Manifest m;
    m.version = j.at("version").get<std::string>();
    if (m.version != "1") throw std::runtime_error("manifest: unsupported version " + m.version);
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.clean_path = je.at("clean_path").get<std::string>();
        e.degraded_path = je.at("degraded_path").get<std::string>();
        e.kind = je.at("kind").get<std::string>();
        if (!parse_kind(e.kind)) throw std::runtime_error("manifest: unknown kind " + e.kind);
        e.exposure_e = je.at("exposure_e").get<double>();
        e.darkness_variation = je.at("darkness_variation").get<double>();
        e.darkness_seed = je.at("darkness_seed").get<std::uint64_t>();
        e.image_index = je.at("image_index").get<std::uint64_t>();
        const auto& jw = je.at("weather");
        e.weather.kind = e.kind;
        e.weather.field_seed = jw.at("field_seed").get<std::uint64_t>();
        for (const auto& [k, v] : jw.at("params").items())
            e.weather.params[k] = v.get<double>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline void save_manifest(const Manifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
    f << manifest_to_json(m).dump(2) << "\n";
    if (!f) throw std::runtime_error("save_manifest: short write " + path);
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_manifest: parse error in " + path + ": " + e.what());
    }
    return manifest_from_json(j);
}

// every referenced file must exist
inline void validate_manifest(const Manifest& m) {
    for (const ManifestEntry& e : m.entries) {
        if (!std::filesystem::exists(e.clean_path))
            throw std::runtime_error("manifest: missing clean image " + e.clean_path);
        if (!std::filesystem::exists(e.degraded_path))
            throw std::runtime_error("manifest: missing degraded image " + e.degraded_path);
    }
}

// reconstructs generator parameters from a manifest entry
inline WeatherParams params_from_record(const WeatherRecord& rec) {
    WeatherParams p;
    p.seed = rec.field_seed;
    auto opt = [&rec](const char* key, double fallback) {
        const auto it = rec.params.find(key);
        return it == rec.params.end() ? fallback : it->second;
    };
    const double a = opt("atmospheric_light", p.atmospheric_light[0]);
    p.atmospheric_light = {a, a, a};
    p.streak_count = static_cast<int>(opt("streak_count", p.streak_count));
    p.angle_deg = opt("angle_deg", p.angle_deg);
    p.length_px = opt("length_px", p.length_px);
    p.width_px = opt("width_px", p.width_px);
    p.intensity = opt("intensity", p.intensity);
    p.density = opt("density", p.density);
    p.radius_min = opt("radius_min", p.radius_min);
    p.radius_max = opt("radius_max", p.radius_max);
    p.beta = opt("beta", p.beta);
    p.haze_uniformity = opt("haze_uniformity", p.haze_uniformity);
    return p;
}

}  // namespace nightforge
