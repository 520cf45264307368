#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsiqc/stack/stacking.hpp"

namespace wsiqc::stack {

// Meta models serialize as JSON next to the base-order fingerprint.
inline void save_meta_model(const MetaModel& meta, const std::string& path) {
    nlohmann::json j;
    j["kind"] = to_string(meta.kind);
    j["num_classes"] = meta.num_classes;
    j["base_fingerprint"] = meta.base_fingerprint;
    j["state"] = meta.learner->save_state();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write meta model: " + path);
    out << j.dump();
}

inline MetaModel load_meta_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open meta model: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("meta model " + path + " corrupt: " + e.what());
    }
    MetaModel meta;
    meta.kind = meta_kind_from_string(j.at("kind").get<std::string>());
    meta.num_classes = j.at("num_classes").get<int>();
    meta.base_fingerprint = j.at("base_fingerprint").get<std::string>();
    meta.learner = make_meta_learner(meta.kind);
    meta.learner->load_state(j.at("state"));
    return meta;
}

// A runnable severity stack on disk: ordered base ids + classifier
// checkpoint paths and the meta model file.
struct StackBundleInfo {
    std::vector<std::string> base_ids;
    std::vector<std::string> base_checkpoints;  // relative to the bundle dir
    std::string meta_file = "meta.json";
};

inline void save_stack_bundle(const StackBundleInfo& info, const MetaModel& meta,
                              const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["base_ids"] = info.base_ids;
    j["base_checkpoints"] = info.base_checkpoints;
    j["meta_file"] = info.meta_file;
    std::ofstream out(dir / "stack.json");
    if (!out) throw DataError("cannot write " + (dir / "stack.json").string());
    out << j.dump(2);
    save_meta_model(meta, (dir / info.meta_file).string());
}

inline StackBundleInfo load_stack_bundle_info(const std::filesystem::path& dir) {
    std::ifstream in(dir / "stack.json");
    if (!in) throw DataError("cannot open stack bundle: " + (dir / "stack.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("stack bundle corrupt: " + std::string(e.what()));
    }
    StackBundleInfo info;
    info.base_ids = j.at("base_ids").get<std::vector<std::string>>();
    info.base_checkpoints = j.at("base_checkpoints").get<std::vector<std::string>>();
    info.meta_file = j.value("meta_file", "meta.json");
    if (info.base_ids.size() != info.base_checkpoints.size())
        throw DataError("stack bundle: base id/checkpoint count mismatch");
    return info;
}

}  // namespace wsiqc::stack
