#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/core/types.hpp"

namespace wsiqc {

struct ManifestEntry {
    std::string tile_id;
    std::string image_path;                     // relative to root unless absolute
    std::optional<std::string> mask_path;
    std::optional<SeverityLabel> severity;
    std::optional<ArtifactKind> artifact_kind;
};

// Line-oriented dataset index. One record per line:
//   <tile_id>\t<image_path>\t<mask_path|->\t<severity|->\t<artifact_kind|->
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    std::size_t size() const { return entries.size(); }

    std::filesystem::path resolve(const std::string& rel) const {
        std::filesystem::path p(rel);
        return p.is_absolute() ? p : root / p;
    }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(e.tile_id);
        return out;
    }

    std::map<ArtifactKind, std::size_t> counts_by_kind() const {
        std::map<ArtifactKind, std::size_t> m;
        for (const auto& e : entries)
            if (e.artifact_kind) ++m[*e.artifact_kind];
        return m;
    }

    std::map<SeverityLabel, std::size_t> counts_by_severity() const {
        std::map<SeverityLabel, std::size_t> m;
        for (const auto& e : entries)
            if (e.severity) ++m[*e.severity];
        return m;
    }

    const ManifestEntry& entry_by_id(const std::string& id) const {
        for (const auto& e : entries)
            if (e.tile_id == id) return e;
        throw DataError("manifest: no entry with id '" + id + "'");
    }
};

namespace detail {
inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}
}  // namespace detail

inline std::string serialize_manifest(const DatasetManifest& m) {
    std::ostringstream os;
    for (const auto& e : m.entries) {
        os << e.tile_id << '\t' << e.image_path << '\t'
           << (e.mask_path ? *e.mask_path : "-") << '\t'
           << (e.severity ? to_string(*e.severity) : "-") << '\t'
           << (e.artifact_kind ? to_string(*e.artifact_kind) : "-") << '\n';
    }
    return os.str();
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << serialize_manifest(m);
}

// check_files=false skips the existence pass; parsing and duplicate-id
// checks still run (used by tools that only rewrite the index).
inline DatasetManifest load_manifest(const std::string& path, bool check_files = true) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);

    DatasetManifest m;
    m.root = std::filesystem::absolute(std::filesystem::path(path)).parent_path();

    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_tabs(line);
        if (fields.size() != 5)
            throw DataError("manifest " + path + " line " + std::to_string(line_no) +
                            ": expected 5 tab-separated fields, got " +
                            std::to_string(fields.size()));
        ManifestEntry e;
        e.tile_id = fields[0];
        e.image_path = fields[1];
        if (e.tile_id.empty())
            throw DataError("manifest " + path + " line " + std::to_string(line_no) +
                            ": empty tile id");
        if (!seen.insert(e.tile_id).second)
            throw DataError("manifest " + path + " line " + std::to_string(line_no) +
                            ": duplicate tile id '" + e.tile_id + "'");
        if (fields[2] != "-") e.mask_path = fields[2];
        if (fields[3] != "-") {
            try {
                e.severity = severity_from_string(fields[3]);
            } catch (const DataError&) {
                throw DataError("manifest " + path + " line " + std::to_string(line_no) +
                                ": bad severity '" + fields[3] + "'");
            }
        }
        if (fields[4] != "-") {
            try {
                e.artifact_kind = artifact_kind_from_string(fields[4]);
            } catch (const DataError&) {
                throw DataError("manifest " + path + " line " + std::to_string(line_no) +
                                ": bad artifact kind '" + fields[4] + "'");
            }
        }
        m.entries.push_back(std::move(e));
    }

    if (check_files) {
        for (const auto& e : m.entries) {
            if (!std::filesystem::exists(m.resolve(e.image_path)))
                throw DataError("manifest: missing image file " +
                                m.resolve(e.image_path).string() + " (tile " + e.tile_id + ")");
            if (e.mask_path && !std::filesystem::exists(m.resolve(*e.mask_path)))
                throw DataError("manifest: missing mask file " +
                                m.resolve(*e.mask_path).string() + " (tile " + e.tile_id + ")");
        }
    }
    return m;
}

}  // namespace wsiqc
