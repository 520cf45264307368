#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "wsiqc/io/image_io.hpp"
#include "wsiqc/pipeline/decide.hpp"
#include "wsiqc/pipeline/overlay.hpp"

namespace wsiqc::pipeline {

inline nlohmann::json verdict_to_json(const TileVerdict& v) {
    nlohmann::json j;
    j["tile_id"] = v.tile_id;
    j["origin"] = {v.origin_x, v.origin_y};
    j["padded"] = v.padded;
    j["artifact_fraction"] = v.artifact_fraction;
    nlohmann::json per_kind = nlohmann::json::object();
    for (const auto& [kind, frac] : v.per_kind_fraction)
        per_kind[wsiqc::to_string(kind)] = frac;
    j["per_kind_fraction"] = per_kind;
    j["artifact_kind"] =
        v.artifact_kind ? nlohmann::json(wsiqc::to_string(*v.artifact_kind))
                        : nlohmann::json(nullptr);
    j["severity_probs"] = v.severity_scored
                              ? nlohmann::json(v.severity_probs)
                              : nlohmann::json(nullptr);
    j["decision"] = to_string(v.decision);
    j["external_quality_score"] = v.external_quality_score
                                      ? nlohmann::json(*v.external_quality_score)
                                      : nlohmann::json(nullptr);
    return j;
}

inline TileVerdict verdict_from_json(const nlohmann::json& j) {
    TileVerdict v;
    v.tile_id = j.at("tile_id").get<std::string>();
    v.origin_x = j.at("origin")[0].get<int>();
    v.origin_y = j.at("origin")[1].get<int>();
    v.padded = j.at("padded").get<bool>();
    v.artifact_fraction = j.at("artifact_fraction").get<double>();
    for (const auto& [key, val] : j.at("per_kind_fraction").items())
        v.per_kind_fraction[artifact_kind_from_string(key)] = val.get<double>();
    if (!j.at("artifact_kind").is_null())
        v.artifact_kind = artifact_kind_from_string(j.at("artifact_kind").get<std::string>());
    if (!j.at("severity_probs").is_null()) {
        v.severity_scored = true;
        for (std::size_t k = 0; k < 3; ++k)
            v.severity_probs[k] = j.at("severity_probs")[k].get<double>();
    }
    v.decision = decision_from_string(j.at("decision").get<std::string>());
    if (!j.at("external_quality_score").is_null())
        v.external_quality_score = j.at("external_quality_score").get<double>();
    return v;
}

inline std::string summary_csv(const std::map<std::string, std::size_t>& counts,
                               std::size_t tile_count) {
    auto at = [&](const char* key) {
        const auto it = counts.find(key);
        return it == counts.end() ? std::size_t(0) : it->second;
    };
    std::ostringstream os;
    os << "tiles,retain,exclude_region,flag_slide_prep\n";
    os << tile_count << ',' << at("retain") << ',' << at("exclude_region") << ','
       << at("flag_slide_prep") << '\n';
    return os.str();
}

// Writes verdicts.jsonl, summary.csv, config.txt and one severity-tinted
// overlay per tile. Identical inputs produce byte-identical outputs.
inline void emit_report(const DecisionReport& report, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("emit_report: cannot create " + out_dir.string());

    {
        std::ofstream out(out_dir / "verdicts.jsonl");
        if (!out) throw DataError("emit_report: cannot write " +
                                  (out_dir / "verdicts.jsonl").string());
        for (const auto& t : report.tiles) out << verdict_to_json(t.verdict).dump() << '\n';
    }
    {
        std::ofstream out(out_dir / "summary.csv");
        if (!out)
            throw DataError("emit_report: cannot write " + (out_dir / "summary.csv").string());
        out << summary_csv(report.decision_counts, report.tiles.size());
    }
    {
        std::ofstream out(out_dir / "config.txt");
        for (const auto& [k, v] : report.config_snapshot) out << k << '=' << v << '\n';
    }
    const auto overlay_dir = out_dir / "overlays";
    std::filesystem::create_directories(overlay_dir, ec);
    for (const auto& t : report.tiles) {
        std::optional<SeverityLabel> severity;
        if (t.verdict.severity_scored) {
            const auto mx = std::max_element(t.verdict.severity_probs.begin(),
                                             t.verdict.severity_probs.end());
            severity = static_cast<SeverityLabel>(mx - t.verdict.severity_probs.begin());
        }
        const auto overlay = render_overlay(t.tile_image, t.union_mask, severity);
        save_image(overlay, (overlay_dir / (t.verdict.tile_id + "_overlay.png")).string());
    }
}

inline std::vector<TileVerdict> load_verdicts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open verdicts file: " + path.string());
    std::vector<TileVerdict> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(verdict_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("verdicts file " + path.string() + " line " +
                            std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

// `report` subcommand body: re-derive the summary from saved verdicts.
inline std::string summarize_verdicts(const std::vector<TileVerdict>& verdicts) {
    std::map<std::string, std::size_t> counts;
    for (const auto& v : verdicts) ++counts[to_string(v.decision)];
    return summary_csv(counts, verdicts.size());
}

}  // namespace wsiqc::pipeline
