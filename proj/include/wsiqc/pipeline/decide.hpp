#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/pipeline/tiling.hpp"
#include "wsiqc/seg/train.hpp"
#include "wsiqc/stack/stacking.hpp"

namespace wsiqc::pipeline {

enum class Decision { retain, exclude_region, flag_slide_prep };

inline const char* to_string(Decision d) {
    switch (d) {
        case Decision::retain: return "retain";
        case Decision::exclude_region: return "exclude_region";
        case Decision::flag_slide_prep: return "flag_slide_prep";
    }
    return "?";
}

inline Decision decision_from_string(const std::string& s) {
    if (s == "retain") return Decision::retain;
    if (s == "exclude_region") return Decision::exclude_region;
    if (s == "flag_slide_prep") return Decision::flag_slide_prep;
    throw DataError("unknown decision: '" + s + "'");
}

// Severity grading runs only when the union artifact fraction strictly
// exceeds trigger_fraction; the per-severity actions then decide.
struct DecisionPolicy {
    double trigger_fraction = 0.01;
    Decision high_action = Decision::exclude_region;
    Decision mid_action = Decision::flag_slide_prep;
    Decision low_action = Decision::retain;

    Decision action_for(SeverityLabel s) const {
        switch (s) {
            case SeverityLabel::low: return low_action;
            case SeverityLabel::mid: return mid_action;
            case SeverityLabel::high: return high_action;
        }
        return Decision::retain;
    }
};

struct TileVerdict {
    std::string tile_id;
    int origin_x = 0, origin_y = 0;
    bool padded = false;
    double artifact_fraction = 0.0;
    std::map<ArtifactKind, double> per_kind_fraction;
    std::optional<ArtifactKind> artifact_kind;  // dominant by fraction
    std::array<double, 3> severity_probs{1.0 / 3, 1.0 / 3, 1.0 / 3};
    bool severity_scored = false;
    Decision decision = Decision::retain;
    std::optional<double> external_quality_score;  // pass-through slot
};

// Verdict plus the rasters the report writer needs for overlays; the
// payload never serializes into the verdict records.
struct TileOutcome {
    TileVerdict verdict;
    ImageBuffer tile_image;
    ImageBuffer union_mask;
};

struct DecisionReport {
    std::vector<TileOutcome> tiles;
    std::map<std::string, std::size_t> decision_counts;
    std::map<std::string, std::string> config_snapshot;  // models, policy, versions

    std::size_t count(Decision d) const {
        const auto it = decision_counts.find(to_string(d));
        return it == decision_counts.end() ? 0 : it->second;
    }
};

// The trained severity stack: ordered bases plus the meta model fitted on
// their stacked probabilities.
struct SeverityStack {
    std::vector<stack::BaseModel> bases;
    stack::MetaModel meta;
};

using QualityScoreFn = std::function<std::optional<double>(const TileSample&)>;

// Per tile: segment every configured artifact kind, measure the union
// artifact share, and either retain outright or grade severity and map
// it through the policy. Deterministic for fixed models and inputs;
// tiles are independent and assembled in row-major order.
inline DecisionReport run_pipeline(const ImageBuffer& image,
                                   std::map<ArtifactKind, seg::SegModel*> seg_models,
                                   SeverityStack* severity_stack,
                                   const DecisionPolicy& policy, int tile_side,
                                   int stride = -1,
                                   const QualityScoreFn& quality_score = nullptr) {
    if (seg_models.empty())
        throw DataError("run_pipeline: no segmentation model configured");
    for (const auto& [kind, model] : seg_models)
        if (!model)
            throw DataError(std::string("run_pipeline: missing model for artifact kind ") +
                            wsiqc::to_string(kind));
    if (!(policy.trigger_fraction >= 0.0 && policy.trigger_fraction <= 1.0))
        throw DataError("run_pipeline: trigger_fraction must lie in [0,1]");
    if (stride <= 0) stride = tile_side;

    DecisionReport report;
    report.config_snapshot["policy.trigger_fraction"] =
        detail::fmt_double(policy.trigger_fraction);
    report.config_snapshot["policy.high_action"] = to_string(policy.high_action);
    report.config_snapshot["policy.mid_action"] = to_string(policy.mid_action);
    report.config_snapshot["policy.low_action"] = to_string(policy.low_action);
    report.config_snapshot["tile_side"] = std::to_string(tile_side);
    report.config_snapshot["stride"] = std::to_string(stride);
    for (const auto& [kind, model] : seg_models)
        report.config_snapshot[std::string("segmenter.") + wsiqc::to_string(kind)] =
            std::string(wsiqc::to_string(model->architecture)) + "#" +
            std::to_string(model->fingerprint());
    if (severity_stack) {
        std::string ids;
        for (const auto& b : severity_stack->bases) ids += b.id + ";";
        report.config_snapshot["severity.bases"] = ids;
        report.config_snapshot["severity.meta"] =
            stack::to_string(severity_stack->meta.kind);
    }

    const auto tiles = tile_image(image, tile_side, stride, "pipeline");
    for (const auto& tile : tiles) {
        TileOutcome outcome;
        outcome.tile_image = tile.image;
        outcome.union_mask = ImageBuffer(tile.image.h, tile.image.w, 1, 0.0);

        TileVerdict& v = outcome.verdict;
        v.tile_id = tile.id;
        v.origin_x = tile.origin_x;
        v.origin_y = tile.origin_y;
        v.padded = tile.padded;

        for (const auto& [kind, model] : seg_models) {
            ImageBuffer input = tile.image;
            if (input.h != model->input_h || input.w != model->input_w)
                input = resize_bilinear(input, model->input_h, model->input_w);
            auto pred = seg::predict_mask(*model, input);
            ImageBuffer mask = pred.binary;
            if (mask.h != tile.image.h || mask.w != tile.image.w)
                mask = resize_nearest(mask, tile.image.h, tile.image.w);
            v.per_kind_fraction[kind] = mask_positive_fraction(mask);
            for (std::size_t i = 0; i < mask.v.size(); ++i)
                if (mask.v[i] > 0.5) outcome.union_mask.v[i] = 1.0;
        }
        v.artifact_fraction = mask_positive_fraction(outcome.union_mask);
        for (const auto& [kind, frac] : v.per_kind_fraction)
            if (frac > 0.0 && (!v.artifact_kind ||
                               frac > v.per_kind_fraction.at(*v.artifact_kind)))
                v.artifact_kind = kind;

        if (quality_score) v.external_quality_score = quality_score(tile);

        if (v.artifact_fraction > policy.trigger_fraction && severity_stack) {
            cls::LabeledImage sample;
            sample.image = tile.image;
            sample.id = tile.id;
            const auto pred =
                stack::stacked_predict(severity_stack->bases, severity_stack->meta, sample);
            // probability-like scores normalize directly; raw margins go
            // through a softmax
            bool nonnegative = true;
            double sum = 0.0;
            for (double s : pred.scores) {
                nonnegative = nonnegative && s >= 0.0;
                sum += s;
            }
            if (nonnegative && sum > 1e-12) {
                for (std::size_t k = 0; k < 3 && k < pred.scores.size(); ++k)
                    v.severity_probs[k] = pred.scores[k] / sum;
            } else {
                double mx = pred.scores.empty() ? 0.0 : pred.scores[0];
                for (double s : pred.scores) mx = std::max(mx, s);
                double z = 0.0;
                for (std::size_t k = 0; k < 3 && k < pred.scores.size(); ++k) {
                    v.severity_probs[k] = std::exp(pred.scores[k] - mx);
                    z += v.severity_probs[k];
                }
                for (auto& p : v.severity_probs) p /= z;
            }
            v.severity_scored = true;
            v.decision = policy.action_for(static_cast<SeverityLabel>(pred.class_index));
        } else if (v.artifact_fraction > policy.trigger_fraction) {
            // artifact present but no severity stack configured: flag it
            v.decision = Decision::flag_slide_prep;
        } else {
            v.decision = Decision::retain;
        }
        ++report.decision_counts[to_string(v.decision)];
        report.tiles.push_back(std::move(outcome));
    }
    return report;
}

}  // namespace wsiqc::pipeline
