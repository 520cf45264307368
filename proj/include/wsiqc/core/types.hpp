#pragma once

#include <optional>
#include <string>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/core/image.hpp"

namespace wsiqc {

enum class ArtifactKind { tissue_fold, air_bubble };

enum class SeverityLabel { low, mid, high };

inline const char* to_string(ArtifactKind k) {
    switch (k) {
        case ArtifactKind::tissue_fold: return "tissue_fold";
        case ArtifactKind::air_bubble: return "air_bubble";
    }
    return "?";
}

inline const char* to_string(SeverityLabel s) {
    switch (s) {
        case SeverityLabel::low: return "low";
        case SeverityLabel::mid: return "mid";
        case SeverityLabel::high: return "high";
    }
    return "?";
}

inline ArtifactKind artifact_kind_from_string(const std::string& s) {
    if (s == "tissue_fold") return ArtifactKind::tissue_fold;
    if (s == "air_bubble") return ArtifactKind::air_bubble;
    throw DataError("unknown artifact kind: '" + s + "'");
}

inline SeverityLabel severity_from_string(const std::string& s) {
    if (s == "low") return SeverityLabel::low;
    if (s == "mid") return SeverityLabel::mid;
    if (s == "high") return SeverityLabel::high;
    throw DataError("unknown severity label: '" + s + "'");
}

constexpr int kSeverityClasses = 3;

// One image tile; the unit of work for segmentation and grading.
// Immutable after construction, safe to share across workers.
struct TileSample {
    std::string id;
    ImageBuffer image;  // H x W x 3, values in [0,1]
    std::string source_slide;
    int origin_x = 0;  // pixels, in the source image
    int origin_y = 0;
    bool padded = false;  // remainder tile filled with black by the tiler
};

// Ground-truth binary artifact mask attached to a tile.
struct MaskSample {
    std::string tile_id;
    ImageBuffer mask;  // H x W x 1, values in {0,1}
    ArtifactKind artifact_kind = ArtifactKind::tissue_fold;
};

struct SeveritySample {
    std::string tile_id;
    SeverityLabel label = SeverityLabel::low;
};

}  // namespace wsiqc
