#pragma once

#include <array>
#include <optional>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/core/types.hpp"

namespace wsiqc::pipeline {

// Overlay palette (RGB in [0,1]). Artifact pixels are alpha-blended at
// 0.4 with the severity color; detection-only overlays (no severity)
// use blue. Non-artifact pixels pass through untouched.
inline std::array<double, 3> severity_color(std::optional<SeverityLabel> severity) {
    if (!severity) return {0.27, 0.51, 0.86};  // blue: detected, ungraded
    switch (*severity) {
        case SeverityLabel::low: return {0.31, 0.78, 0.47};   // green
        case SeverityLabel::mid: return {1.00, 0.75, 0.00};   // amber
        case SeverityLabel::high: return {0.86, 0.20, 0.18};  // red
    }
    return {0.27, 0.51, 0.86};
}

inline constexpr double kOverlayAlpha = 0.4;

inline ImageBuffer render_overlay(const ImageBuffer& image, const ImageBuffer& mask,
                                  std::optional<SeverityLabel> severity) {
    if (image.empty()) throw DataError("render_overlay: empty image");
    if (mask.h != image.h || mask.w != image.w || mask.c != 1)
        throw DataError("render_overlay: mask " + std::to_string(mask.h) + "x" +
                        std::to_string(mask.w) + " does not match image " +
                        std::to_string(image.h) + "x" + std::to_string(image.w));
    const auto color = severity_color(severity);
    ImageBuffer out = image;
    for (int y = 0; y < image.h; ++y) {
        for (int x = 0; x < image.w; ++x) {
            if (mask.at(y, x, 0) <= 0.5) continue;
            for (int ch = 0; ch < image.c; ++ch)
                out.at(y, x, ch) = (1.0 - kOverlayAlpha) * image.at(y, x, ch) +
                                   kOverlayAlpha * color[static_cast<std::size_t>(ch)];
        }
    }
    return out;
}

}  // namespace wsiqc::pipeline
