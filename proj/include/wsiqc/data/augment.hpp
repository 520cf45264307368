#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/common/rng.hpp"
#include "wsiqc/core/image.hpp"

namespace wsiqc {

struct AugmentParams {
    double rescale = 1.0 / 255.0;
    double zoom_range = 0.0;             // factor drawn from [1-z, 1+z]
    double rotation_range_degrees = 0.0;  // angle drawn from [-r, +r]
    bool horizontal_flip = false;         // applied with probability 0.5

    bool valid() const {
        return rescale > 0.0 && zoom_range >= 0.0 && rotation_range_degrees >= 0.0;
    }
};

struct AugmentResult {
    ImageBuffer image;
    std::optional<ImageBuffer> mask;
};

// Applies rescale then one randomized affine transform (flip, rotation
// about the center, zoom) to the image, and the identical geometry to the
// mask when present. Images are sampled bilinearly, masks nearest-neighbor
// so they stay binary; out-of-bounds reads fill with black.
//
// Draw order is fixed (zoom, rotation, then flip when enabled) so a seed
// replays the same transform.
inline AugmentResult augment(const ImageBuffer& image, const ImageBuffer* mask,
                             const AugmentParams& params, std::uint64_t seed) {
    if (!params.valid()) throw DataError("augment: invalid AugmentParams");
    if (image.empty()) throw DataError("augment: empty image");
    if (mask) {
        if (mask->h != image.h || mask->w != image.w)
            throw DataError("augment: mask shape " + std::to_string(mask->h) + "x" +
                            std::to_string(mask->w) + " does not match image " +
                            std::to_string(image.h) + "x" + std::to_string(image.w));
    }

    Rng rng(seed);
    const double zoom = params.zoom_range > 0.0
                            ? rng.uniform(1.0 - params.zoom_range, 1.0 + params.zoom_range)
                            : 1.0;
    const double angle_deg = params.rotation_range_degrees > 0.0
                                 ? rng.uniform(-params.rotation_range_degrees,
                                               params.rotation_range_degrees)
                                 : 0.0;
    const bool flip = params.horizontal_flip && rng.bernoulli(0.5);

    const double theta = angle_deg * M_PI / 180.0;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    const double cy = 0.5 * (image.h - 1);
    const double cx = 0.5 * (image.w - 1);

    const bool identity = zoom == 1.0 && angle_deg == 0.0 && !flip;

    // Inverse mapping: out(y,x) <- in(R(-theta)/zoom * (p - c) + c), with
    // the horizontal flip folded into the source x coordinate.
    auto src_coords = [&](int y, int x) {
        const double dy = y - cy;
        const double dx = x - cx;
        const double sy = (cos_t * dy - sin_t * dx) / zoom + cy;
        double sx = (sin_t * dy + cos_t * dx) / zoom + cx;
        if (flip) sx = (image.w - 1) - sx;
        return std::pair<double, double>(sy, sx);
    };

    AugmentResult out;
    out.image = ImageBuffer(image.h, image.w, image.c);
    for (int y = 0; y < image.h; ++y) {
        for (int x = 0; x < image.w; ++x) {
            if (identity) {
                for (int ch = 0; ch < image.c; ++ch)
                    out.image.at(y, x, ch) = params.rescale * image.at(y, x, ch);
                continue;
            }
            const auto [sy, sx] = src_coords(y, x);
            for (int ch = 0; ch < image.c; ++ch)
                out.image.at(y, x, ch) = params.rescale * sample_bilinear(image, sy, sx, ch);
        }
    }
    if (mask) {
        ImageBuffer m(mask->h, mask->w, mask->c);
        for (int y = 0; y < mask->h; ++y) {
            for (int x = 0; x < mask->w; ++x) {
                if (identity) {
                    for (int ch = 0; ch < mask->c; ++ch)
                        m.at(y, x, ch) = mask->at(y, x, ch) > 0.5 ? 1.0 : 0.0;
                    continue;
                }
                const auto [sy, sx] = src_coords(y, x);
                for (int ch = 0; ch < mask->c; ++ch)
                    m.at(y, x, ch) = sample_nearest(*mask, sy, sx, ch) > 0.5 ? 1.0 : 0.0;
            }
        }
        out.mask = std::move(m);
    }
    return out;
}

}  // namespace wsiqc
