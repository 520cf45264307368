#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wsiqc/common/rng.hpp"
#include "wsiqc/core/manifest.hpp"
#include "wsiqc/core/types.hpp"
#include "wsiqc/io/image_io.hpp"

// Desk-scale synthetic tiles. Real slides are out of reach here, so these
// stand in for them: a bright tissue-like background with one or more
// dark elliptical artifact regions, plus the exact binary mask.

namespace wsiqc {

struct SyntheticPair {
    TileSample tile;
    MaskSample mask;
};

namespace detail {
inline void paint_ellipse(ImageBuffer& img, ImageBuffer& mask, double cy, double cx,
                          double ry, double rx, double angle, double r, double g, double b) {
    const double cos_a = std::cos(angle);
    const double sin_a = std::sin(angle);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double dy = y - cy;
            const double dx = x - cx;
            const double u = (cos_a * dx + sin_a * dy) / rx;
            const double v = (-sin_a * dx + cos_a * dy) / ry;
            if (u * u + v * v <= 1.0) {
                img.at(y, x, 0) = r;
                img.at(y, x, 1) = g;
                img.at(y, x, 2) = b;
                mask.at(y, x, 0) = 1.0;
            }
        }
    }
}
}  // namespace detail

// One tile with a single random elliptical artifact covering roughly
// 10-35% of the area. Background is a light pinkish texture.
inline SyntheticPair make_blob_sample(const std::string& id, int side, std::uint64_t seed,
                                      ArtifactKind kind = ArtifactKind::tissue_fold) {
    Rng rng(seed);
    ImageBuffer img(side, side, 3);
    ImageBuffer mask(side, side, 1, 0.0);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const double n = 0.03 * rng.uniform();
            img.at(y, x, 0) = 0.92 - n;
            img.at(y, x, 1) = 0.80 - n;
            img.at(y, x, 2) = 0.86 - n;
        }
    }
    const double cy = rng.uniform(0.3, 0.7) * side;
    const double cx = rng.uniform(0.3, 0.7) * side;
    const double ry = rng.uniform(0.18, 0.32) * side;
    const double rx = rng.uniform(0.18, 0.32) * side;
    const double angle = rng.uniform(0.0, M_PI);
    // folds render dark purple, bubbles pale gray with a dark rim color
    if (kind == ArtifactKind::tissue_fold)
        detail::paint_ellipse(img, mask, cy, cx, ry, rx, angle, 0.35, 0.15, 0.40);
    else
        detail::paint_ellipse(img, mask, cy, cx, ry, rx, angle, 0.55, 0.55, 0.58);

    SyntheticPair out;
    out.tile.id = id;
    out.tile.image = std::move(img);
    out.tile.source_slide = "synthetic";
    out.mask.tile_id = id;
    out.mask.mask = std::move(mask);
    out.mask.artifact_kind = kind;
    return out;
}

// Deterministic axis-aligned rectangular artifact covering exactly
// `fraction` of the tile; used by end-to-end fixtures that need a known
// artifact share.
inline SyntheticPair make_rect_sample(const std::string& id, int side, double fraction,
                                      ArtifactKind kind = ArtifactKind::tissue_fold) {
    ImageBuffer img(side, side, 3);
    ImageBuffer mask(side, side, 1, 0.0);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            img.at(y, x, 0) = 0.92;
            img.at(y, x, 1) = 0.80;
            img.at(y, x, 2) = 0.86;
        }
    const int rows = static_cast<int>(std::lround(fraction * side));
    for (int y = 0; y < rows; ++y) {
        for (int x = 0; x < side; ++x) {
            img.at(y, x, 0) = 0.35;
            img.at(y, x, 1) = 0.15;
            img.at(y, x, 2) = 0.40;
            mask.at(y, x, 0) = 1.0;
        }
    }
    SyntheticPair out;
    out.tile.id = id;
    out.tile.image = std::move(img);
    out.tile.source_slide = "synthetic";
    out.mask.tile_id = id;
    out.mask.mask = std::move(mask);
    out.mask.artifact_kind = kind;
    return out;
}

// Severity classes are separable by artifact coverage and darkness:
// low ~ 6%, mid ~ 25%, high ~ 55% of the tile.
inline TileSample make_severity_sample(const std::string& id, int side, SeverityLabel label,
                                       std::uint64_t seed) {
    Rng rng(seed);
    double cover = 0.0;
    double darkness = 0.0;
    switch (label) {
        case SeverityLabel::low: cover = rng.uniform(0.04, 0.09); darkness = 0.60; break;
        case SeverityLabel::mid: cover = rng.uniform(0.20, 0.30); darkness = 0.40; break;
        case SeverityLabel::high: cover = rng.uniform(0.48, 0.62); darkness = 0.18; break;
    }
    ImageBuffer img(side, side, 3);
    ImageBuffer mask(side, side, 1, 0.0);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double n = 0.03 * rng.uniform();
            img.at(y, x, 0) = 0.92 - n;
            img.at(y, x, 1) = 0.80 - n;
            img.at(y, x, 2) = 0.86 - n;
        }
    const double radius = std::sqrt(cover / M_PI) * side;
    detail::paint_ellipse(img, mask, rng.uniform(0.35, 0.65) * side,
                          rng.uniform(0.35, 0.65) * side, radius, radius, 0.0, darkness,
                          darkness * 0.6, darkness * 1.1);
    TileSample t;
    t.id = id;
    t.image = std::move(img);
    t.source_slide = "synthetic";
    return t;
}

// Writes `count` tile/mask pairs plus a manifest to `dir`.
inline std::filesystem::path write_synthetic_seg_dataset(const std::filesystem::path& dir,
                                                         int count, int side,
                                                         ArtifactKind kind,
                                                         std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    DatasetManifest m;
    m.root = dir;
    for (int i = 0; i < count; ++i) {
        const std::string id = std::string(to_string(kind)) + "_" + std::to_string(i);
        auto pair = make_blob_sample(id, side, derive_seed(seed, id), kind);
        const std::string img_name = id + ".png";
        const std::string mask_name = id + "_mask.png";
        save_image(pair.tile.image, (dir / img_name).string());
        save_image(pair.mask.mask, (dir / mask_name).string());
        ManifestEntry e;
        e.tile_id = id;
        e.image_path = img_name;
        e.mask_path = mask_name;
        e.artifact_kind = kind;
        m.entries.push_back(std::move(e));
    }
    const auto manifest_path = dir / "manifest.tsv";
    save_manifest(m, manifest_path.string());
    return manifest_path;
}

// Writes `count_per_class` tiles per severity class plus a manifest.
inline std::filesystem::path write_synthetic_severity_dataset(
    const std::filesystem::path& dir, int count_per_class, int side, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    DatasetManifest m;
    m.root = dir;
    for (SeverityLabel label : {SeverityLabel::low, SeverityLabel::mid, SeverityLabel::high}) {
        for (int i = 0; i < count_per_class; ++i) {
            const std::string id = std::string(to_string(label)) + "_" + std::to_string(i);
            auto tile = make_severity_sample(id, side, label, derive_seed(seed, id));
            const std::string img_name = id + ".png";
            save_image(tile.image, (dir / img_name).string());
            ManifestEntry e;
            e.tile_id = id;
            e.image_path = img_name;
            e.severity = label;
            m.entries.push_back(std::move(e));
        }
    }
    const auto manifest_path = dir / "manifest.tsv";
    save_manifest(m, manifest_path.string());
    return manifest_path;
}

}  // namespace wsiqc
