#pragma once

#include <string>
#include <vector>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/core/types.hpp"

namespace wsiqc::pipeline {

// Row-major square tiles with the given stride. Right/bottom remainder
// tiles are padded with black and flagged; origins allow reassembly.
inline std::vector<TileSample> tile_image(const ImageBuffer& image, int tile_side,
                                          int stride, const std::string& source = "") {
    if (image.empty()) throw DataError("tile_image: empty image");
    if (tile_side < 1 || tile_side > std::min(image.h, image.w))
        throw DataError("tile_image: tile side " + std::to_string(tile_side) +
                        " exceeds image " + std::to_string(image.h) + "x" +
                        std::to_string(image.w));
    if (stride < 1) throw DataError("tile_image: stride must be >= 1");

    std::vector<TileSample> tiles;
    int index = 0;
    for (int y = 0; y < image.h; y += stride) {
        for (int x = 0; x < image.w; x += stride) {
            TileSample t;
            t.id = "tile_" + std::to_string(index++);
            t.source_slide = source;
            t.origin_x = x;
            t.origin_y = y;
            t.image = ImageBuffer(tile_side, tile_side, image.c, 0.0);
            bool padded = false;
            for (int ty = 0; ty < tile_side; ++ty) {
                for (int tx = 0; tx < tile_side; ++tx) {
                    const int sy = y + ty;
                    const int sx = x + tx;
                    if (sy >= image.h || sx >= image.w) {
                        padded = true;
                        continue;
                    }
                    for (int ch = 0; ch < image.c; ++ch)
                        t.image.at(ty, tx, ch) = image.at(sy, sx, ch);
                }
            }
            t.padded = padded;
            tiles.push_back(std::move(t));
        }
    }
    return tiles;
}

// Inverse of tile_image for stride == tile_side on exactly divisible
// images.
inline ImageBuffer reassemble_tiles(const std::vector<TileSample>& tiles, int image_h,
                                    int image_w) {
    if (tiles.empty()) throw DataError("reassemble_tiles: no tiles");
    const int c = tiles.front().image.c;
    ImageBuffer out(image_h, image_w, c, 0.0);
    for (const auto& t : tiles) {
        for (int ty = 0; ty < t.image.h; ++ty) {
            const int sy = t.origin_y + ty;
            if (sy >= image_h) break;
            for (int tx = 0; tx < t.image.w; ++tx) {
                const int sx = t.origin_x + tx;
                if (sx >= image_w) break;
                for (int ch = 0; ch < c; ++ch) out.at(sy, sx, ch) = t.image.at(ty, tx, ch);
            }
        }
    }
    return out;
}

}  // namespace wsiqc::pipeline
