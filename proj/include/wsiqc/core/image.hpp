#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "wsiqc/common/errors.hpp"

namespace wsiqc {

// Dense H x W x C raster, row-major, double pixels. Images use C=3 with
// values in [0,1]; masks use C=1 with values in {0,1}.
struct ImageBuffer {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> v;

    ImageBuffer() = default;
    ImageBuffer(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

    double& at(int y, int x, int ch) {
        return v[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    double at(int y, int x, int ch) const {
        return v[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }

    bool empty() const { return v.empty(); }
    std::size_t size() const { return v.size(); }

    bool same_shape(const ImageBuffer& o) const {
        return h == o.h && w == o.w && c == o.c;
    }
};

// Bilinear sample with constant-black fill outside bounds.
inline double sample_bilinear(const ImageBuffer& img, double y, double x, int ch) {
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0;
    const double fx = x - x0;
    double acc = 0.0;
    for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
            const int yy = y0 + dy;
            const int xx = x0 + dx;
            if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
            const double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
            acc += wgt * img.at(yy, xx, ch);
        }
    }
    return acc;
}

// Nearest-neighbor sample with constant-black fill outside bounds.
inline double sample_nearest(const ImageBuffer& img, double y, double x, int ch) {
    const int yy = static_cast<int>(std::lround(y));
    const int xx = static_cast<int>(std::lround(x));
    if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) return 0.0;
    return img.at(yy, xx, ch);
}

inline ImageBuffer resize_bilinear(const ImageBuffer& img, int out_h, int out_w) {
    if (img.empty()) throw DataError("resize_bilinear: empty image");
    ImageBuffer out(out_h, out_w, img.c);
    const double sy = static_cast<double>(img.h) / out_h;
    const double sx = static_cast<double>(img.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        // pixel-center mapping
        const double src_y = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < out_w; ++x) {
            const double src_x = (x + 0.5) * sx - 0.5;
            for (int ch = 0; ch < img.c; ++ch)
                out.at(y, x, ch) = sample_bilinear(img, src_y, src_x, ch);
        }
    }
    return out;
}

inline ImageBuffer resize_nearest(const ImageBuffer& img, int out_h, int out_w) {
    if (img.empty()) throw DataError("resize_nearest: empty image");
    ImageBuffer out(out_h, out_w, img.c);
    const double sy = static_cast<double>(img.h) / out_h;
    const double sx = static_cast<double>(img.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < out_w; ++x) {
            const double src_x = (x + 0.5) * sx - 0.5;
            for (int ch = 0; ch < img.c; ++ch)
                out.at(y, x, ch) = sample_nearest(img, src_y, src_x, ch);
        }
    }
    return out;
}

inline double mask_positive_fraction(const ImageBuffer& mask) {
    if (mask.empty()) return 0.0;
    double pos = 0.0;
    for (double x : mask.v) pos += (x > 0.5) ? 1.0 : 0.0;
    return pos / static_cast<double>(mask.v.size());
}

}  // namespace wsiqc
