#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/core/image.hpp"

namespace wsiqc {

// Decodes PNG/JPEG/TIFF tiles into [0,1] doubles. Grayscale files expand
// to 3 channels when as_mask is false; masks load as single-channel {0,1}.
inline ImageBuffer load_image(const std::string& path, bool as_mask = false) {
    cv::Mat m = cv::imread(path, as_mask ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    if (m.empty()) throw DataError("cannot read image: " + path);
    ImageBuffer out(m.rows, m.cols, as_mask ? 1 : 3);
    if (as_mask) {
        for (int y = 0; y < m.rows; ++y)
            for (int x = 0; x < m.cols; ++x)
                out.at(y, x, 0) = m.at<unsigned char>(y, x) > 127 ? 1.0 : 0.0;
    } else {
        for (int y = 0; y < m.rows; ++y) {
            for (int x = 0; x < m.cols; ++x) {
                const auto px = m.at<cv::Vec3b>(y, x);  // BGR
                out.at(y, x, 0) = px[2] / 255.0;
                out.at(y, x, 1) = px[1] / 255.0;
                out.at(y, x, 2) = px[0] / 255.0;
            }
        }
    }
    return out;
}

inline void save_image(const ImageBuffer& img, const std::string& path) {
    if (img.empty()) throw DataError("save_image: empty image");
    auto to_byte = [](double v) {
        return static_cast<unsigned char>(std::clamp(std::lround(v * 255.0), 0L, 255L));
    };
    cv::Mat m;
    if (img.c == 1) {
        m = cv::Mat(img.h, img.w, CV_8UC1);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                m.at<unsigned char>(y, x) = to_byte(img.at(y, x, 0));
    } else if (img.c == 3) {
        m = cv::Mat(img.h, img.w, CV_8UC3);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                m.at<cv::Vec3b>(y, x) = cv::Vec3b(to_byte(img.at(y, x, 2)),
                                                  to_byte(img.at(y, x, 1)),
                                                  to_byte(img.at(y, x, 0)));
    } else {
        throw DataError("save_image: unsupported channel count " + std::to_string(img.c));
    }
    if (!cv::imwrite(path, m)) throw DataError("cannot write image: " + path);
}

}  // namespace wsiqc
