#pragma once

#include <cstdlib>
#include <filesystem>
#include <unistd.h>
#include <string>
#include <vector>

#include "wsiqc/common/rng.hpp"

namespace testutil {

// Scratch directory under the system temp root, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("wsiqc_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    static int& counter() {
        static int c = 0;
        return c;
    }
};

// --- independent pixel-counting oracles (kept separate from the library
// implementations on purpose) ------------------------------------------------

struct PixelCounts {
    long tp = 0, fp = 0, fn = 0, tn = 0;
};

inline PixelCounts count_pixels(const std::vector<double>& pred,
                                const std::vector<double>& truth, double thr = 0.5) {
    PixelCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > thr;
        const bool t = truth[i] > 0.5;
        if (p && t) ++c.tp;
        else if (p && !t) ++c.fp;
        else if (!p && t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline double oracle_dice_binary(const PixelCounts& c, double smooth) {
    return (2.0 * c.tp + smooth) /
           (static_cast<double>(c.tp + c.fp) + static_cast<double>(c.tp + c.fn) + smooth);
}

inline double oracle_soft_iou_binary(const PixelCounts& c, double smooth) {
    return (static_cast<double>(c.tp) + smooth) /
           (static_cast<double>(c.tp + c.fp + c.fn) + smooth);
}

inline double oracle_mean_iou(const PixelCounts& c) {
    const long union_fg = c.tp + c.fp + c.fn;
    const long union_bg = c.tn + c.fp + c.fn;
    const double iou_fg = union_fg == 0 ? 1.0 : static_cast<double>(c.tp) / union_fg;
    const double iou_bg = union_bg == 0 ? 1.0 : static_cast<double>(c.tn) / union_bg;
    return 0.5 * (iou_fg + iou_bg);
}

inline double oracle_precision(const PixelCounts& c) {
    return (c.tp + c.fp) == 0 ? 1.0 : static_cast<double>(c.tp) / (c.tp + c.fp);
}

inline double oracle_recall(const PixelCounts& c) {
    return (c.tp + c.fn) == 0 ? 1.0 : static_cast<double>(c.tp) / (c.tp + c.fn);
}

// Exhaustive pairwise Mann-Whitney count.
inline double oracle_roc_auc(const std::vector<double>& scores,
                             const std::vector<int>& labels) {
    double wins = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

inline std::vector<double> random_binary_mask(wsiqc::Rng& rng, std::size_t n, double p) {
    std::vector<double> out(n);
    for (auto& v : out) v = rng.bernoulli(p) ? 1.0 : 0.0;
    return out;
}

}  // namespace testutil
