#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "wsiqc/common/errors.hpp"

namespace wsiqc {

namespace detail {
inline void require_same_size(std::span<const double> a, std::span<const double> b,
                              const char* op) {
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                    std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
}
}  // namespace detail

// (2*sum(pred*truth) + smooth) / (sum(pred) + sum(truth) + smooth)
inline double dice_coef(std::span<const double> pred, std::span<const double> truth,
                        double smooth = 1.0) {
    detail::require_same_size(pred, truth, "dice_coef");
    if (!(smooth > 0.0)) throw std::invalid_argument("dice_coef: smooth must be > 0");
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred[i] * truth[i];
        psum += pred[i];
        tsum += truth[i];
    }
    return (2.0 * inter + smooth) / (psum + tsum + smooth);
}

inline double dice_loss(std::span<const double> pred, std::span<const double> truth,
                        double smooth = 1.0) {
    return -dice_coef(pred, truth, smooth);
}

// (sum(pred*truth) + smooth) / (sum(pred) + sum(truth) - sum(pred*truth) + smooth)
inline double soft_iou(std::span<const double> pred, std::span<const double> truth,
                       double smooth = 1.0) {
    detail::require_same_size(pred, truth, "soft_iou");
    if (!(smooth > 0.0)) throw std::invalid_argument("soft_iou: smooth must be > 0");
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred[i] * truth[i];
        psum += pred[i];
        tsum += truth[i];
    }
    return (inter + smooth) / (psum + tsum - inter + smooth);
}

// Two-class hard IOU, averaged over background and foreground after
// binarizing pred at the threshold. An absent class (zero union) counts
// as IOU 1.
inline double mean_iou(std::span<const double> pred, std::span<const double> truth,
                       double binarize_threshold = 0.5) {
    detail::require_same_size(pred, truth, "mean_iou");
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0))
        throw std::invalid_argument("mean_iou: threshold must lie in (0,1)");
    std::size_t inter_fg = 0, union_fg = 0, inter_bg = 0, union_bg = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > binarize_threshold;
        const bool t = truth[i] > 0.5;
        inter_fg += (p && t);
        union_fg += (p || t);
        inter_bg += (!p && !t);
        union_bg += (!p || !t);
    }
    const double iou_fg = union_fg == 0 ? 1.0 : static_cast<double>(inter_fg) / union_fg;
    const double iou_bg = union_bg == 0 ? 1.0 : static_cast<double>(inter_bg) / union_bg;
    return 0.5 * (iou_fg + iou_bg);
}

// Precision and recall over the binarized prediction. A zero denominator
// yields 1.0 (empty prediction / empty truth conventions).
inline std::pair<double, double> precision_recall(std::span<const double> pred,
                                                  std::span<const double> truth,
                                                  double binarize_threshold = 0.5) {
    detail::require_same_size(pred, truth, "precision_recall");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > binarize_threshold;
        const bool t = truth[i] > 0.5;
        tp += (p && t);
        fp += (p && !t);
        fn += (!p && t);
    }
    const double precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
    const double recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fn);
    return {precision, recall};
}

inline double avg_test_iou(std::span<const double> per_image_ious) {
    if (per_image_ious.empty())
        throw std::invalid_argument("avg_test_iou: empty per-image IOU list");
    double s = 0.0;
    for (double v : per_image_ious) s += v;
    return s / static_cast<double>(per_image_ious.size());
}

// Fraction of images whose IOU strictly exceeds the threshold.
inline double thresholded_accuracy(std::span<const double> per_image_ious,
                                   double iou_threshold) {
    if (per_image_ious.empty())
        throw std::invalid_argument("thresholded_accuracy: empty per-image IOU list");
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw std::invalid_argument("thresholded_accuracy: threshold must lie in (0,1)");
    std::size_t above = 0;
    for (double v : per_image_ious) above += (v > iou_threshold);
    return static_cast<double>(above) / static_cast<double>(per_image_ious.size());
}

}  // namespace wsiqc
