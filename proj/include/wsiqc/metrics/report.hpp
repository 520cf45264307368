#pragma once

#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsiqc/metrics/segmentation.hpp"

namespace wsiqc {

// Everything evaluate_segmenter reports for one model on one test set.
struct SegMetricsReport {
    std::string model_id;
    std::string optimizer;
    std::vector<double> per_image_iou;
    double avg_test_iou = 0.0;
    std::map<double, double> threshold_accuracies;
    double dice = 0.0;
    double mean_iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double roc_auc = 0.0;
};

namespace detail {
inline std::string fmt6(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}
}  // namespace detail

// One flat JSON record per evaluated model.
inline std::string report_to_json_line(const SegMetricsReport& r) {
    nlohmann::json j;
    j["model"] = r.model_id;
    j["optimizer"] = r.optimizer;
    j["avg_test_iou"] = r.avg_test_iou;
    nlohmann::json ta = nlohmann::json::object();
    for (const auto& [thr, acc] : r.threshold_accuracies)
        ta[detail::fmt6(thr)] = acc;
    j["threshold_accuracies"] = ta;
    j["dice"] = r.dice;
    j["mean_iou"] = r.mean_iou;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["roc_auc"] = r.roc_auc;
    j["per_image_iou"] = r.per_image_iou;
    return j.dump();
}

// CSV with one row per report: model, optimizer, average test IOU, then
// thresholded accuracy at 0.90 and 0.85.
inline std::string reports_to_csv(const std::vector<SegMetricsReport>& reports) {
    std::ostringstream os;
    os << "model,optimizer,avg_test_iou,test_acc_iou_0.90,test_acc_iou_0.85\n";
    for (const auto& r : reports) {
        auto acc_at = [&](double thr) {
            const auto it = r.threshold_accuracies.find(thr);
            return it == r.threshold_accuracies.end() ? std::string("-")
                                                      : detail::fmt6(it->second);
        };
        os << r.model_id << ',' << r.optimizer << ',' << detail::fmt6(r.avg_test_iou)
           << ',' << acc_at(0.90) << ',' << acc_at(0.85) << '\n';
    }
    return os.str();
}

}  // namespace wsiqc
