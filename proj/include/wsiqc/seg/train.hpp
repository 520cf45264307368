#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/core/config.hpp"
#include "wsiqc/core/types.hpp"
#include "wsiqc/data/augment.hpp"
#include "wsiqc/metrics/report.hpp"
#include "wsiqc/metrics/roc.hpp"
#include "wsiqc/metrics/segmentation.hpp"
#include "wsiqc/nn/optimizer.hpp"
#include "wsiqc/nn/schedule.hpp"
#include "wsiqc/seg/model.hpp"

namespace wsiqc::seg {

struct TrainSample {
    TileSample tile;
    MaskSample mask;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double dice = 0.0;
    double val_dice = 0.0;
    double iou = 0.0;
    double val_iou = 0.0;
    double mean_iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double learning_rate = 0.0;
};

enum class StopReason { early_stop, max_epochs };

struct TrainHistory {
    std::vector<EpochRecord> records;
    StopReason stop_reason = StopReason::max_epochs;
};

inline std::string history_to_csv(const TrainHistory& h) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,dice,val_dice,iou,val_iou,mean_iou,precision,recall,"
          "learning_rate\n";
    for (const auto& r : h.records) {
        os << r.epoch;
        for (double v : {r.train_loss, r.val_loss, r.dice, r.val_dice, r.iou, r.val_iou,
                         r.mean_iou, r.precision, r.recall, r.learning_rate})
            os << "," << wsiqc::detail::fmt6(v);
        os << '\n';
    }
    return os.str();
}

namespace detail2 {

inline bool is_segmentation_loss(Loss l) {
    return l == Loss::dice_coef_loss || l == Loss::binary_cross_entropy ||
           l == Loss::dice_bce;
}

inline nn::Var seg_loss(nn::Tape& tape, const nn::Var& pred, const nn::Tensor& target,
                        Loss kind) {
    switch (kind) {
        case Loss::dice_coef_loss: return nn::dice_loss_op(tape, pred, target);
        case Loss::binary_cross_entropy: return nn::bce_loss_op(tape, pred, target);
        case Loss::dice_bce: {
            nn::Var d = nn::dice_loss_op(tape, pred, target);
            nn::Var b = nn::bce_loss_op(tape, pred, target);
            return nn::add(tape, d, b);
        }
        default:
            throw UsageError(std::string("loss '") + to_string(kind) +
                             "' is not a segmentation loss");
    }
}

// Loss over all model outputs against one mask; DoubleUNet sums over both
// heads.
inline nn::Var total_loss(nn::Tape& tape, const std::vector<nn::Var>& outputs,
                          const nn::Tensor& target, Loss kind) {
    nn::Var acc;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        nn::Var l = seg_loss(tape, outputs[i], target, kind);
        acc = i == 0 ? l : nn::add(tape, acc, l);
    }
    return acc;
}

struct BatchMetrics {
    double loss = 0.0, dice = 0.0, iou = 0.0, mean_iou = 0.0, precision = 0.0,
           recall = 0.0;
};

inline BatchMetrics score_batch(const nn::Tensor& pred, const nn::Tensor& target,
                                double loss) {
    BatchMetrics m;
    m.loss = loss;
    m.dice = dice_coef(pred.v, target.v);
    m.iou = soft_iou(pred.v, target.v);
    m.mean_iou = mean_iou(pred.v, target.v);
    const auto [p, r] = precision_recall(pred.v, target.v);
    m.precision = p;
    m.recall = r;
    return m;
}

}  // namespace detail2

// Trains in place. Deterministic for a fixed config.seed on a fixed
// platform: shuffles, augmentation draws and init all derive from it.
inline TrainHistory train_segmenter(SegModel& model, const std::vector<TrainSample>& train,
                                    const std::vector<TrainSample>& valid,
                                    const RunConfig& config,
                                    const std::optional<AugmentParams>& augment_params = {}) {
    {
        const auto violations = validate_config(config);
        if (!violations.empty()) throw UsageError("invalid config: " + violations.front());
    }
    if (!detail2::is_segmentation_loss(config.loss))
        throw UsageError(std::string("loss '") + to_string(config.loss) +
                         "' cannot train a segmenter");
    if (train.empty()) throw DataError("train_segmenter: empty training set");

    nn::GradientOptimizer optimizer(config.optimizer);
    nn::PlateauState plateau;
    plateau.factor = config.plateau.factor;
    plateau.patience = config.plateau.patience;
    nn::EarlyStopState early;
    early.patience = config.early_stop_patience;

    double lr = config.learning_rate;
    TrainHistory history;
    Rng shuffle_rng(derive_seed(static_cast<std::uint64_t>(config.seed), "shuffle"));

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const bool has_valid = !valid.empty();

    auto run_validation = [&](double& vloss, double& vdice, double& viou) {
        double loss_acc = 0.0, dice_acc = 0.0, iou_acc = 0.0, weight = 0.0;
        for (std::size_t start = 0; start < valid.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(valid.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<const ImageBuffer*> imgs, masks;
            for (std::size_t i = start; i < end; ++i) {
                imgs.push_back(&valid[i].tile.image);
                masks.push_back(&valid[i].mask.mask);
            }
            nn::Tape tape(false);
            nn::Var input = nn::make_leaf(tensor_from_images(imgs));
            const auto outputs = model.forward(tape, input, /*training=*/false);
            const nn::Tensor target = tensor_from_images(masks);
            const double l =
                detail2::total_loss(tape, outputs, target, config.loss).value().v[0];
            const nn::Tensor& pred = outputs.back().value();
            const double w = static_cast<double>(end - start);
            loss_acc += l * w;
            dice_acc += dice_coef(pred.v, target.v) * w;
            iou_acc += soft_iou(pred.v, target.v) * w;
            weight += w;
        }
        vloss = loss_acc / weight;
        vdice = dice_acc / weight;
        viou = iou_acc / weight;
    };

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_acc = 0.0, dice_acc = 0.0, iou_acc = 0.0, miou_acc = 0.0, prec_acc = 0.0,
               rec_acc = 0.0, weight = 0.0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));

            std::vector<ImageBuffer> batch_imgs, batch_masks;
            for (std::size_t i = start; i < end; ++i) {
                const TrainSample& s = train[order[i]];
                if (augment_params) {
                    const std::uint64_t aug_seed = derive_seed(
                        derive_seed(static_cast<std::uint64_t>(config.seed), s.tile.id),
                        static_cast<std::uint64_t>(epoch));
                    auto aug = augment(s.tile.image, &s.mask.mask, *augment_params, aug_seed);
                    batch_imgs.push_back(std::move(aug.image));
                    batch_masks.push_back(std::move(*aug.mask));
                } else {
                    batch_imgs.push_back(s.tile.image);
                    batch_masks.push_back(s.mask.mask);
                }
            }
            std::vector<const ImageBuffer*> imgs, masks;
            for (auto& b : batch_imgs) imgs.push_back(&b);
            for (auto& b : batch_masks) masks.push_back(&b);

            nn::Tape tape;
            nn::Var input = nn::make_leaf(tensor_from_images(imgs));
            const auto outputs = model.forward(tape, input, /*training=*/true);
            const nn::Tensor target = tensor_from_images(masks);
            nn::Var loss = detail2::total_loss(tape, outputs, target, config.loss);

            const double loss_value = loss.value().v[0];
            if (!std::isfinite(loss_value))
                throw DivergenceError("training diverged: non-finite loss at epoch " +
                                      std::to_string(epoch));

            model.store.zero_grad();
            tape.backward(loss);
            optimizer.step(model.store.params(), lr);

            const auto bm =
                detail2::score_batch(outputs.back().value(), target, loss_value);
            const double w = static_cast<double>(end - start);
            loss_acc += bm.loss * w;
            dice_acc += bm.dice * w;
            iou_acc += bm.iou * w;
            miou_acc += bm.mean_iou * w;
            prec_acc += bm.precision * w;
            rec_acc += bm.recall * w;
            weight += w;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_acc / weight;
        rec.dice = dice_acc / weight;
        rec.iou = iou_acc / weight;
        rec.mean_iou = miou_acc / weight;
        rec.precision = prec_acc / weight;
        rec.recall = rec_acc / weight;
        rec.learning_rate = lr;

        double monitored = rec.train_loss;
        if (has_valid) {
            run_validation(rec.val_loss, rec.val_dice, rec.val_iou);
            monitored = rec.val_loss;
        } else {
            rec.val_loss = rec.train_loss;
            rec.val_dice = rec.dice;
            rec.val_iou = rec.iou;
        }
        history.records.push_back(rec);

        const auto [new_lr, new_plateau] = nn::plateau_step(plateau, monitored, lr);
        lr = new_lr;
        plateau = new_plateau;
        const auto [stop, new_early] = nn::early_stop_step(early, monitored);
        early = new_early;
        if (stop) {
            history.stop_reason = StopReason::early_stop;
            return history;
        }
    }
    history.stop_reason = StopReason::max_epochs;
    return history;
}

struct MaskPrediction {
    ImageBuffer probability;  // H x W x 1 in [0,1]
    ImageBuffer binary;       // H x W x 1 in {0,1}, thresholded at 0.5
};

// For DoubleUNet the refined second output is the prediction.
inline MaskPrediction predict_mask(SegModel& model, const ImageBuffer& image) {
    if (image.h != model.input_h || image.w != model.input_w || image.c != 3)
        throw DataError("predict_mask: image " + std::to_string(image.h) + "x" +
                        std::to_string(image.w) + "x" + std::to_string(image.c) +
                        " does not match model input " + std::to_string(model.input_h) +
                        "x" + std::to_string(model.input_w) + "x3");
    nn::Tape tape(false);
    nn::Var input = nn::make_leaf(tensor_from_images({&image}));
    const auto outputs = model.forward(tape, input, /*training=*/false);
    MaskPrediction out;
    out.probability = image_from_tensor_slice(outputs.back().value(), 0);
    out.binary = out.probability;
    for (double& v : out.binary.v) v = v > 0.5 ? 1.0 : 0.0;
    return out;
}

// Per-image soft IOU, thresholded accuracies at the requested IOU
// thresholds, pooled pixel metrics and a pooled ROC over the test set.
inline SegMetricsReport evaluate_segmenter(SegModel& model,
                                           const std::vector<TrainSample>& test_set,
                                           const std::vector<double>& iou_thresholds = {0.90,
                                                                                        0.85}) {
    if (test_set.empty()) throw DataError("evaluate_segmenter: empty test set");
    SegMetricsReport report;
    report.model_id = to_string(model.architecture);

    std::vector<double> pooled_pred, pooled_truth;
    std::vector<int> pooled_labels;
    for (const auto& s : test_set) {
        const auto pred = predict_mask(model, s.tile.image);
        report.per_image_iou.push_back(soft_iou(pred.probability.v, s.mask.mask.v));
        pooled_pred.insert(pooled_pred.end(), pred.probability.v.begin(),
                           pred.probability.v.end());
        pooled_truth.insert(pooled_truth.end(), s.mask.mask.v.begin(), s.mask.mask.v.end());
        for (double t : s.mask.mask.v) pooled_labels.push_back(t > 0.5 ? 1 : 0);
    }
    report.avg_test_iou = avg_test_iou(report.per_image_iou);
    for (double thr : iou_thresholds)
        report.threshold_accuracies[thr] = thresholded_accuracy(report.per_image_iou, thr);
    report.dice = dice_coef(pooled_pred, pooled_truth);
    report.mean_iou = mean_iou(pooled_pred, pooled_truth);
    const auto [prec, rec] = precision_recall(pooled_pred, pooled_truth);
    report.precision = prec;
    report.recall = rec;
    bool has0 = false, has1 = false;
    for (int l : pooled_labels) (l ? has1 : has0) = true;
    report.roc_auc = (has0 && has1) ? roc_auc_binary(pooled_pred, pooled_labels) : 1.0;
    return report;
}

}  // namespace wsiqc::seg
