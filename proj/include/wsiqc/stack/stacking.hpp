#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "wsiqc/cls/classifier.hpp"
#include "wsiqc/common/rng.hpp"
#include "wsiqc/metrics/report.hpp"
#include "wsiqc/stack/learners.hpp"

namespace wsiqc::stack {

// A base model seen by the stacker: an id and a batch probability
// predictor. Real classifiers and synthetic test bases both fit here.
struct BaseModel {
    std::string id;
    std::function<std::vector<std::array<double, 3>>(
        const std::vector<const cls::LabeledImage*>&)>
        predict;
};

inline BaseModel wrap_classifier(cls::ClassifierModel& model, std::string id) {
    return BaseModel{std::move(id), [&model](const std::vector<const cls::LabeledImage*>& s) {
                         return cls::predict_probs(model, s);
                     }};
}

// Stacked probability features: base i owns columns [i*C, (i+1)*C).
struct MetaFeatureMatrix {
    FeatureRows rows;
    std::vector<int> labels;
    int num_classes = kSeverityClasses;
    int num_bases = 0;
    std::string base_fingerprint;

    void validate_blocks() const {
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != static_cast<std::size_t>(num_bases * num_classes))
                throw DataError("meta features: row " + std::to_string(r) +
                                " has wrong width");
            for (int b = 0; b < num_bases; ++b) {
                double sum = 0.0;
                for (int k = 0; k < num_classes; ++k)
                    sum += rows[r][static_cast<std::size_t>(b * num_classes + k)];
                if (std::abs(sum - 1.0) > 1e-6)
                    throw DataError("meta features: block " + std::to_string(b) + " of row " +
                                    std::to_string(r) + " sums to " + std::to_string(sum));
            }
        }
    }
};

inline std::string fingerprint_of(const std::vector<BaseModel>& bases) {
    std::string joined;
    for (const auto& b : bases) {
        joined += b.id;
        joined += '+';
    }
    return joined + std::to_string(fnv1a64(joined));
}

inline MetaFeatureMatrix make_meta_features(const std::vector<BaseModel>& bases,
                                            const std::vector<cls::LabeledImage>& samples) {
    if (bases.empty()) throw DataError("make_meta_features: no base models");
    MetaFeatureMatrix m;
    m.num_bases = static_cast<int>(bases.size());
    m.base_fingerprint = fingerprint_of(bases);
    m.rows.assign(samples.size(),
                  FeatureRow(static_cast<std::size_t>(m.num_bases * m.num_classes), 0.0));
    m.labels.reserve(samples.size());
    for (const auto& s : samples) m.labels.push_back(s.label);

    std::vector<const cls::LabeledImage*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    for (int b = 0; b < m.num_bases; ++b) {
        const auto probs = bases[static_cast<std::size_t>(b)].predict(ptrs);
        if (probs.size() != samples.size())
            throw DataError("make_meta_features: base '" +
                            bases[static_cast<std::size_t>(b)].id +
                            "' returned a wrong-sized batch");
        for (std::size_t i = 0; i < samples.size(); ++i)
            for (int k = 0; k < m.num_classes; ++k)
                m.rows[i][static_cast<std::size_t>(b * m.num_classes + k)] =
                    probs[i][static_cast<std::size_t>(k)];
    }
    m.validate_blocks();
    return m;
}

struct MetaModel {
    MetaLearnerKind kind = MetaLearnerKind::logistic_regression;
    std::shared_ptr<MetaLearnerBase> learner;
    std::string base_fingerprint;
    int num_classes = kSeverityClasses;
};

inline MetaModel fit_meta_learner(MetaLearnerKind kind, const MetaFeatureMatrix& features,
                                  std::uint64_t seed = 0) {
    features.validate_blocks();
    MetaModel m;
    m.kind = kind;
    m.learner = make_meta_learner(kind);
    m.base_fingerprint = features.base_fingerprint;
    m.num_classes = features.num_classes;
    m.learner->fit(features.rows, features.labels, features.num_classes, seed);
    return m;
}

struct StackedPrediction {
    int class_index = 0;
    std::vector<double> scores;
};

// The stacked decision for one sample. The base-model order must be the
// one the meta model was fitted on; the stored fingerprint guards it.
inline StackedPrediction stacked_predict(const std::vector<BaseModel>& bases,
                                         const MetaModel& meta,
                                         const cls::LabeledImage& sample) {
    const std::string fp = fingerprint_of(bases);
    if (fp != meta.base_fingerprint)
        throw DataError("stacked_predict: base-model order fingerprint mismatch (got " + fp +
                        ", meta model expects " + meta.base_fingerprint + ")");
    std::vector<cls::LabeledImage> one{sample};
    const auto features = make_meta_features(bases, one);
    StackedPrediction out;
    out.scores = meta.learner->score(features.rows.front());
    out.class_index = meta.learner->predict(features.rows.front());
    return out;
}

// ---- the comparison sweep ---------------------------------------------------

// A base that can also be retrained on a subset, for out-of-fold feature
// construction.
struct TrainableBase {
    std::string id;
    BaseModel full;  // trained on the whole training split
    std::function<BaseModel(const std::vector<cls::LabeledImage>& subset,
                            std::uint64_t seed)>
        retrain;
};

struct StackingComparison {
    std::vector<int> combo_sizes;
    std::vector<MetaLearnerKind> kinds;
    std::vector<std::vector<double>> accuracy;   // combo x kind
    std::vector<std::string> combo_bases;        // semicolon-joined ids per combo
    std::vector<std::vector<MetaModel>> metas;   // fitted models per cell

    // best accuracy; earlier combo, then earlier kind breaks ties
    std::pair<std::size_t, std::size_t> best_cell() const {
        std::pair<std::size_t, std::size_t> best{0, 0};
        double best_acc = -1.0;
        for (std::size_t r = 0; r < accuracy.size(); ++r)
            for (std::size_t c = 0; c < accuracy[r].size(); ++c)
                if (accuracy[r][c] > best_acc) {
                    best_acc = accuracy[r][c];
                    best = {r, c};
                }
        return best;
    }
};

inline std::string comparison_to_csv(const StackingComparison& c) {
    std::ostringstream os;
    os << "combo,bases";
    for (auto k : c.kinds) os << ',' << to_string(k);
    os << '\n';
    for (std::size_t r = 0; r < c.combo_sizes.size(); ++r) {
        os << "top_" << c.combo_sizes[r] << ',' << c.combo_bases[r];
        for (double v : c.accuracy[r]) os << ',' << detail::fmt6(v);
        os << '\n';
    }
    return os.str();
}

namespace detail_stack {

inline FeatureRows take_columns(const FeatureRows& rows, int num_bases_wanted,
                                int num_classes) {
    FeatureRows out;
    out.reserve(rows.size());
    const std::size_t width = static_cast<std::size_t>(num_bases_wanted * num_classes);
    for (const auto& r : rows) out.emplace_back(r.begin(), r.begin() + width);
    return out;
}

}  // namespace detail_stack

// Accuracy of every (top-k combo, meta learner) cell.
//
// Leakage-free protocol (default): each base is retrained per internal
// fold of the training split; the meta learner fits on those out-of-fold
// probabilities, then is scored on the untouched eval split through the
// fully-trained bases. paper_protocol=true instead fits the meta learner
// on the eval-split probabilities themselves, reproducing the paper's
// (leaky) numbers for comparison.
inline StackingComparison run_stacking_comparison(
    const std::vector<TrainableBase>& ranked_bases,
    const std::vector<cls::LabeledImage>& train_set,
    const std::vector<cls::LabeledImage>& eval_set, const std::vector<int>& combo_sizes,
    const std::vector<MetaLearnerKind>& kinds, std::uint64_t seed,
    bool paper_protocol = false, int internal_folds = 5) {
    if (ranked_bases.empty()) throw DataError("run_stacking_comparison: no base models");
    if (eval_set.empty()) throw DataError("run_stacking_comparison: empty eval set");
    for (int sz : combo_sizes)
        if (sz < 1 || static_cast<std::size_t>(sz) > ranked_bases.size())
            throw DataError("run_stacking_comparison: combo size " + std::to_string(sz) +
                            " exceeds the " + std::to_string(ranked_bases.size()) +
                            " available bases");

    const int num_classes = kSeverityClasses;
    const int nb = static_cast<int>(ranked_bases.size());

    // eval features through the fully trained bases, all bases at once
    std::vector<BaseModel> full_models;
    for (const auto& b : ranked_bases) full_models.push_back(b.full);
    const MetaFeatureMatrix eval_features = make_meta_features(full_models, eval_set);

    // out-of-fold features over the training split
    MetaFeatureMatrix train_features;
    if (!paper_protocol) {
        if (train_set.size() < static_cast<std::size_t>(internal_folds))
            throw DataError("run_stacking_comparison: training split smaller than the "
                            "internal fold count");
        train_features.num_bases = nb;
        train_features.num_classes = num_classes;
        train_features.base_fingerprint = fingerprint_of(full_models);
        train_features.rows.assign(
            train_set.size(), FeatureRow(static_cast<std::size_t>(nb * num_classes), 0.0));
        for (const auto& s : train_set) train_features.labels.push_back(s.label);

        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng fold_rng(derive_seed(seed, "oof_folds"));
        fold_rng.shuffle(order);

        for (int fold = 0; fold < internal_folds; ++fold) {
            std::vector<cls::LabeledImage> fit_part;
            std::vector<std::size_t> held;
            for (std::size_t pos = 0; pos < order.size(); ++pos) {
                if (static_cast<int>(pos % static_cast<std::size_t>(internal_folds)) == fold)
                    held.push_back(order[pos]);
                else
                    fit_part.push_back(train_set[order[pos]]);
            }
            std::vector<const cls::LabeledImage*> held_ptrs;
            for (std::size_t i : held) held_ptrs.push_back(&train_set[i]);

            for (int b = 0; b < nb; ++b) {
                const BaseModel fold_model = ranked_bases[static_cast<std::size_t>(b)].retrain(
                    fit_part, derive_seed(seed, ranked_bases[static_cast<std::size_t>(b)].id +
                                                    "#fold" + std::to_string(fold)));
                const auto probs = fold_model.predict(held_ptrs);
                for (std::size_t i = 0; i < held.size(); ++i)
                    for (int k = 0; k < num_classes; ++k)
                        train_features.rows[held[i]]
                                          [static_cast<std::size_t>(b * num_classes + k)] =
                            probs[i][static_cast<std::size_t>(k)];
            }
        }
        train_features.validate_blocks();
    }

    const MetaFeatureMatrix& fit_source = paper_protocol ? eval_features : train_features;

    StackingComparison table;
    table.combo_sizes = combo_sizes;
    table.kinds = kinds;
    for (int sz : combo_sizes) {
        std::string ids;
        for (int b = 0; b < sz; ++b) {
            if (b) ids += ';';
            ids += ranked_bases[static_cast<std::size_t>(b)].id;
        }
        table.combo_bases.push_back(ids);

        const std::vector<BaseModel> prefix(full_models.begin(),
                                            full_models.begin() + sz);
        MetaFeatureMatrix fit_sub;
        fit_sub.rows = detail_stack::take_columns(fit_source.rows, sz, num_classes);
        fit_sub.labels = fit_source.labels;
        fit_sub.num_bases = sz;
        fit_sub.num_classes = num_classes;
        fit_sub.base_fingerprint = fingerprint_of(prefix);
        const FeatureRows eval_rows =
            detail_stack::take_columns(eval_features.rows, sz, num_classes);

        std::vector<double> row;
        std::vector<MetaModel> row_metas;
        for (auto kind : kinds) {
            MetaModel meta = fit_meta_learner(
                kind, fit_sub,
                derive_seed(seed, std::string(to_string(kind)) + "#" + std::to_string(sz)));
            std::size_t correct = 0;
            for (std::size_t i = 0; i < eval_rows.size(); ++i)
                correct += meta.learner->predict(eval_rows[i]) == eval_features.labels[i];
            row.push_back(static_cast<double>(correct) /
                          static_cast<double>(eval_rows.size()));
            row_metas.push_back(std::move(meta));
        }
        table.accuracy.push_back(std::move(row));
        table.metas.push_back(std::move(row_metas));
    }
    return table;
}

}  // namespace wsiqc::stack
