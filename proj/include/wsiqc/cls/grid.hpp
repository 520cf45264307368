#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "wsiqc/cls/classifier.hpp"
#include "wsiqc/metrics/roc.hpp"

namespace wsiqc::cls {

struct GridResult {
    std::string backbone;
    Optimizer optimizer = Optimizer::adam;
    Loss loss = Loss::categorical_cross_entropy;
    double learning_rate = 1e-4;
    double val_loss = 0.0;
    double test_accuracy = 0.0;
    double roc_score = 0.0;
    std::string checkpoint;

    std::string key() const {
        return backbone + "|" + to_string(optimizer) + "|" + to_string(loss);
    }
};

struct GridSpec {
    std::vector<BackboneSpec> backbones;
    std::vector<Optimizer> optimizers{Optimizer::adam, Optimizer::adamax,
                                      Optimizer::rmsprop};
    std::vector<Loss> losses{Loss::categorical_cross_entropy, Loss::kl_divergence};
};

struct GridTrainParams {
    int epochs = 25;
    int batch_size = 32;
    double learning_rate = 1e-4;
    std::uint64_t seed = 42;
    bool freeze_backbone = true;
};

struct GridRunOutcome {
    std::vector<GridResult> results;
    std::vector<std::string> failures;  // "<key>: <error>"
    int skipped_existing = 0;
};

inline std::string grid_results_to_csv(const std::vector<GridResult>& results) {
    std::ostringstream os;
    os << "backbone,optimizer,loss,learning_rate,val_loss,test_accuracy,roc_score,"
          "checkpoint\n";
    for (const auto& r : results) {
        os << r.backbone << ',' << to_string(r.optimizer) << ',' << to_string(r.loss) << ','
           << detail::fmt_double(r.learning_rate) << ',' << detail::fmt_double(r.val_loss)
           << ',' << detail::fmt_double(r.test_accuracy) << ','
           << detail::fmt_double(r.roc_score) << ',' << r.checkpoint << '\n';
    }
    return os.str();
}

inline std::vector<GridResult> parse_grid_csv(const std::string& text) {
    std::vector<GridResult> out;
    std::istringstream is(text);
    std::string line;
    bool first = true;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (first) {
            first = false;
            continue;
        }
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        if (fields.size() != 8)
            throw DataError("grid csv line " + std::to_string(line_no) +
                            ": expected 8 fields, got " + std::to_string(fields.size()));
        GridResult r;
        r.backbone = fields[0];
        try {
            r.optimizer = optimizer_from_string(fields[1]);
            r.loss = loss_from_string(fields[2]);
            r.learning_rate = std::stod(fields[3]);
            r.val_loss = std::stod(fields[4]);
            r.test_accuracy = std::stod(fields[5]);
            r.roc_score = std::stod(fields[6]);
        } catch (const std::exception& e) {
            throw DataError("grid csv line " + std::to_string(line_no) + ": " + e.what());
        }
        r.checkpoint = fields[7];
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<GridResult> load_grid_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open grid results: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_grid_csv(buf.str());
}

namespace detail_grid {

inline void check_split_shape(const std::vector<LabeledImage>& train,
                              const std::vector<LabeledImage>& test, int num_classes) {
    std::vector<std::size_t> tr(num_classes, 0), te(num_classes, 0);
    for (const auto& s : train) ++tr.at(static_cast<std::size_t>(s.label));
    for (const auto& s : test) ++te.at(static_cast<std::size_t>(s.label));
    for (int k = 1; k < num_classes; ++k) {
        if (tr[k] != tr[0] || te[k] != te[0])
            throw DataError("run_grid: class-imbalanced split (train " +
                            std::to_string(tr[k]) + " vs " + std::to_string(tr[0]) +
                            ", test " + std::to_string(te[k]) + " vs " +
                            std::to_string(te[0]) + ")");
    }
    const double ratio = static_cast<double>(train.size()) /
                         static_cast<double>(train.size() + test.size());
    if (ratio < 0.60 || ratio > 0.80)
        throw DataError("run_grid: train share " + std::to_string(ratio) +
                        " is far from the 70:30 protocol");
}

}  // namespace detail_grid

// Trains one classifier per (backbone x optimizer x loss) with shared
// hyperparameters. Completed combinations found in the results CSV are
// skipped so an interrupted grid resumes; per-combination failures are
// recorded and do not abort the sweep.
inline GridRunOutcome run_grid(const std::vector<LabeledImage>& train,
                               const std::vector<LabeledImage>& test, const GridSpec& grid,
                               const GridTrainParams& params,
                               const std::filesystem::path& out_dir,
                               int num_classes = kSeverityClasses) {
    detail_grid::check_split_shape(train, test, num_classes);
    std::filesystem::create_directories(out_dir);
    const auto csv_path = out_dir / "grid_results.csv";
    const auto failures_path = out_dir / "grid_failures.log";

    GridRunOutcome outcome;
    std::set<std::string> done;
    if (std::filesystem::exists(csv_path)) {
        outcome.results = load_grid_csv(csv_path.string());
        for (const auto& r : outcome.results) done.insert(r.key());
    }

    auto persist = [&]() {
        std::ofstream out(csv_path);
        if (!out) throw DataError("cannot write grid results: " + csv_path.string());
        out << grid_results_to_csv(outcome.results);
    };
    persist();

    for (const auto& backbone : grid.backbones) {
        for (const auto optimizer : grid.optimizers) {
            for (const auto loss : grid.losses) {
                GridResult r;
                r.backbone = backbone.name;
                r.optimizer = optimizer;
                r.loss = loss;
                r.learning_rate = params.learning_rate;
                if (done.count(r.key())) {
                    ++outcome.skipped_existing;
                    continue;
                }
                try {
                    ClassifierModel model = build_classifier(
                        backbone, num_classes, derive_seed(params.seed, r.key()));
                    const auto train_result = train_classifier(
                        model, train, test, optimizer, loss, params.epochs,
                        params.batch_size, params.learning_rate,
                        derive_seed(params.seed, r.key() + "#train"),
                        params.freeze_backbone);
                    r.val_loss = train_result.final_loss;

                    std::vector<const LabeledImage*> ptrs;
                    for (const auto& s : test) ptrs.push_back(&s);
                    const auto probs = predict_probs(model, ptrs);
                    std::size_t correct = 0;
                    std::vector<std::vector<double>> prob_rows;
                    std::vector<int> labels;
                    for (std::size_t i = 0; i < probs.size(); ++i) {
                        const auto& row = probs[i];
                        const int pred = static_cast<int>(
                            std::max_element(row.begin(), row.end()) - row.begin());
                        correct += pred == test[i].label;
                        prob_rows.emplace_back(row.begin(), row.end());
                        labels.push_back(test[i].label);
                    }
                    r.test_accuracy =
                        static_cast<double>(correct) / static_cast<double>(test.size());
                    r.roc_score = roc_auc_multiclass(prob_rows, labels);

                    std::string ckpt_name = r.key();
                    std::replace(ckpt_name.begin(), ckpt_name.end(), '|', '_');
                    const auto ckpt_path = out_dir / (ckpt_name + ".wsiqc");
                    save_classifier(model, ckpt_path.string());
                    r.checkpoint = ckpt_path.filename().string();

                    outcome.results.push_back(r);
                    done.insert(r.key());
                    persist();
                } catch (const std::exception& e) {
                    outcome.failures.push_back(r.key() + ": " + e.what());
                    std::ofstream flog(failures_path, std::ios::app);
                    flog << r.key() << ": " << e.what() << '\n';
                }
            }
        }
    }
    return outcome;
}

// Top-k base models: best test accuracy first, validation loss breaks
// ties, and the combination id breaks any remainder so the order is a
// pure function of the result set.
inline std::vector<GridResult> select_base_models(std::vector<GridResult> results,
                                                  std::size_t k) {
    if (k > results.size())
        throw DataError("select_base_models: k=" + std::to_string(k) + " exceeds " +
                        std::to_string(results.size()) + " results");
    std::sort(results.begin(), results.end(), [](const GridResult& a, const GridResult& b) {
        if (a.test_accuracy != b.test_accuracy) return a.test_accuracy > b.test_accuracy;
        if (a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
        return std::make_tuple(a.backbone, std::string(to_string(a.optimizer)),
                               std::string(to_string(a.loss))) <
               std::make_tuple(b.backbone, std::string(to_string(b.optimizer)),
                               std::string(to_string(b.loss)));
    });
    results.resize(k);
    return results;
}

}  // namespace wsiqc::cls
