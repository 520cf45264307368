#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsiqc {

// rows = truth, cols = prediction
struct ConfusionMatrix {
    std::vector<std::vector<long>> counts;
    std::vector<std::string> class_names;

    std::size_t num_classes() const { return counts.size(); }

    long total() const {
        long t = 0;
        for (const auto& row : counts)
            for (long v : row) t += v;
        return t;
    }

    std::vector<long> row_sums() const {
        std::vector<long> out;
        out.reserve(counts.size());
        for (const auto& row : counts) {
            long s = 0;
            for (long v : row) s += v;
            out.push_back(s);
        }
        return out;
    }

    long diagonal_sum() const {
        long s = 0;
        for (std::size_t i = 0; i < counts.size(); ++i) s += counts[i][i];
        return s;
    }
};

inline ConfusionMatrix confusion(std::span<const int> predictions,
                                 std::span<const int> labels, int num_classes,
                                 std::vector<std::string> class_names = {}) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("confusion: predictions/labels length mismatch");
    if (num_classes < 1) throw std::invalid_argument("confusion: num_classes must be >= 1");
    ConfusionMatrix m;
    m.counts.assign(static_cast<std::size_t>(num_classes),
                    std::vector<long>(static_cast<std::size_t>(num_classes), 0));
    if (class_names.empty())
        for (int k = 0; k < num_classes; ++k) class_names.push_back(std::to_string(k));
    if (class_names.size() != static_cast<std::size_t>(num_classes))
        throw std::invalid_argument("confusion: class_names size mismatch");
    m.class_names = std::move(class_names);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int t = labels[i];
        const int p = predictions[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
            throw std::invalid_argument("confusion: class index out of range at sample " +
                                        std::to_string(i));
        ++m.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }
    return m;
}

}  // namespace wsiqc
