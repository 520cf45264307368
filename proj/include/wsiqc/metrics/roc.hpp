#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace wsiqc {

// Mann-Whitney AUC: P(score+ > score-) + 0.5 * P(tie). Rank-based, so it
// handles pixel-pooled inputs with millions of scores.
inline double roc_auc_binary(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("roc_auc_binary: scores/labels length mismatch");
    const std::size_t n = scores.size();
    std::size_t npos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw std::invalid_argument("roc_auc_binary: labels must be 0/1");
        npos += (l == 1);
    }
    const std::size_t nneg = n - npos;
    if (npos == 0 || nneg == 0)
        throw std::invalid_argument("roc_auc_binary: both classes must be present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of positive ranks with midranks for ties.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(npos) * (npos + 1);
    return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

// Macro-averaged one-vs-rest AUC over C classes. Rows of `probabilities`
// must sum to 1 within 1e-6 and every class must appear in `labels`.
inline double roc_auc_multiclass(const std::vector<std::vector<double>>& probabilities,
                                 std::span<const int> labels) {
    if (probabilities.size() != labels.size())
        throw std::invalid_argument("roc_auc_multiclass: rows/labels length mismatch");
    if (probabilities.empty())
        throw std::invalid_argument("roc_auc_multiclass: empty input");
    const std::size_t c = probabilities.front().size();
    for (const auto& row : probabilities) {
        if (row.size() != c)
            throw std::invalid_argument("roc_auc_multiclass: ragged probability rows");
        double s = 0.0;
        for (double p : row) s += p;
        if (std::abs(s - 1.0) > 1e-6)
            throw std::invalid_argument("roc_auc_multiclass: probability row does not sum to 1");
    }
    std::vector<std::size_t> support(c, 0);
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= c)
            throw std::invalid_argument("roc_auc_multiclass: label out of range");
        ++support[static_cast<std::size_t>(l)];
    }
    for (std::size_t k = 0; k < c; ++k)
        if (support[k] == 0)
            throw std::invalid_argument("roc_auc_multiclass: class " + std::to_string(k) +
                                        " absent from labels");

    double total = 0.0;
    std::vector<double> scores(labels.size());
    std::vector<int> ovr(labels.size());
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            scores[i] = probabilities[i][k];
            ovr[i] = labels[i] == static_cast<int>(k) ? 1 : 0;
        }
        total += roc_auc_binary(scores, ovr);
    }
    return total / static_cast<double>(c);
}

}  // namespace wsiqc
