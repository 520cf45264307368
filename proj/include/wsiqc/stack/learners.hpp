#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/common/rng.hpp"

namespace wsiqc::stack {

// The ten meta learners compared by the stacking stage, in table column
// order.
enum class MetaLearnerKind {
    logistic_regression,
    knn,
    svm,
    decision_tree,
    random_forest,
    adaboost,
    xgb_classifier,
    gb_regressor,
    gb_classifier,
    gaussian_nb
};

inline const std::array<MetaLearnerKind, 10>& all_meta_kinds() {
    static const std::array<MetaLearnerKind, 10> kinds{
        MetaLearnerKind::logistic_regression, MetaLearnerKind::knn,
        MetaLearnerKind::svm,                 MetaLearnerKind::decision_tree,
        MetaLearnerKind::random_forest,       MetaLearnerKind::adaboost,
        MetaLearnerKind::xgb_classifier,      MetaLearnerKind::gb_regressor,
        MetaLearnerKind::gb_classifier,       MetaLearnerKind::gaussian_nb};
    return kinds;
}

inline const char* to_string(MetaLearnerKind k) {
    switch (k) {
        case MetaLearnerKind::logistic_regression: return "logistic_regression";
        case MetaLearnerKind::knn: return "knn";
        case MetaLearnerKind::svm: return "svm";
        case MetaLearnerKind::decision_tree: return "decision_tree";
        case MetaLearnerKind::random_forest: return "random_forest";
        case MetaLearnerKind::adaboost: return "adaboost";
        case MetaLearnerKind::xgb_classifier: return "xgb_classifier";
        case MetaLearnerKind::gb_regressor: return "gb_regressor";
        case MetaLearnerKind::gb_classifier: return "gb_classifier";
        case MetaLearnerKind::gaussian_nb: return "gaussian_nb";
    }
    return "?";
}

inline MetaLearnerKind meta_kind_from_string(const std::string& s) {
    for (auto k : all_meta_kinds())
        if (s == to_string(k)) return k;
    throw DataError("unknown meta learner kind: '" + s + "'");
}

using FeatureRow = std::vector<double>;
using FeatureRows = std::vector<FeatureRow>;

class MetaLearnerBase {
public:
    virtual ~MetaLearnerBase() = default;
    virtual void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
                     std::uint64_t seed) = 0;
    // Per-class scores; higher wins. Not necessarily normalized.
    virtual std::vector<double> score(const FeatureRow& x) const = 0;
    virtual nlohmann::json save_state() const = 0;
    virtual void load_state(const nlohmann::json& j) = 0;

    int predict(const FeatureRow& x) const {
        const auto s = score(x);
        return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
    }

protected:
    static void require_two_classes(const std::vector<int>& y) {
        if (y.empty()) throw DataError("meta learner: empty training set");
        const int first = y.front();
        for (int v : y)
            if (v != first) return;
        throw DataError("meta learner: degenerate single-class training set");
    }
};

// ---- shared tree machinery --------------------------------------------------

namespace tree {

struct Node {
    int feature = -1;  // -1: leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    std::vector<double> value;  // class distribution or a single payload
};

struct Tree {
    std::vector<Node> nodes;

    const std::vector<double>& predict(const FeatureRow& x) const {
        int cur = 0;
        while (nodes[static_cast<std::size_t>(cur)].feature >= 0) {
            const auto& n = nodes[static_cast<std::size_t>(cur)];
            cur = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(cur)].value;
    }
};

// Gini-impurity classification tree with optional sample weights and an
// optional per-split feature subset (the forest path).
class ClassificationBuilder {
public:
    ClassificationBuilder(const FeatureRows& x, const std::vector<int>& y,
                          const std::vector<double>& weights, int num_classes,
                          int max_depth, Rng* feature_rng = nullptr,
                          int features_per_split = -1)
        : x_(x), y_(y), w_(weights), c_(num_classes), max_depth_(max_depth),
          rng_(feature_rng), per_split_(features_per_split) {}

    Tree build(const std::vector<int>& indices) {
        Tree t;
        grow(t, indices, 0);
        return t;
    }

private:
    int grow(Tree& t, const std::vector<int>& idx, int depth) {
        std::vector<double> counts(static_cast<std::size_t>(c_), 0.0);
        double total = 0.0;
        for (int i : idx) {
            counts[static_cast<std::size_t>(y_[static_cast<std::size_t>(i)])] +=
                w_[static_cast<std::size_t>(i)];
            total += w_[static_cast<std::size_t>(i)];
        }
        const int node_id = static_cast<int>(t.nodes.size());
        t.nodes.push_back({});
        auto as_leaf = [&]() {
            auto& n = t.nodes[static_cast<std::size_t>(node_id)];
            n.value = counts;
            if (total > 0)
                for (double& v : n.value) v /= total;
            return node_id;
        };

        const double impurity = gini(counts, total);
        if (depth >= max_depth_ || idx.size() < 2 || impurity <= 0.0) return as_leaf();

        const int d = static_cast<int>(x_.front().size());
        std::vector<int> features(static_cast<std::size_t>(d));
        std::iota(features.begin(), features.end(), 0);
        if (rng_ && per_split_ > 0 && per_split_ < d) {
            rng_->shuffle(features);
            features.resize(static_cast<std::size_t>(per_split_));
            std::sort(features.begin(), features.end());
        }

        int best_feature = -1;
        double best_threshold = 0.0, best_score = impurity;
        std::vector<int> sorted(idx);
        for (int f : features) {
            std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
                const double fa = x_[static_cast<std::size_t>(a)][static_cast<std::size_t>(f)];
                const double fb = x_[static_cast<std::size_t>(b)][static_cast<std::size_t>(f)];
                return fa != fb ? fa < fb : a < b;
            });
            std::vector<double> left(static_cast<std::size_t>(c_), 0.0);
            double left_total = 0.0;
            for (std::size_t pos = 0; pos + 1 < sorted.size(); ++pos) {
                const int i = sorted[pos];
                left[static_cast<std::size_t>(y_[static_cast<std::size_t>(i)])] +=
                    w_[static_cast<std::size_t>(i)];
                left_total += w_[static_cast<std::size_t>(i)];
                const double xv = x_[static_cast<std::size_t>(i)][static_cast<std::size_t>(f)];
                const double xn =
                    x_[static_cast<std::size_t>(sorted[pos + 1])][static_cast<std::size_t>(f)];
                if (xv == xn) continue;
                std::vector<double> right(static_cast<std::size_t>(c_));
                for (int k = 0; k < c_; ++k)
                    right[static_cast<std::size_t>(k)] =
                        counts[static_cast<std::size_t>(k)] - left[static_cast<std::size_t>(k)];
                const double right_total = total - left_total;
                const double score = (left_total * gini(left, left_total) +
                                      right_total * gini(right, right_total)) /
                                     total;
                if (score < best_score - 1e-15) {
                    best_score = score;
                    best_feature = f;
                    best_threshold = 0.5 * (xv + xn);
                }
            }
        }
        if (best_feature < 0) return as_leaf();

        std::vector<int> left_idx, right_idx;
        for (int i : idx)
            (x_[static_cast<std::size_t>(i)][static_cast<std::size_t>(best_feature)] <=
                     best_threshold
                 ? left_idx
                 : right_idx)
                .push_back(i);
        if (left_idx.empty() || right_idx.empty()) return as_leaf();

        const int l = grow(t, left_idx, depth + 1);
        const int r = grow(t, right_idx, depth + 1);
        auto& n = t.nodes[static_cast<std::size_t>(node_id)];
        n.feature = best_feature;
        n.threshold = best_threshold;
        n.left = l;
        n.right = r;
        return node_id;
    }

    static double gini(const std::vector<double>& counts, double total) {
        if (total <= 0.0) return 0.0;
        double g = 1.0;
        for (double cnt : counts) {
            const double p = cnt / total;
            g -= p * p;
        }
        return g;
    }

    const FeatureRows& x_;
    const std::vector<int>& y_;
    const std::vector<double>& w_;
    int c_;
    int max_depth_;
    Rng* rng_;
    int per_split_;
};

// Newton-step regression tree on (grad, hess): leaf = -G/(H+lambda).
// Plain squared-error residual fitting is grad = -residual, hess = 1.
class RegressionBuilder {
public:
    RegressionBuilder(const FeatureRows& x, const std::vector<double>& grad,
                      const std::vector<double>& hess, int max_depth, double lambda)
        : x_(x), g_(grad), h_(hess), max_depth_(max_depth), lambda_(lambda) {}

    Tree build(const std::vector<int>& indices) {
        Tree t;
        grow(t, indices, 0);
        return t;
    }

private:
    int grow(Tree& t, const std::vector<int>& idx, int depth) {
        double gsum = 0.0, hsum = 0.0;
        for (int i : idx) {
            gsum += g_[static_cast<std::size_t>(i)];
            hsum += h_[static_cast<std::size_t>(i)];
        }
        const int node_id = static_cast<int>(t.nodes.size());
        t.nodes.push_back({});
        auto as_leaf = [&]() {
            t.nodes[static_cast<std::size_t>(node_id)].value = {-gsum / (hsum + lambda_)};
            return node_id;
        };
        if (depth >= max_depth_ || idx.size() < 2) return as_leaf();

        const double parent_obj = gsum * gsum / (hsum + lambda_);
        const int d = static_cast<int>(x_.front().size());
        int best_feature = -1;
        double best_threshold = 0.0, best_gain = 1e-12;
        std::vector<int> sorted(idx);
        for (int f = 0; f < d; ++f) {
            std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
                const double fa = x_[static_cast<std::size_t>(a)][static_cast<std::size_t>(f)];
                const double fb = x_[static_cast<std::size_t>(b)][static_cast<std::size_t>(f)];
                return fa != fb ? fa < fb : a < b;
            });
            double gl = 0.0, hl = 0.0;
            for (std::size_t pos = 0; pos + 1 < sorted.size(); ++pos) {
                const int i = sorted[pos];
                gl += g_[static_cast<std::size_t>(i)];
                hl += h_[static_cast<std::size_t>(i)];
                const double xv = x_[static_cast<std::size_t>(i)][static_cast<std::size_t>(f)];
                const double xn =
                    x_[static_cast<std::size_t>(sorted[pos + 1])][static_cast<std::size_t>(f)];
                if (xv == xn) continue;
                const double gr = gsum - gl, hr = hsum - hl;
                const double gain = gl * gl / (hl + lambda_) + gr * gr / (hr + lambda_) -
                                    parent_obj;
                if (gain > best_gain + 1e-15) {
                    best_gain = gain;
                    best_feature = f;
                    best_threshold = 0.5 * (xv + xn);
                }
            }
        }
        if (best_feature < 0) return as_leaf();

        std::vector<int> left_idx, right_idx;
        for (int i : idx)
            (x_[static_cast<std::size_t>(i)][static_cast<std::size_t>(best_feature)] <=
                     best_threshold
                 ? left_idx
                 : right_idx)
                .push_back(i);
        if (left_idx.empty() || right_idx.empty()) return as_leaf();
        const int l = grow(t, left_idx, depth + 1);
        const int r = grow(t, right_idx, depth + 1);
        auto& n = t.nodes[static_cast<std::size_t>(node_id)];
        n.feature = best_feature;
        n.threshold = best_threshold;
        n.left = l;
        n.right = r;
        return node_id;
    }

    const FeatureRows& x_;
    const std::vector<double>& g_;
    const std::vector<double>& h_;
    int max_depth_;
    double lambda_;
};

inline std::vector<int> all_indices(std::size_t n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

inline nlohmann::json tree_to_json(const Tree& t) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
        nodes.push_back({{"f", n.feature},
                         {"t", n.threshold},
                         {"l", n.left},
                         {"r", n.right},
                         {"v", n.value}});
    return nodes;
}

inline Tree tree_from_json(const nlohmann::json& j) {
    Tree t;
    for (const auto& n : j) {
        Node node;
        node.feature = n.at("f").get<int>();
        node.threshold = n.at("t").get<double>();
        node.left = n.at("l").get<int>();
        node.right = n.at("r").get<int>();
        node.value = n.at("v").get<std::vector<double>>();
        t.nodes.push_back(std::move(node));
    }
    return t;
}

inline nlohmann::json trees_to_json(const std::vector<Tree>& trees) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : trees) arr.push_back(tree_to_json(t));
    return arr;
}

inline std::vector<Tree> trees_from_json(const nlohmann::json& j) {
    std::vector<Tree> out;
    for (const auto& t : j) out.push_back(tree_from_json(t));
    return out;
}

}  // namespace tree

// ---- the ten learners -------------------------------------------------------

// Multinomial softmax regression, full-batch Adam, small L2.
class LogisticRegressionLearner final : public MetaLearnerBase {
public:
    void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
             std::uint64_t) override {
        require_two_classes(y);
        c_ = num_classes;
        d_ = static_cast<int>(x.front().size());
        w_.assign(static_cast<std::size_t>(c_) * d_, 0.0);
        b_.assign(static_cast<std::size_t>(c_), 0.0);
        std::vector<double> mw(w_.size(), 0.0), vw(w_.size(), 0.0);
        std::vector<double> mb(b_.size(), 0.0), vb(b_.size(), 0.0);
        const double lr = 0.05, l2 = 1e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const std::size_t n = x.size();
        std::vector<double> gw(w_.size()), gb(b_.size());
        for (int it = 1; it <= 400; ++it) {
            std::fill(gw.begin(), gw.end(), 0.0);
            std::fill(gb.begin(), gb.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const auto p = softmax_scores(x[i]);
                for (int k = 0; k < c_; ++k) {
                    const double delta =
                        p[static_cast<std::size_t>(k)] - (y[i] == k ? 1.0 : 0.0);
                    gb[static_cast<std::size_t>(k)] += delta;
                    for (int j = 0; j < d_; ++j)
                        gw[static_cast<std::size_t>(k) * d_ + j] +=
                            delta * x[i][static_cast<std::size_t>(j)];
                }
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            const double bc1 = 1.0 - std::pow(b1, it);
            const double bc2 = 1.0 - std::pow(b2, it);
            for (std::size_t j = 0; j < w_.size(); ++j) {
                const double g = gw[j] * inv_n + l2 * w_[j];
                mw[j] = b1 * mw[j] + (1 - b1) * g;
                vw[j] = b2 * vw[j] + (1 - b2) * g * g;
                w_[j] -= lr * (mw[j] / bc1) / (std::sqrt(vw[j] / bc2) + eps);
            }
            for (std::size_t j = 0; j < b_.size(); ++j) {
                const double g = gb[j] * inv_n;
                mb[j] = b1 * mb[j] + (1 - b1) * g;
                vb[j] = b2 * vb[j] + (1 - b2) * g * g;
                b_[j] -= lr * (mb[j] / bc1) / (std::sqrt(vb[j] / bc2) + eps);
            }
        }
    }

    std::vector<double> score(const FeatureRow& x) const override {
        return softmax_scores(x);
    }

    nlohmann::json save_state() const override {
        return {{"c", c_}, {"d", d_}, {"w", w_}, {"b", b_}};
    }
    void load_state(const nlohmann::json& j) override {
        c_ = j.at("c").get<int>();
        d_ = j.at("d").get<int>();
        w_ = j.at("w").get<std::vector<double>>();
        b_ = j.at("b").get<std::vector<double>>();
    }

private:
    std::vector<double> softmax_scores(const FeatureRow& x) const {
        std::vector<double> z(static_cast<std::size_t>(c_), 0.0);
        for (int k = 0; k < c_; ++k) {
            double acc = b_[static_cast<std::size_t>(k)];
            for (int j = 0; j < d_; ++j)
                acc += w_[static_cast<std::size_t>(k) * d_ + j] *
                       x[static_cast<std::size_t>(j)];
            z[static_cast<std::size_t>(k)] = acc;
        }
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double& v : z) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : z) v /= sum;
        return z;
    }

    int c_ = 0, d_ = 0;
    std::vector<double> w_, b_;
};

// k-nearest neighbours with inverse-distance vote weights, k = 5.
class KnnLearner final : public MetaLearnerBase {
public:
    void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
             std::uint64_t) override {
        require_two_classes(y);
        x_ = x;
        y_ = y;
        c_ = num_classes;
    }

    std::vector<double> score(const FeatureRow& x) const override {
        const std::size_t k = std::min<std::size_t>(5, x_.size());
        std::vector<std::pair<double, std::size_t>> dist(x_.size());
        for (std::size_t i = 0; i < x_.size(); ++i) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double d = x[j] - x_[i][j];
                d2 += d * d;
            }
            dist[i] = {d2, i};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(k), dist.end());
        std::vector<double> votes(static_cast<std::size_t>(c_), 0.0);
        for (std::size_t i = 0; i < k; ++i)
            votes[static_cast<std::size_t>(y_[dist[i].second])] +=
                1.0 / (std::sqrt(dist[i].first) + 1e-9);
        const double total = std::accumulate(votes.begin(), votes.end(), 0.0);
        if (total > 0)
            for (double& v : votes) v /= total;
        return votes;
    }

    nlohmann::json save_state() const override {
        return {{"c", c_}, {"x", x_}, {"y", y_}};
    }
    void load_state(const nlohmann::json& j) override {
        c_ = j.at("c").get<int>();
        x_ = j.at("x").get<FeatureRows>();
        y_ = j.at("y").get<std::vector<int>>();
    }

private:
    FeatureRows x_;
    std::vector<int> y_;
    int c_ = 0;
};

// One-vs-rest RBF-kernel SVM trained by projected gradient ascent on the
// dual with box constraint C = 1.
class SvmLearner final : public MetaLearnerBase {
public:
    void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
             std::uint64_t) override {
        require_two_classes(y);
        x_ = x;
        c_ = num_classes;
        const std::size_t n = x.size();
        const std::size_t d = x.front().size();
        // gamma = 1 / (d * mean feature variance), the usual 'scale' rule
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0.0;
            for (const auto& row : x) mean += row[j];
            mean /= static_cast<double>(n);
            double acc = 0.0;
            for (const auto& row : x) acc += (row[j] - mean) * (row[j] - mean);
            var += acc / static_cast<double>(n);
        }
        var /= static_cast<double>(d);
        gamma_ = var > 1e-12 ? 1.0 / (static_cast<double>(d) * var) : 1.0;

        std::vector<double> kernel(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) {
                const double kij = rbf(x[i], x[j]);
                kernel[i * n + j] = kij;
                kernel[j * n + i] = kij;
            }

        alpha_.assign(static_cast<std::size_t>(c_), std::vector<double>(n, 0.0));
        bias_.assign(static_cast<std::size_t>(c_), 0.0);
        signs_.assign(static_cast<std::size_t>(c_), std::vector<double>(n, 0.0));
        const double C = 1.0, eta = 0.1;
        for (int k = 0; k < c_; ++k) {
            auto& a = alpha_[static_cast<std::size_t>(k)];
            auto& s = signs_[static_cast<std::size_t>(k)];
            for (std::size_t i = 0; i < n; ++i) s[i] = y[i] == k ? 1.0 : -1.0;
            std::vector<double> f(n, 0.0);  // f_i = sum_j a_j s_j K_ij
            for (int it = 0; it < 300; ++it) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double grad = 1.0 - s[i] * f[i];
                    const double na = std::clamp(a[i] + eta * grad, 0.0, C);
                    const double delta = na - a[i];
                    if (delta == 0.0) continue;
                    a[i] = na;
                    const double step = delta * s[i];
                    const double* krow = &kernel[i * n];
                    for (std::size_t j = 0; j < n; ++j) f[j] += step * krow[j];
                }
            }
            // bias from margin vectors, falling back to all support vectors
            double bsum = 0.0;
            int bcount = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (a[i] > 1e-8 && a[i] < C - 1e-8) {
                    bsum += s[i] - f[i];
                    ++bcount;
                }
            if (bcount == 0)
                for (std::size_t i = 0; i < n; ++i)
                    if (a[i] > 1e-8) {
                        bsum += s[i] - f[i];
                        ++bcount;
                    }
            bias_[static_cast<std::size_t>(k)] = bcount ? bsum / bcount : 0.0;
        }
    }

    std::vector<double> score(const FeatureRow& x) const override {
        std::vector<double> out(static_cast<std::size_t>(c_), 0.0);
        for (int k = 0; k < c_; ++k) {
            double acc = bias_[static_cast<std::size_t>(k)];
            const auto& a = alpha_[static_cast<std::size_t>(k)];
            const auto& s = signs_[static_cast<std::size_t>(k)];
            for (std::size_t i = 0; i < x_.size(); ++i)
                if (a[i] > 1e-12) acc += a[i] * s[i] * rbf(x_[i], x);
            out[static_cast<std::size_t>(k)] = acc;
        }
        return out;
    }

    nlohmann::json save_state() const override {
        return {{"c", c_},     {"gamma", gamma_}, {"x", x_},
                {"alpha", alpha_}, {"signs", signs_}, {"bias", bias_}};
    }
    void load_state(const nlohmann::json& j) override {
        c_ = j.at("c").get<int>();
        gamma_ = j.at("gamma").get<double>();
        x_ = j.at("x").get<FeatureRows>();
        alpha_ = j.at("alpha").get<std::vector<std::vector<double>>>();
        signs_ = j.at("signs").get<std::vector<std::vector<double>>>();
        bias_ = j.at("bias").get<std::vector<double>>();
    }

private:
    double rbf(const FeatureRow& a, const FeatureRow& b) const {
        double d2 = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) {
            const double d = a[j] - b[j];
            d2 += d * d;
        }
        return std::exp(-gamma_ * d2);
    }

    FeatureRows x_;
    std::vector<std::vector<double>> alpha_, signs_;
    std::vector<double> bias_;
    double gamma_ = 1.0;
    int c_ = 0;
};

class DecisionTreeLearner final : public MetaLearnerBase {
public:
    void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
             std::uint64_t) override {
        require_two_classes(y);
        const std::vector<double> w(x.size(), 1.0);
        tree::ClassificationBuilder builder(x, y, w, num_classes, /*max_depth=*/8);
        tree_ = builder.build(tree::all_indices(x.size()));
    }

    std::vector<double> score(const FeatureRow& x) const override {
        return tree_.predict(x);
    }

    nlohmann::json save_state() const override { return {{"tree", tree::tree_to_json(tree_)}}; }
    void load_state(const nlohmann::json& j) override {
        tree_ = tree::tree_from_json(j.at("tree"));
    }

private:
    tree::Tree tree_;
};

// 100 bootstrapped Gini trees with sqrt(D) features per split, soft vote.
class RandomForestLearner final : public MetaLearnerBase {
public:
    void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
             std::uint64_t seed) override {
        require_two_classes(y);
        c_ = num_classes;
        const std::vector<double> w(x.size(), 1.0);
        const int d = static_cast<int>(x.front().size());
        const int per_split = std::max(1, static_cast<int>(std::lround(std::sqrt(d))));
        Rng rng(derive_seed(seed, "forest"));
        trees_.clear();
        for (int t = 0; t < 100; ++t) {
            std::vector<int> bootstrap(x.size());
            for (auto& i : bootstrap)
                i = static_cast<int>(rng.uniform_int(x.size()));
            tree::ClassificationBuilder builder(x, y, w, num_classes, /*max_depth=*/12,
                                                &rng, per_split);
            trees_.push_back(builder.build(bootstrap));
        }
    }

    std::vector<double> score(const FeatureRow& x) const override {
        std::vector<double> acc(static_cast<std::size_t>(c_), 0.0);
        for (const auto& t : trees_) {
            const auto& p = t.predict(x);
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += p[k];
        }
        for (double& v : acc) v /= static_cast<double>(trees_.size());
        return acc;
    }

    nlohmann::json save_state() const override {
        return {{"c", c_}, {"trees", tree::trees_to_json(trees_)}};
    }
    void load_state(const nlohmann::json& j) override {
        c_ = j.at("c").get<int>();
        trees_ = tree::trees_from_json(j.at("trees"));
    }

private:
    std::vector<tree::Tree> trees_;
    int c_ = 0;
};

// SAMME with depth-2 trees, 100 rounds.
class AdaBoostLearner final : public MetaLearnerBase {
public:
    void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
             std::uint64_t) override {
        require_two_classes(y);
        c_ = num_classes;
        const std::size_t n = x.size();
        std::vector<double> w(n, 1.0 / static_cast<double>(n));
        trees_.clear();
        alphas_.clear();
        for (int round = 0; round < 100; ++round) {
            tree::ClassificationBuilder builder(x, y, w, num_classes, /*max_depth=*/2);
            tree::Tree t = builder.build(tree::all_indices(n));
            double err = 0.0;
            std::vector<int> pred(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto& p = t.predict(x[i]);
                pred[i] =
                    static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
                if (pred[i] != y[i]) err += w[i];
            }
            if (err >= 1.0 - 1.0 / c_) break;  // no better than chance
            err = std::max(err, 1e-10);
            const double alpha = std::log((1.0 - err) / err) + std::log(c_ - 1.0);
            trees_.push_back(std::move(t));
            alphas_.push_back(alpha);
            double wsum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (pred[i] != y[i]) w[i] *= std::exp(alpha);
                wsum += w[i];
            }
            for (double& v : w) v /= wsum;
            if (err <= 1e-10) break;  // perfect weak learner dominates
        }
    }

    std::vector<double> score(const FeatureRow& x) const override {
        std::vector<double> votes(static_cast<std::size_t>(c_), 0.0);
        for (std::size_t t = 0; t < trees_.size(); ++t) {
            const auto& p = trees_[t].predict(x);
            const int k =
                static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
            votes[static_cast<std::size_t>(k)] += alphas_[t];
        }
        const double total = std::accumulate(votes.begin(), votes.end(), 0.0);
        if (total > 0)
            for (double& v : votes) v /= total;
        return votes;
    }

    nlohmann::json save_state() const override {
        return {{"c", c_}, {"alphas", alphas_}, {"trees", tree::trees_to_json(trees_)}};
    }
    void load_state(const nlohmann::json& j) override {
        c_ = j.at("c").get<int>();
        alphas_ = j.at("alphas").get<std::vector<double>>();
        trees_ = tree::trees_from_json(j.at("trees"));
    }

private:
    std::vector<tree::Tree> trees_;
    std::vector<double> alphas_;
    int c_ = 0;
};

// Gradient-boosted trees with second-order (Newton) leaf updates on the
// softmax objective: 100 rounds, depth 3, shrinkage 0.1, lambda 1.
class XgbLearner final : public MetaLearnerBase {
public:
    void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
             std::uint64_t) override {
        require_two_classes(y);
        c_ = num_classes;
        const std::size_t n = x.size();
        std::vector<std::vector<double>> f(n, std::vector<double>(static_cast<std::size_t>(c_), 0.0));
        trees_.assign(static_cast<std::size_t>(c_), {});
        std::vector<double> grad(n), hess(n);
        const auto idx = tree::all_indices(n);
        for (int round = 0; round < 100; ++round) {
            for (int k = 0; k < c_; ++k) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double p = softmax_at(f[i], k);
                    grad[i] = p - (y[i] == k ? 1.0 : 0.0);
                    hess[i] = std::max(p * (1.0 - p), 1e-12);
                }
                tree::RegressionBuilder builder(x, grad, hess, /*max_depth=*/3,
                                                /*lambda=*/1.0);
                tree::Tree t = builder.build(idx);
                for (std::size_t i = 0; i < n; ++i)
                    f[i][static_cast<std::size_t>(k)] += kShrinkage * t.predict(x[i])[0];
                trees_[static_cast<std::size_t>(k)].push_back(std::move(t));
            }
        }
    }

    std::vector<double> score(const FeatureRow& x) const override {
        std::vector<double> f(static_cast<std::size_t>(c_), 0.0);
        for (int k = 0; k < c_; ++k)
            for (const auto& t : trees_[static_cast<std::size_t>(k)])
                f[static_cast<std::size_t>(k)] += kShrinkage * t.predict(x)[0];
        return f;
    }

private:
    static double softmax_at(const std::vector<double>& f, int k) {
        const double mx = *std::max_element(f.begin(), f.end());
        double sum = 0.0;
        for (double v : f) sum += std::exp(v - mx);
        return std::exp(f[static_cast<std::size_t>(k)] - mx) / sum;
    }

    static constexpr double kShrinkage = 0.1;
    std::vector<std::vector<tree::Tree>> trees_;
    int c_ = 0;

public:
    nlohmann::json save_state() const override {
        nlohmann::json per_class = nlohmann::json::array();
        for (const auto& ts : trees_) per_class.push_back(tree::trees_to_json(ts));
        return {{"c", c_}, {"trees", per_class}};
    }
    void load_state(const nlohmann::json& j) override {
        c_ = j.at("c").get<int>();
        trees_.clear();
        for (const auto& ts : j.at("trees")) trees_.push_back(tree::trees_from_json(ts));
    }
};

// One-vs-rest squared-error boosting on one-hot targets, argmax decode.
class GbRegressorLearner final : public MetaLearnerBase {
public:
    void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
             std::uint64_t) override {
        require_two_classes(y);
        c_ = num_classes;
        const std::size_t n = x.size();
        base_.assign(static_cast<std::size_t>(c_), 0.0);
        trees_.assign(static_cast<std::size_t>(c_), {});
        std::vector<double> grad(n);
        const std::vector<double> hess(n, 1.0);
        const auto idx = tree::all_indices(n);
        for (int k = 0; k < c_; ++k) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += (y[i] == k ? 1.0 : 0.0);
            mean /= static_cast<double>(n);
            base_[static_cast<std::size_t>(k)] = mean;
            std::vector<double> f(n, mean);
            for (int round = 0; round < 100; ++round) {
                for (std::size_t i = 0; i < n; ++i)
                    grad[i] = f[i] - (y[i] == k ? 1.0 : 0.0);  // -residual
                tree::RegressionBuilder builder(x, grad, hess, /*max_depth=*/3,
                                                /*lambda=*/0.0);
                tree::Tree t = builder.build(idx);
                for (std::size_t i = 0; i < n; ++i)
                    f[i] += kShrinkage * t.predict(x[i])[0];
                trees_[static_cast<std::size_t>(k)].push_back(std::move(t));
            }
        }
    }

    std::vector<double> score(const FeatureRow& x) const override {
        std::vector<double> f(base_);
        for (int k = 0; k < c_; ++k)
            for (const auto& t : trees_[static_cast<std::size_t>(k)])
                f[static_cast<std::size_t>(k)] += kShrinkage * t.predict(x)[0];
        return f;
    }

private:
    static constexpr double kShrinkage = 0.1;
    std::vector<double> base_;
    std::vector<std::vector<tree::Tree>> trees_;
    int c_ = 0;

public:
    nlohmann::json save_state() const override {
        nlohmann::json per_class = nlohmann::json::array();
        for (const auto& ts : trees_) per_class.push_back(tree::trees_to_json(ts));
        return {{"c", c_}, {"base", base_}, {"trees", per_class}};
    }
    void load_state(const nlohmann::json& j) override {
        c_ = j.at("c").get<int>();
        base_ = j.at("base").get<std::vector<double>>();
        trees_.clear();
        for (const auto& ts : j.at("trees")) trees_.push_back(tree::trees_from_json(ts));
    }
};

// First-order multiclass gradient boosting on the softmax objective.
class GbClassifierLearner final : public MetaLearnerBase {
public:
    void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
             std::uint64_t) override {
        require_two_classes(y);
        c_ = num_classes;
        const std::size_t n = x.size();
        std::vector<std::vector<double>> f(n, std::vector<double>(static_cast<std::size_t>(c_), 0.0));
        trees_.assign(static_cast<std::size_t>(c_), {});
        std::vector<double> grad(n);
        const std::vector<double> hess(n, 1.0);
        const auto idx = tree::all_indices(n);
        for (int round = 0; round < 100; ++round) {
            for (int k = 0; k < c_; ++k) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double p = softmax_at(f[i], k);
                    grad[i] = p - (y[i] == k ? 1.0 : 0.0);
                }
                tree::RegressionBuilder builder(x, grad, hess, /*max_depth=*/3,
                                                /*lambda=*/0.0);
                tree::Tree t = builder.build(idx);
                for (std::size_t i = 0; i < n; ++i)
                    f[i][static_cast<std::size_t>(k)] += kShrinkage * t.predict(x[i])[0];
                trees_[static_cast<std::size_t>(k)].push_back(std::move(t));
            }
        }
    }

    std::vector<double> score(const FeatureRow& x) const override {
        std::vector<double> f(static_cast<std::size_t>(c_), 0.0);
        for (int k = 0; k < c_; ++k)
            for (const auto& t : trees_[static_cast<std::size_t>(k)])
                f[static_cast<std::size_t>(k)] += kShrinkage * t.predict(x)[0];
        return f;
    }

private:
    static double softmax_at(const std::vector<double>& f, int k) {
        const double mx = *std::max_element(f.begin(), f.end());
        double sum = 0.0;
        for (double v : f) sum += std::exp(v - mx);
        return std::exp(f[static_cast<std::size_t>(k)] - mx) / sum;
    }

    static constexpr double kShrinkage = 0.1;
    std::vector<std::vector<tree::Tree>> trees_;
    int c_ = 0;

public:
    nlohmann::json save_state() const override {
        nlohmann::json per_class = nlohmann::json::array();
        for (const auto& ts : trees_) per_class.push_back(tree::trees_to_json(ts));
        return {{"c", c_}, {"trees", per_class}};
    }
    void load_state(const nlohmann::json& j) override {
        c_ = j.at("c").get<int>();
        trees_.clear();
        for (const auto& ts : j.at("trees")) trees_.push_back(tree::trees_from_json(ts));
    }
};

// Per-class per-feature Gaussians with variance smoothing.
class GaussianNbLearner final : public MetaLearnerBase {
public:
    void fit(const FeatureRows& x, const std::vector<int>& y, int num_classes,
             std::uint64_t) override {
        require_two_classes(y);
        c_ = num_classes;
        const std::size_t d = x.front().size();
        mean_.assign(static_cast<std::size_t>(c_), std::vector<double>(d, 0.0));
        var_.assign(static_cast<std::size_t>(c_), std::vector<double>(d, 0.0));
        prior_.assign(static_cast<std::size_t>(c_), 0.0);
        std::vector<std::size_t> count(static_cast<std::size_t>(c_), 0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const auto k = static_cast<std::size_t>(y[i]);
            ++count[k];
            for (std::size_t j = 0; j < d; ++j) mean_[k][j] += x[i][j];
        }
        for (int k = 0; k < c_; ++k) {
            const auto ks = static_cast<std::size_t>(k);
            prior_[ks] = static_cast<double>(count[ks]) / static_cast<double>(x.size());
            if (count[ks] == 0) continue;
            for (std::size_t j = 0; j < d; ++j) mean_[ks][j] /= static_cast<double>(count[ks]);
        }
        double max_var = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const auto k = static_cast<std::size_t>(y[i]);
            for (std::size_t j = 0; j < d; ++j) {
                const double dlt = x[i][j] - mean_[k][j];
                var_[k][j] += dlt * dlt;
            }
        }
        for (int k = 0; k < c_; ++k) {
            const auto ks = static_cast<std::size_t>(k);
            if (count[ks] == 0) continue;
            for (std::size_t j = 0; j < d; ++j) {
                var_[ks][j] /= static_cast<double>(count[ks]);
                max_var = std::max(max_var, var_[ks][j]);
            }
        }
        smoothing_ = std::max(1e-9 * max_var, 1e-12);
    }

    std::vector<double> score(const FeatureRow& x) const override {
        std::vector<double> logp(static_cast<std::size_t>(c_), -1e300);
        for (int k = 0; k < c_; ++k) {
            const auto ks = static_cast<std::size_t>(k);
            if (prior_[ks] <= 0.0) continue;
            double acc = std::log(prior_[ks]);
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double v = var_[ks][j] + smoothing_;
                const double d = x[j] - mean_[ks][j];
                acc += -0.5 * (std::log(2.0 * M_PI * v) + d * d / v);
            }
            logp[ks] = acc;
        }
        return logp;
    }

    nlohmann::json save_state() const override {
        return {{"c", c_},       {"mean", mean_},         {"var", var_},
                {"prior", prior_}, {"smoothing", smoothing_}};
    }
    void load_state(const nlohmann::json& j) override {
        c_ = j.at("c").get<int>();
        mean_ = j.at("mean").get<std::vector<std::vector<double>>>();
        var_ = j.at("var").get<std::vector<std::vector<double>>>();
        prior_ = j.at("prior").get<std::vector<double>>();
        smoothing_ = j.at("smoothing").get<double>();
    }

private:
    std::vector<std::vector<double>> mean_, var_;
    std::vector<double> prior_;
    double smoothing_ = 1e-9;
    int c_ = 0;
};

inline std::unique_ptr<MetaLearnerBase> make_meta_learner(MetaLearnerKind kind) {
    switch (kind) {
        case MetaLearnerKind::logistic_regression:
            return std::make_unique<LogisticRegressionLearner>();
        case MetaLearnerKind::knn: return std::make_unique<KnnLearner>();
        case MetaLearnerKind::svm: return std::make_unique<SvmLearner>();
        case MetaLearnerKind::decision_tree: return std::make_unique<DecisionTreeLearner>();
        case MetaLearnerKind::random_forest: return std::make_unique<RandomForestLearner>();
        case MetaLearnerKind::adaboost: return std::make_unique<AdaBoostLearner>();
        case MetaLearnerKind::xgb_classifier: return std::make_unique<XgbLearner>();
        case MetaLearnerKind::gb_regressor: return std::make_unique<GbRegressorLearner>();
        case MetaLearnerKind::gb_classifier: return std::make_unique<GbClassifierLearner>();
        case MetaLearnerKind::gaussian_nb: return std::make_unique<GaussianNbLearner>();
    }
    throw DataError("unknown meta learner kind");
}

}  // namespace wsiqc::stack
