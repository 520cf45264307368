#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <vector>

#include "wsiqc/core/config.hpp"
#include "wsiqc/nn/layers.hpp"

namespace wsiqc::nn {

// The four update rules the training protocol compares. Slot layout
// follows the Keras conventions (rmsprop rho 0.9, adam beta 0.9/0.999,
// adamax infinity norm), epsilon 1e-7.
class GradientOptimizer {
public:
    explicit GradientOptimizer(Optimizer kind) : kind_(kind) {}

    void step(std::vector<Param>& params, double lr) {
        ++t_;
        if (slots_m_.empty()) {
            slots_m_.resize(params.size());
            slots_v_.resize(params.size());
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param& p = params[i];
            if (!p.trainable || p.node->grad.v.empty()) continue;
            auto& val = p.node->value.v;
            auto& grad = p.node->grad.v;
            auto& m = slots_m_[i];
            auto& v = slots_v_[i];
            if (kind_ != Optimizer::sgd && m.size() != val.size()) {
                m.assign(val.size(), 0.0);
                v.assign(val.size(), 0.0);
            }
            switch (kind_) {
                case Optimizer::sgd:
                    for (std::size_t j = 0; j < val.size(); ++j) val[j] -= lr * grad[j];
                    break;
                case Optimizer::rmsprop:
                    for (std::size_t j = 0; j < val.size(); ++j) {
                        v[j] = kRho * v[j] + (1.0 - kRho) * grad[j] * grad[j];
                        val[j] -= lr * grad[j] / (std::sqrt(v[j]) + kEps);
                    }
                    break;
                case Optimizer::adam: {
                    const double bc1 = 1.0 - std::pow(kBeta1, t_);
                    const double bc2 = 1.0 - std::pow(kBeta2, t_);
                    const double lr_t = lr * std::sqrt(bc2) / bc1;
                    for (std::size_t j = 0; j < val.size(); ++j) {
                        m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * grad[j];
                        v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * grad[j] * grad[j];
                        val[j] -= lr_t * m[j] / (std::sqrt(v[j]) + kEps);
                    }
                    break;
                }
                case Optimizer::adamax: {
                    const double bc1 = 1.0 - std::pow(kBeta1, t_);
                    for (std::size_t j = 0; j < val.size(); ++j) {
                        m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * grad[j];
                        v[j] = std::max(kBeta2 * v[j], std::abs(grad[j]));
                        val[j] -= (lr / bc1) * m[j] / (v[j] + kEps);
                    }
                    break;
                }
            }
        }
    }

private:
    static constexpr double kRho = 0.9;
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-7;

    Optimizer kind_;
    long t_ = 0;
    std::vector<std::vector<double>> slots_m_;
    std::vector<std::vector<double>> slots_v_;
};

}  // namespace wsiqc::nn
