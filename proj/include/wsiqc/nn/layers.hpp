#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "wsiqc/common/rng.hpp"
#include "wsiqc/nn/graph.hpp"
#include "wsiqc/nn/ops.hpp"

namespace wsiqc::nn {

struct Param {
    std::string name;
    NodePtr node;
    bool trainable = true;  // false: batch-norm running stats etc.
};

// Flat named-parameter registry; checkpointing walks it in order.
class ParamStore {
public:
    NodePtr add(const std::string& name, Tensor init, bool trainable = true) {
        auto n = std::make_shared<Node>();
        n->value = std::move(init);
        n->needs_grad = trainable;
        params_.push_back(Param{name, n, trainable});
        return n;
    }

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }

    std::size_t total_size() const {
        std::size_t s = 0;
        for (const auto& p : params_) s += p.node->value.size();
        return s;
    }

    std::size_t trainable_size() const {
        std::size_t s = 0;
        for (const auto& p : params_)
            if (p.trainable) s += p.node->value.size();
        return s;
    }

    void zero_grad() {
        for (auto& p : params_) p.node->zero_grad();
    }

    void set_trainable(bool trainable) {
        for (auto& p : params_)
            if (p.trainable) p.node->needs_grad = trainable;
    }

    const Param* find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

private:
    std::vector<Param> params_;
};

inline Tensor he_normal_init(int kh, int kw, int cin, int cout, Rng& rng) {
    Tensor t(kh, kw, cin, cout);
    const double stddev = std::sqrt(2.0 / (static_cast<double>(kh) * kw * cin));
    for (double& v : t.v) v = rng.normal(0.0, stddev);
    return t;
}

struct Conv2D {
    NodePtr w, b;
    int stride = 1;
    int dilation = 1;

    Conv2D() = default;
    Conv2D(ParamStore& store, const std::string& name, int kh, int kw, int cin, int cout,
           Rng& rng, int stride_ = 1, int dilation_ = 1)
        : stride(stride_), dilation(dilation_) {
        w = store.add(name + "/W", he_normal_init(kh, kw, cin, cout, rng));
        b = store.add(name + "/b", Tensor(1, 1, 1, cout, 0.0));
    }

    Var operator()(Tape& tape, const Var& x) const {
        return conv2d(tape, x, Var(w), Var(b), stride, dilation);
    }
};

struct BatchNorm2D {
    NodePtr gamma, beta;
    NodePtr running_mean, running_var;  // non-trainable, serialized
    double momentum = 0.9;
    double eps = 1e-5;

    BatchNorm2D() = default;
    BatchNorm2D(ParamStore& store, const std::string& name, int c) {
        gamma = store.add(name + "/gamma", Tensor(1, 1, 1, c, 1.0));
        beta = store.add(name + "/beta", Tensor(1, 1, 1, c, 0.0));
        running_mean = store.add(name + "/running_mean", Tensor(1, 1, 1, c, 0.0), false);
        running_var = store.add(name + "/running_var", Tensor(1, 1, 1, c, 1.0), false);
    }

    Var operator()(Tape& tape, const Var& x, bool training) const {
        return batch_norm(tape, x, Var(gamma), Var(beta), running_mean->value,
                          running_var->value, training, momentum, eps);
    }
};

// conv -> BN -> ReLU
struct ConvBnRelu {
    Conv2D conv;
    BatchNorm2D bn;

    ConvBnRelu() = default;
    ConvBnRelu(ParamStore& store, const std::string& name, int k, int cin, int cout,
               Rng& rng, int stride = 1, int dilation = 1)
        : conv(store, name + "/conv", k, k, cin, cout, rng, stride, dilation),
          bn(store, name + "/bn", cout) {}

    Var operator()(Tape& tape, const Var& x, bool training) const {
        return relu(tape, bn(tape, conv(tape, x), training));
    }
};

}  // namespace wsiqc::nn
