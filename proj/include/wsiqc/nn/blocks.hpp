#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "wsiqc/nn/layers.hpp"

namespace wsiqc::nn {

// Pre-activation residual block:
//   branch: [BN-ReLU-]Conv3x3(stride) - BN-ReLU - Conv3x3
//   shortcut: identity when shapes allow, else 1x1 projection (no norm)
// Zeroing the branch's final conv makes the block an exact shortcut.
struct ResidualBlock {
    bool preact = true;
    BatchNorm2D bn1, bn2;
    Conv2D conv1, conv2;
    bool project = false;
    Conv2D shortcut;

    ResidualBlock() = default;
    ResidualBlock(ParamStore& store, const std::string& name, int cin, int cout, Rng& rng,
                  int stride = 1, bool preact_ = true)
        : preact(preact_) {
        if (preact) bn1 = BatchNorm2D(store, name + "/bn1", cin);
        conv1 = Conv2D(store, name + "/conv1", 3, 3, cin, cout, rng, stride);
        bn2 = BatchNorm2D(store, name + "/bn2", cout);
        conv2 = Conv2D(store, name + "/conv2", 3, 3, cout, cout, rng);
        project = (cin != cout) || (stride != 1);
        if (project)
            shortcut = Conv2D(store, name + "/shortcut", 1, 1, cin, cout, rng, stride);
    }

    Var operator()(Tape& tape, const Var& x, bool training) const {
        Var h = x;
        if (preact) h = relu(tape, bn1(tape, h, training));
        h = conv1(tape, h);
        h = relu(tape, bn2(tape, h, training));
        h = conv2(tape, h);
        const Var s = project ? shortcut(tape, x) : x;
        return add(tape, h, s);
    }

    // test hook: makes the residual branch identically zero
    void zero_branch_output() {
        std::fill(conv2.w->value.v.begin(), conv2.w->value.v.end(), 0.0);
        std::fill(conv2.b->value.v.begin(), conv2.b->value.v.end(), 0.0);
    }
};

// Channel attention: GAP -> 1x1 bottleneck -> 1x1 expand -> sigmoid scale.
struct SqueezeExcite {
    Conv2D reduce, expand;

    SqueezeExcite() = default;
    SqueezeExcite(ParamStore& store, const std::string& name, int c, Rng& rng,
                  int reduction = 8) {
        const int mid = std::max(1, c / reduction);
        reduce = Conv2D(store, name + "/reduce", 1, 1, c, mid, rng);
        expand = Conv2D(store, name + "/expand", 1, 1, mid, c, rng);
    }

    Var operator()(Tape& tape, const Var& x) const {
        Var s = global_avg_pool(tape, x);
        s = relu(tape, reduce(tape, s));
        s = sigmoid(tape, expand(tape, s));
        return mul_chan(tape, x, s);
    }
};

// Atrous spatial pyramid: parallel dilated 3x3 branches summed, then 1x1.
struct Aspp {
    std::vector<Conv2D> branches;
    std::vector<BatchNorm2D> norms;
    Conv2D out;

    Aspp() = default;
    Aspp(ParamStore& store, const std::string& name, int cin, int cout, Rng& rng,
         std::vector<int> rates = {1, 6, 12, 18}) {
        for (std::size_t i = 0; i < rates.size(); ++i) {
            branches.emplace_back(store, name + "/br" + std::to_string(i), 3, 3, cin, cout,
                                  rng, 1, rates[i]);
            norms.emplace_back(store, name + "/bn" + std::to_string(i), cout);
        }
        out = Conv2D(store, name + "/out", 1, 1, cout, cout, rng);
    }

    Var operator()(Tape& tape, const Var& x, bool training) const {
        Var acc;
        for (std::size_t i = 0; i < branches.size(); ++i) {
            Var b = norms[i](tape, branches[i](tape, x), training);
            acc = i == 0 ? b : add(tape, acc, b);
        }
        return out(tape, acc);
    }
};

// Additive attention gate: the coarse decoder feature g gates the skip x.
// g is upsampled to the skip resolution first.
struct AttentionGate {
    Conv2D wg, wx, psi;

    AttentionGate() = default;
    AttentionGate(ParamStore& store, const std::string& name, int cg, int cx, Rng& rng) {
        const int mid = std::max(1, cx / 2);
        wg = Conv2D(store, name + "/wg", 1, 1, cg, mid, rng);
        wx = Conv2D(store, name + "/wx", 1, 1, cx, mid, rng);
        psi = Conv2D(store, name + "/psi", 1, 1, mid, 1, rng);
    }

    Var operator()(Tape& tape, const Var& g, const Var& x) const {
        Var g_up = upsample2(tape, g);
        Var a = relu(tape, add(tape, wg(tape, g_up), wx(tape, x)));
        Var gate = sigmoid(tape, psi(tape, a));
        return mul_map(tape, x, gate);
    }
};

// Stack of conv(+optional BN)+ReLU layers; the VGG-style encoder unit.
struct ConvStack {
    std::vector<Conv2D> convs;
    std::vector<BatchNorm2D> norms;
    bool use_bn = false;

    ConvStack() = default;
    ConvStack(ParamStore& store, const std::string& name, int count, int cin, int cout,
              Rng& rng, bool use_bn_)
        : use_bn(use_bn_) {
        for (int i = 0; i < count; ++i) {
            convs.emplace_back(store, name + "/c" + std::to_string(i), 3, 3,
                               i == 0 ? cin : cout, cout, rng);
            if (use_bn) norms.emplace_back(store, name + "/n" + std::to_string(i), cout);
        }
    }

    Var operator()(Tape& tape, const Var& x, bool training) const {
        Var h = x;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            h = convs[i](tape, h);
            if (use_bn) h = norms[i](tape, h, training);
            h = relu(tape, h);
        }
        return h;
    }
};

}  // namespace wsiqc::nn
