#pragma once

#include <memory>
#include <string>
#include <vector>

#include "wsiqc/seg/model.hpp"

namespace wsiqc::seg {

using nn::Conv2D;
using nn::ConvStack;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

namespace detail {

// VGG19 convolutional topology: 2-2-4-4-4 convs at 64/128/256/512/512.
constexpr int kVggCounts[5] = {2, 2, 4, 4, 4};
constexpr int kVggWidths[5] = {64, 128, 256, 512, 512};

struct Encoder {
    std::vector<ConvStack> blocks;

    // Returns pre-pool activations; `bottom` receives the pooled deepest map.
    std::vector<Var> run(Tape& tape, const Var& input, bool training, Var& bottom) const {
        std::vector<Var> skips;
        Var h = input;
        for (const auto& block : blocks) {
            h = block(tape, h, training);
            skips.push_back(h);
            h = nn::maxpool2(tape, h);
        }
        bottom = h;
        return skips;
    }
};

struct DecoderStage {
    ConvStack convs;
};

}  // namespace detail

// DoubleUNet: network 1 is a VGG19-topology encoder/decoder producing
// out1; the input is then gated (elementwise product with out1, broadcast
// over channels) and fed to network 2, whose decoder sees skip
// connections from both encoders. out2 is the refined prediction.
class DoubleUNetNet final : public SegNet {
public:
    DoubleUNetNet(ParamStore& store, double scale, Rng& rng) {
        auto w = [&](int base) { return scaled_width(base, scale); };
        // encoder 1: VGG19 layout, conv+relu only
        for (int i = 0; i < 5; ++i)
            enc1_.blocks.emplace_back(store, "net1/enc/b" + std::to_string(i),
                                      detail::kVggCounts[i],
                                      i == 0 ? 3 : w(detail::kVggWidths[i - 1]),
                                      w(detail::kVggWidths[i]), rng, /*use_bn=*/false);
        // decoder 1: widths mirror the skip widths
        int cin = w(detail::kVggWidths[4]);
        for (int i = 4; i >= 0; --i) {
            const int cskip = w(detail::kVggWidths[i]);
            dec1_.emplace_back(store, "net1/dec/b" + std::to_string(i), 2, cin + cskip,
                               cskip, rng, /*use_bn=*/true);
            cin = cskip;
        }
        out1_ = Conv2D(store, "net1/out", 1, 1, cin, 1, rng);

        // encoder 2: plain conv-bn-relu stacks
        for (int i = 0; i < 5; ++i)
            enc2_.blocks.emplace_back(store, "net2/enc/b" + std::to_string(i), 2,
                                      i == 0 ? 3 : w(detail::kVggWidths[i - 1]),
                                      w(detail::kVggWidths[i]), rng, /*use_bn=*/true);
        // decoder 2: concatenates the matching skip from both encoders
        cin = w(detail::kVggWidths[4]);
        for (int i = 4; i >= 0; --i) {
            const int cskip = w(detail::kVggWidths[i]);
            dec2_.emplace_back(store, "net2/dec/b" + std::to_string(i), 2, cin + 2 * cskip,
                               cskip, rng, /*use_bn=*/true);
            cin = cskip;
        }
        out2_ = Conv2D(store, "net2/out", 1, 1, cin, 1, rng);
    }

    std::vector<Var> forward(Tape& tape, const Var& input, bool training) override {
        Var bottom1;
        const auto skips1 = enc1_.run(tape, input, training, bottom1);
        Var h = bottom1;
        for (std::size_t i = 0; i < dec1_.size(); ++i) {
            h = nn::upsample2(tape, h);
            h = nn::concat_c(tape, h, skips1[skips1.size() - 1 - i]);
            h = dec1_[i](tape, h, training);
        }
        Var o1 = nn::sigmoid(tape, out1_(tape, h));

        Var gated = nn::mul_map(tape, input, o1);
        gated_input_ = gated.value();

        Var bottom2;
        const auto skips2 = enc2_.run(tape, gated, training, bottom2);
        h = bottom2;
        for (std::size_t i = 0; i < dec2_.size(); ++i) {
            h = nn::upsample2(tape, h);
            h = nn::concat_c(tape, h, skips1[skips1.size() - 1 - i]);
            h = nn::concat_c(tape, h, skips2[skips2.size() - 1 - i]);
            h = dec2_[i](tape, h, training);
        }
        Var o2 = nn::sigmoid(tape, out2_(tape, h));
        return {o1, o2};
    }

    const nn::Tensor* gated_input() const override { return &gated_input_; }

private:
    detail::Encoder enc1_, enc2_;
    std::vector<ConvStack> dec1_, dec2_;
    Conv2D out1_, out2_;
    nn::Tensor gated_input_;
};

// ResUNet++: stem + four stride-2 residual encoder blocks with
// squeeze-excitation, an ASPP bridge, attention-gated residual decoder
// stages, and a final ASPP before the sigmoid head. Each extra block can
// be disabled to fall back to a plain residual UNet.
struct ResUnetPPOptions {
    bool use_se = true;
    bool use_aspp = true;
    bool use_attention = true;
};

class ResUnetPPNet final : public SegNet {
public:
    ResUnetPPNet(ParamStore& store, double scale, Rng& rng, ResUnetPPOptions opts = {})
        : opts_(opts) {
        auto w = [&](int base) { return scaled_width(base, scale); };
        const int widths[5] = {w(16), w(32), w(64), w(128), w(256)};

        stem_ = nn::ResidualBlock(store, "stem", 3, widths[0], rng, 1, /*preact=*/false);
        for (int i = 0; i < 4; ++i) {
            if (opts_.use_se)
                se_.emplace_back(store, "se" + std::to_string(i), widths[i], rng);
            enc_.emplace_back(store, "enc" + std::to_string(i), widths[i], widths[i + 1],
                              rng, /*stride=*/2);
        }
        if (opts_.use_aspp) bridge_ = nn::Aspp(store, "bridge", widths[4], widths[4], rng);
        else bridge_plain_ = nn::ConvBnRelu(store, "bridge", 3, widths[4], widths[4], rng);

        int cin = widths[4];
        for (int i = 3; i >= 0; --i) {
            if (opts_.use_attention)
                attn_.emplace_back(store, "attn" + std::to_string(i), cin, widths[i], rng);
            dec_.emplace_back(store, "dec" + std::to_string(i), cin + widths[i], widths[i],
                              rng);
            cin = widths[i];
        }
        if (opts_.use_aspp) out_aspp_ = nn::Aspp(store, "out_aspp", cin, cin, rng);
        head_ = Conv2D(store, "head", 1, 1, cin, 1, rng);
    }

    std::vector<Var> forward(Tape& tape, const Var& input, bool training) override {
        std::vector<Var> skips;
        Var h = stem_(tape, input, training);
        for (int i = 0; i < 4; ++i) {
            if (opts_.use_se) h = se_[static_cast<std::size_t>(i)](tape, h);
            skips.push_back(h);
            h = enc_[static_cast<std::size_t>(i)](tape, h, training);
        }
        h = opts_.use_aspp ? bridge_(tape, h, training) : bridge_plain_(tape, h, training);
        for (std::size_t i = 0; i < dec_.size(); ++i) {
            const Var& skip = skips[skips.size() - 1 - i];
            const Var gated = opts_.use_attention ? attn_[i](tape, h, skip) : skip;
            h = nn::upsample2(tape, h);
            h = nn::concat_c(tape, h, gated);
            h = dec_[i](tape, h, training);
        }
        if (opts_.use_aspp) h = out_aspp_(tape, h, training);
        return {nn::sigmoid(tape, head_(tape, h))};
    }

private:
    ResUnetPPOptions opts_;
    nn::ResidualBlock stem_;
    std::vector<nn::SqueezeExcite> se_;
    std::vector<nn::ResidualBlock> enc_;
    nn::Aspp bridge_, out_aspp_;
    nn::ConvBnRelu bridge_plain_;
    std::vector<nn::AttentionGate> attn_;
    std::vector<nn::ResidualBlock> dec_;
    Conv2D head_;
};

// Minimal plain UNet kept as the reference baseline.
class UnetBaselineNet final : public SegNet {
public:
    UnetBaselineNet(ParamStore& store, double scale, Rng& rng) {
        auto w = [&](int base) { return scaled_width(base, scale); };
        const int widths[4] = {w(32), w(64), w(128), w(256)};
        for (int i = 0; i < 4; ++i)
            enc_.blocks.emplace_back(store, "enc/b" + std::to_string(i), 2,
                                     i == 0 ? 3 : widths[i - 1], widths[i], rng, true);
        bridge_ = ConvStack(store, "bridge", 2, widths[3], widths[3], rng, true);
        int cin = widths[3];
        for (int i = 3; i >= 0; --i) {
            dec_.emplace_back(store, "dec/b" + std::to_string(i), 2, cin + widths[i],
                              widths[i], rng, true);
            cin = widths[i];
        }
        head_ = Conv2D(store, "head", 1, 1, cin, 1, rng);
    }

    std::vector<Var> forward(Tape& tape, const Var& input, bool training) override {
        Var bottom;
        const auto skips = enc_.run(tape, input, training, bottom);
        Var h = bridge_(tape, bottom, training);
        for (std::size_t i = 0; i < dec_.size(); ++i) {
            h = nn::upsample2(tape, h);
            h = nn::concat_c(tape, h, skips[skips.size() - 1 - i]);
            h = dec_[i](tape, h, training);
        }
        return {nn::sigmoid(tape, head_(tape, h))};
    }

private:
    detail::Encoder enc_;
    ConvStack bridge_;
    std::vector<ConvStack> dec_;
    Conv2D head_;
};

inline SegModel build_double_unet(int input_h, int input_w, double width_scale,
                                  std::uint64_t init_seed = 0x5eed) {
    if (input_h % 32 || input_w % 32 || input_h <= 0 || input_w <= 0)
        throw DataError("double_unet: input sides must be positive multiples of 32, got " +
                        std::to_string(input_h) + "x" + std::to_string(input_w));
    SegModel m;
    m.architecture = Architecture::double_unet;
    m.input_h = input_h;
    m.input_w = input_w;
    m.width_scale = width_scale;
    Rng rng(init_seed);
    m.net = std::make_unique<DoubleUNetNet>(m.store, width_scale, rng);
    return m;
}

inline SegModel build_resunet_pp(int input_h, int input_w, double width_scale,
                                 std::uint64_t init_seed = 0x5eed,
                                 ResUnetPPOptions opts = {}) {
    if (input_h % 16 || input_w % 16 || input_h <= 0 || input_w <= 0)
        throw DataError("resunet_pp: input sides must be positive multiples of 16, got " +
                        std::to_string(input_h) + "x" + std::to_string(input_w));
    SegModel m;
    m.architecture = Architecture::resunet_pp;
    m.input_h = input_h;
    m.input_w = input_w;
    m.width_scale = width_scale;
    Rng rng(init_seed);
    m.net = std::make_unique<ResUnetPPNet>(m.store, width_scale, rng, opts);
    return m;
}

inline SegModel build_unet_baseline(int input_h, int input_w, double width_scale,
                                    std::uint64_t init_seed = 0x5eed) {
    if (input_h % 16 || input_w % 16 || input_h <= 0 || input_w <= 0)
        throw DataError("unet_baseline: input sides must be positive multiples of 16, got " +
                        std::to_string(input_h) + "x" + std::to_string(input_w));
    SegModel m;
    m.architecture = Architecture::unet_baseline;
    m.input_h = input_h;
    m.input_w = input_w;
    m.width_scale = width_scale;
    Rng rng(init_seed);
    m.net = std::make_unique<UnetBaselineNet>(m.store, width_scale, rng);
    return m;
}

inline SegModel build_segmenter(Architecture arch, int input_h, int input_w,
                                double width_scale, std::uint64_t init_seed = 0x5eed) {
    switch (arch) {
        case Architecture::double_unet:
            return build_double_unet(input_h, input_w, width_scale, init_seed);
        case Architecture::resunet_pp:
            return build_resunet_pp(input_h, input_w, width_scale, init_seed);
        case Architecture::unet_baseline:
            return build_unet_baseline(input_h, input_w, width_scale, init_seed);
    }
    throw DataError("unknown architecture");
}

}  // namespace wsiqc::seg
