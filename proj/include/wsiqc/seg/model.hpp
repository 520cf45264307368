#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/common/rng.hpp"
#include "wsiqc/core/config.hpp"
#include "wsiqc/core/image.hpp"
#include "wsiqc/nn/blocks.hpp"

namespace wsiqc::seg {

inline int scaled_width(int base, double scale) {
    return std::max(1, static_cast<int>(std::lround(base * scale)));
}

struct SegNet {
    virtual ~SegNet() = default;
    // One or two sigmoid maps; the last entry is the scoring output.
    virtual std::vector<nn::Var> forward(nn::Tape& tape, const nn::Var& input,
                                         bool training) = 0;
    // DoubleUNet exposes the gated network-2 input for inspection.
    virtual const nn::Tensor* gated_input() const { return nullptr; }
};

// A built segmenter: architecture metadata, the parameter store, and the
// network graph builder. Trained models are immutable unless a trainer
// steps their parameters.
class SegModel {
public:
    Architecture architecture = Architecture::unet_baseline;
    int input_h = 0, input_w = 0;
    double width_scale = 1.0;
    nn::ParamStore store;
    std::unique_ptr<SegNet> net;

    std::vector<nn::Var> forward(nn::Tape& tape, const nn::Var& input, bool training) {
        const auto& t = input.value();
        if (t.h != input_h || t.w != input_w || t.c != 3)
            throw DataError("segmenter " + std::string(to_string(architecture)) +
                            " expects " + std::to_string(input_h) + "x" +
                            std::to_string(input_w) + "x3 input, got " + t.shape_str());
        return net->forward(tape, input, training);
    }

    std::size_t parameter_count() const { return store.trainable_size(); }

    std::uint64_t fingerprint() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : store.params()) {
            h ^= fnv1a64(p.name);
            h *= 0x100000001b3ULL;
            for (double v : p.node->value.v) {
                std::uint64_t bits;
                static_assert(sizeof(bits) == sizeof(v));
                std::memcpy(&bits, &v, sizeof(bits));
                h ^= bits;
                h *= 0x100000001b3ULL;
            }
        }
        return h;
    }
};

inline nn::Tensor tensor_from_images(const std::vector<const ImageBuffer*>& images) {
    if (images.empty()) throw DataError("tensor_from_images: empty batch");
    const ImageBuffer& first = *images.front();
    nn::Tensor t(static_cast<int>(images.size()), first.h, first.w, first.c);
    std::size_t offset = 0;
    for (const ImageBuffer* img : images) {
        if (img->h != first.h || img->w != first.w || img->c != first.c)
            throw DataError("tensor_from_images: ragged batch");
        std::copy(img->v.begin(), img->v.end(), t.v.begin() + offset);
        offset += img->v.size();
    }
    return t;
}

inline ImageBuffer image_from_tensor_slice(const nn::Tensor& t, int n) {
    ImageBuffer out(t.h, t.w, t.c);
    const std::size_t sz = out.v.size();
    std::copy_n(t.v.begin() + static_cast<std::size_t>(n) * sz, sz, out.v.begin());
    return out;
}

}  // namespace wsiqc::seg
