#pragma once

#include <array>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/core/config.hpp"
#include "wsiqc/core/image.hpp"
#include "wsiqc/core/types.hpp"
#include "wsiqc/nn/blocks.hpp"
#include "wsiqc/nn/optimizer.hpp"
#include "wsiqc/seg/checkpoint.hpp"
#include "wsiqc/seg/model.hpp"

namespace wsiqc::cls {

// The ten pretrained-backbone slots of the transfer-learning grid and
// their native input sides.
struct BackboneSpec {
    std::string name;
    int input_side = 224;
    bool desk_substitute = true;
};

inline const std::array<BackboneSpec, 10>& backbone_table() {
    static const std::array<BackboneSpec, 10> table{{
        {"Xception", 224, true},
        {"VGG16", 224, true},
        {"VGG19", 224, true},
        {"ResNet50", 224, true},
        {"InceptionV3", 224, true},
        {"InceptionResNetV2", 224, true},
        {"MobileNet", 224, true},
        {"MobileNetV2", 224, true},
        {"DenseNet121", 224, true},
        {"NasNetLarge", 331, true},
    }};
    return table;
}

inline BackboneSpec backbone_spec(const std::string& name, bool desk_substitute = true) {
    for (const auto& s : backbone_table()) {
        if (s.name == name) {
            BackboneSpec out = s;
            out.desk_substitute = desk_substitute;
            return out;
        }
    }
    throw DataError("unknown backbone: '" + name + "'");
}

// Provider hook for real pretrained backbone weights (a checkpoint path
// per backbone name). Desk runs never set it.
using BackboneWeightsProvider =
    std::function<std::optional<std::string>(const std::string& backbone_name)>;

inline BackboneWeightsProvider& backbone_weights_provider() {
    static BackboneWeightsProvider provider;
    return provider;
}

// Small convolutional stand-in with the same input/output contract as a
// pretrained backbone: accepts input_side x input_side x 3, emits class
// probabilities. The adaptive pool up front keeps 224 and 331 inputs on
// one topology.
class ClassifierModel {
public:
    BackboneSpec spec;
    int num_classes = kSeverityClasses;
    nn::ParamStore store;

    nn::ConvBnRelu c1, c2, c3;
    nn::Conv2D head;

    ClassifierModel() = default;

    static ClassifierModel build(const BackboneSpec& spec, int num_classes,
                                 std::uint64_t init_seed) {
        ClassifierModel m;
        m.spec = spec;
        m.num_classes = num_classes;
        Rng rng(init_seed);
        m.c1 = nn::ConvBnRelu(m.store, "feat/c1", 3, 3, 8, rng);
        m.c2 = nn::ConvBnRelu(m.store, "feat/c2", 3, 8, 16, rng);
        m.c3 = nn::ConvBnRelu(m.store, "feat/c3", 3, 16, 32, rng);
        m.head = nn::Conv2D(m.store, "head", 1, 1, 32, num_classes, rng);
        return m;
    }

    nn::Var forward(nn::Tape& tape, const nn::Var& input, bool training) {
        const auto& t = input.value();
        if (t.h != spec.input_side || t.w != spec.input_side || t.c != 3)
            throw DataError("classifier " + spec.name + " expects " +
                            std::to_string(spec.input_side) + "x" +
                            std::to_string(spec.input_side) + "x3 input, got " +
                            t.shape_str());
        nn::Var h = nn::adaptive_avg_pool(tape, input, 32, 32);
        h = c1(tape, h, training);
        h = nn::maxpool2(tape, h);
        h = c2(tape, h, training);
        h = nn::maxpool2(tape, h);
        h = c3(tape, h, training);
        h = nn::global_avg_pool(tape, h);
        return nn::softmax_c(tape, head(tape, h));
    }

    // Freezes the feature extractor, leaving only the head trainable
    // (classic transfer learning). fine_tune_all re-enables everything.
    void set_freeze_backbone(bool freeze) {
        for (auto& p : store.params()) {
            if (!p.trainable) continue;
            if (p.name.rfind("feat/", 0) == 0) p.node->needs_grad = !freeze;
        }
    }

    std::string combination_id() const { return spec.name; }
};

inline ClassifierModel build_classifier(const BackboneSpec& spec,
                                        int num_classes = kSeverityClasses,
                                        std::uint64_t init_seed = 0xc1a55) {
    if (!spec.desk_substitute) {
        const auto& provider = backbone_weights_provider();
        if (!provider)
            throw DataError("backbone '" + spec.name +
                            "': pretrained weights requested but no provider registered; "
                            "desk runs use desk_substitute=true");
        const auto path = provider(spec.name);
        if (!path)
            throw DataError("backbone '" + spec.name +
                            "': the registered provider has no weights for it");
        ClassifierModel m = ClassifierModel::build(spec, num_classes, init_seed);
        std::ifstream in(*path, std::ios::binary);
        if (!in) throw DataError("cannot open backbone weights: " + *path);
        const auto header = nn::read_checkpoint_header(in, *path);
        nn::read_checkpoint_params(in, *path, header, m.store);
        return m;
    }
    return ClassifierModel::build(spec, num_classes, init_seed);
}

inline void save_classifier(const ClassifierModel& model, const std::string& path) {
    nlohmann::json header;
    header["kind"] = "classifier";
    header["backbone"] = model.spec.name;
    header["input_side"] = model.spec.input_side;
    header["desk_substitute"] = model.spec.desk_substitute;
    header["num_classes"] = model.num_classes;
    nn::write_checkpoint(path, header, model.store);
}

inline ClassifierModel load_classifier(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    const auto header = nn::read_checkpoint_header(in, path);
    if (header.value("kind", "") != "classifier")
        throw DataError("checkpoint " + path + " is not a classifier archive");
    BackboneSpec spec = backbone_spec(header.at("backbone").get<std::string>());
    spec.desk_substitute = header.value("desk_substitute", true);
    ClassifierModel m = ClassifierModel::build(spec, header.at("num_classes").get<int>(),
                                               /*init_seed=*/0);
    nn::read_checkpoint_params(in, path, header, m.store);
    return m;
}

// ---- data + training --------------------------------------------------------

struct LabeledImage {
    ImageBuffer image;
    int label = 0;
    std::string id;
};

inline ImageBuffer sized_for(const ImageBuffer& img, int side) {
    if (img.h == side && img.w == side) return img;
    return resize_bilinear(img, side, side);
}

inline std::vector<std::array<double, 3>> predict_probs(
    ClassifierModel& model, const std::vector<const LabeledImage*>& samples) {
    std::vector<std::array<double, 3>> out;
    const int side = model.spec.input_side;
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < samples.size(); start += kChunk) {
        const std::size_t end = std::min(samples.size(), start + kChunk);
        std::vector<ImageBuffer> resized;
        for (std::size_t i = start; i < end; ++i)
            resized.push_back(sized_for(samples[i]->image, side));
        std::vector<const ImageBuffer*> ptrs;
        for (const auto& r : resized) ptrs.push_back(&r);
        nn::Tape tape(false);
        const auto probs =
            model.forward(tape, nn::make_leaf(seg::tensor_from_images(ptrs)), false);
        for (std::size_t i = 0; i < end - start; ++i) {
            std::array<double, 3> row{};
            for (int k = 0; k < model.num_classes && k < 3; ++k)
                row[static_cast<std::size_t>(k)] =
                    probs.value().at(static_cast<int>(i), 0, 0, k);
            out.push_back(row);
        }
    }
    return out;
}

struct ClassifierTrainResult {
    double final_loss = 0.0;  // on the held-out split used as validation
};

inline nn::Var classification_loss(nn::Tape& tape, const nn::Var& probs,
                                   const std::vector<int>& labels, Loss kind) {
    switch (kind) {
        case Loss::categorical_cross_entropy: return nn::cce_loss_op(tape, probs, labels);
        case Loss::kl_divergence: return nn::kld_loss_op(tape, probs, labels);
        default:
            throw UsageError(std::string("loss '") + to_string(kind) +
                             "' is not a classification loss");
    }
}

// Shared-hyperparameter training loop for one grid combination.
inline ClassifierTrainResult train_classifier(ClassifierModel& model,
                                              const std::vector<LabeledImage>& train,
                                              const std::vector<LabeledImage>& valid,
                                              Optimizer optimizer_kind, Loss loss_kind,
                                              int epochs, int batch_size, double lr,
                                              std::uint64_t seed,
                                              bool freeze_backbone = true) {
    if (train.empty()) throw DataError("train_classifier: empty training set");
    model.set_freeze_backbone(freeze_backbone);
    nn::GradientOptimizer opt(optimizer_kind);
    Rng shuffle_rng(derive_seed(seed, "cls_shuffle"));
    const int side = model.spec.input_side;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(batch_size));
            std::vector<ImageBuffer> resized;
            std::vector<const ImageBuffer*> ptrs;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                resized.push_back(sized_for(train[order[i]].image, side));
                labels.push_back(train[order[i]].label);
            }
            for (auto& r : resized) ptrs.push_back(&r);

            nn::Tape tape;
            nn::Var probs =
                model.forward(tape, nn::make_leaf(seg::tensor_from_images(ptrs)), true);
            nn::Var loss = classification_loss(tape, probs, labels, loss_kind);
            if (!std::isfinite(loss.value().v[0]))
                throw DivergenceError("classifier training diverged at epoch " +
                                      std::to_string(epoch));
            model.store.zero_grad();
            tape.backward(loss);
            opt.step(model.store.params(), lr);
        }
    }

    ClassifierTrainResult result;
    if (!valid.empty()) {
        double acc = 0.0, weight = 0.0;
        for (std::size_t start = 0; start < valid.size(); start += 32) {
            const std::size_t end = std::min(valid.size(), start + 32);
            std::vector<ImageBuffer> resized;
            std::vector<const ImageBuffer*> ptrs;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                resized.push_back(sized_for(valid[i].image, side));
                labels.push_back(valid[i].label);
            }
            for (auto& r : resized) ptrs.push_back(&r);
            nn::Tape tape(false);
            nn::Var probs =
                model.forward(tape, nn::make_leaf(seg::tensor_from_images(ptrs)), false);
            acc += classification_loss(tape, probs, labels, loss_kind).value().v[0] *
                   static_cast<double>(end - start);
            weight += static_cast<double>(end - start);
        }
        result.final_loss = acc / weight;
    }
    return result;
}

}  // namespace wsiqc::cls
