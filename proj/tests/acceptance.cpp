// Acceptance suite: one self-contained check per criterion, each printing
// a [PASS]/[FAIL] line with its runtime. Exit code = number of failures.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsiqc/cls/grid.hpp"
#include "wsiqc/data/split.hpp"
#include "wsiqc/data/synthetic.hpp"
#include "wsiqc/io/image_io.hpp"
#include "wsiqc/metrics/roc.hpp"
#include "wsiqc/metrics/segmentation.hpp"
#include "wsiqc/nn/schedule.hpp"
#include "wsiqc/pipeline/report_io.hpp"
#include "wsiqc/seg/architectures.hpp"
#include "wsiqc/seg/checkpoint.hpp"
#include "wsiqc/seg/train.hpp"
#include "wsiqc/stack/serialize.hpp"
#include "wsiqc/stack/stacking.hpp"

namespace fs = std::filesystem;
using namespace wsiqc;

namespace {

struct Check {
    bool ok = true;
    std::ostringstream why;

    void require(bool cond, const std::string& msg) {
        if (!cond) {
            ok = false;
            why << (why.str().empty() ? "" : "; ") << msg;
        }
    }
};

int g_failures = 0;

void run_criterion(int number, const std::string& label, double time_limit_s,
                   const std::function<void(Check&)>& body) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(check);
    } catch (const std::exception& e) {
        check.require(false, std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    check.require(secs < time_limit_s,
                  "runtime " + std::to_string(secs) + "s exceeds " +
                      std::to_string(time_limit_s) + "s");
    if (check.ok) {
        std::printf("[PASS] criterion %2d: %s (%.2fs)\n", number, label.c_str(), secs);
    } else {
        std::printf("[FAIL] criterion %2d: %s (%.2fs) -- %s\n", number, label.c_str(), secs,
                    check.why.str().c_str());
        ++g_failures;
    }
    std::fflush(stdout);
}

// ---- independent oracles (duplicated from the unit helpers on purpose:
// the acceptance binary stands alone) -----------------------------------------

struct Counts {
    long tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts count_pixels(const std::vector<double>& pred, const std::vector<double>& truth) {
    Counts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > 0.5;
        const bool t = truth[i] > 0.5;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

std::vector<seg::TrainSample> blob_set(int count, int side, std::uint64_t seed) {
    std::vector<seg::TrainSample> out;
    for (int i = 0; i < count; ++i) {
        auto pair = make_blob_sample("blob_" + std::to_string(i), side,
                                     derive_seed(seed, static_cast<std::uint64_t>(i)));
        out.push_back({std::move(pair.tile), std::move(pair.mask)});
    }
    return out;
}

double mean_train_iou(seg::SegModel& model, const std::vector<seg::TrainSample>& set) {
    double acc = 0.0;
    for (const auto& s : set) {
        const auto pred = seg::predict_mask(model, s.tile.image);
        acc += soft_iou(pred.probability.v, s.mask.mask.v);
    }
    return acc / static_cast<double>(set.size());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("missing file: " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

cls::LabeledImage tiny_sample(const std::string& id, int label) {
    cls::LabeledImage li;
    li.image = ImageBuffer(1, 1, 3, 0.5);
    li.label = label;
    li.id = id;
    return li;
}

std::vector<cls::LabeledImage> balanced_samples(int per_class, const std::string& tag) {
    std::vector<cls::LabeledImage> out;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < per_class; ++i)
            out.push_back(
                tiny_sample(tag + "_" + std::to_string(c) + "_" + std::to_string(i), c));
    return out;
}

stack::BaseModel perfect_base(const std::string& id) {
    return stack::BaseModel{id,
                            [](const std::vector<const cls::LabeledImage*>& samples) {
                                std::vector<std::array<double, 3>> out;
                                for (const auto* s : samples) {
                                    std::array<double, 3> row{0.0, 0.0, 0.0};
                                    row[static_cast<std::size_t>(s->label)] = 1.0;
                                    out.push_back(row);
                                }
                                return out;
                            }};
}

stack::BaseModel noisy_base(const std::string& id, double acc) {
    return stack::BaseModel{
        id, [id, acc](const std::vector<const cls::LabeledImage*>& samples) {
            std::vector<std::array<double, 3>> out;
            for (const auto* s : samples) {
                Rng rng(derive_seed(fnv1a64(id), s->id));
                int cls_idx = s->label;
                if (!rng.bernoulli(acc))
                    cls_idx = (cls_idx + 1 + static_cast<int>(rng.uniform_int(2))) % 3;
                std::array<double, 3> row{0.05, 0.05, 0.05};
                row[static_cast<std::size_t>(cls_idx)] = 0.9;
                const double sum = row[0] + row[1] + row[2];
                for (auto& v : row) v /= sum;
                out.push_back(row);
            }
            return out;
        }};
}

double base_accuracy(const stack::BaseModel& base,
                     const std::vector<cls::LabeledImage>& samples) {
    std::vector<const cls::LabeledImage*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    const auto probs = base.predict(ptrs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int pred = static_cast<int>(
            std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
        correct += pred == samples[i].label;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

DatasetManifest fake_manifest(int count) {
    DatasetManifest m;
    m.root = ".";
    for (int i = 0; i < count; ++i) {
        ManifestEntry e;
        e.tile_id = "tile_" + std::to_string(i);
        e.image_path = e.tile_id + ".png";
        m.entries.push_back(std::move(e));
    }
    return m;
}

cls::GridResult grid_row(const std::string& backbone, Optimizer opt, Loss loss, double acc,
                         double val_loss) {
    cls::GridResult r;
    r.backbone = backbone;
    r.optimizer = opt;
    r.loss = loss;
    r.test_accuracy = acc;
    r.val_loss = val_loss;
    return r;
}

}  // namespace

// ---- criteria ----------------------------------------------------------------

static void criterion_1(Check& c) {
    Rng rng(20240131);
    for (int trial = 0; trial < 200 && c.ok; ++trial) {
        std::vector<double> pred(256), truth(256);
        const double pp = rng.uniform(0.1, 0.9);
        const double tp = rng.uniform(0.1, 0.9);
        for (auto& v : pred) v = rng.bernoulli(pp) ? 1.0 : 0.0;
        for (auto& v : truth) v = rng.bernoulli(tp) ? 1.0 : 0.0;
        const auto k = count_pixels(pred, truth);
        const double dice_oracle = (2.0 * k.tp + 1.0) / (2.0 * k.tp + k.fp + k.fn + 1.0);
        const double iou_oracle = (static_cast<double>(k.tp) + 1.0) /
                                  (static_cast<double>(k.tp + k.fp + k.fn) + 1.0);
        const long union_fg = k.tp + k.fp + k.fn;
        const long union_bg = k.tn + k.fp + k.fn;
        const double miou_oracle =
            0.5 * ((union_fg == 0 ? 1.0 : static_cast<double>(k.tp) / union_fg) +
                   (union_bg == 0 ? 1.0 : static_cast<double>(k.tn) / union_bg));
        const double prec_oracle =
            (k.tp + k.fp) == 0 ? 1.0 : static_cast<double>(k.tp) / (k.tp + k.fp);
        const double rec_oracle =
            (k.tp + k.fn) == 0 ? 1.0 : static_cast<double>(k.tp) / (k.tp + k.fn);

        c.require(std::abs(dice_coef(pred, truth, 1.0) - dice_oracle) < 1e-9,
                  "dice mismatch at trial " + std::to_string(trial));
        c.require(std::abs(soft_iou(pred, truth, 1.0) - iou_oracle) < 1e-9,
                  "soft_iou mismatch at trial " + std::to_string(trial));
        c.require(std::abs(mean_iou(pred, truth, 0.5) - miou_oracle) < 1e-9,
                  "mean_iou mismatch at trial " + std::to_string(trial));
        const auto [prec, rec] = precision_recall(pred, truth, 0.5);
        c.require(std::abs(prec - prec_oracle) < 1e-9,
                  "precision mismatch at trial " + std::to_string(trial));
        c.require(std::abs(rec - rec_oracle) < 1e-9,
                  "recall mismatch at trial " + std::to_string(trial));
    }
}

static void criterion_2(Check& c) {
    std::vector<double> ious(60, 0.97);
    ious[7] = 0.88;
    ious[33] = 0.895;
    const double acc = thresholded_accuracy(ious, 0.90);
    c.require(acc == 58.0 / 60.0, "58/60 fixture not exact");
    c.require(std::floor(acc * 10000.0) / 100.0 == 96.66, "percentage is not 96.66");
    c.require(std::abs(acc - 0.9666) < 1e-4, "not within 4 decimal places of 0.9666");
}

static void criterion_3(Check& c) {
    {
        nn::PlateauState st;
        st.patience = 4;
        st.factor = 0.1;
        double lr = 1e-4;
        const std::vector<double> losses{1.0, 0.9, 0.95, 0.96, 0.97, 0.98};
        std::vector<double> trace;
        for (double l : losses) {
            auto [nl, ns] = nn::plateau_step(st, l, lr);
            lr = nl;
            st = ns;
            trace.push_back(lr);
        }
        c.require(trace[4] == 1e-4, "lr moved before the 4th non-improving epoch");
        c.require(std::abs(trace[5] - 1e-5) < 1e-20, "lr did not drop to 1e-5");
    }
    {
        nn::PlateauState st;
        st.patience = 4;
        st.factor = 0.1;
        double lr = 1e-4;
        auto [l0, s0] = nn::plateau_step(st, 0.5, lr);
        lr = l0;
        st = s0;
        std::vector<double> reached{lr};
        for (int i = 0; i < 40; ++i) {
            auto [nl, ns] = nn::plateau_step(st, 0.5, lr);
            if (nl != lr) reached.push_back(nl);
            lr = nl;
            st = ns;
        }
        c.require(reached.size() >= 6, "plateau cascade too short");
        const double expected[6] = {1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9};
        for (std::size_t i = 0; i < 6 && i < reached.size(); ++i)
            c.require(std::abs(reached[i] - expected[i]) < 1e-9 * expected[i],
                      "lr cascade misses step " + std::to_string(i));
    }
    {
        nn::EarlyStopState st;
        st.patience = 10;
        int stop_epoch = -1;
        for (int epoch = 1; epoch <= 40 && stop_epoch < 0; ++epoch) {
            const double loss = epoch <= 3 ? 1.0 - 0.1 * epoch : 0.9;
            auto [stop, ns] = nn::early_stop_step(st, loss);
            st = ns;
            if (stop) stop_epoch = epoch;
        }
        c.require(stop_epoch == 13, "early stop fired at epoch " +
                                        std::to_string(stop_epoch) + ", expected 13");
    }
}

static void criterion_4(Check& c) {
    // DoubleUNet shape contract at the default tile size
    {
        auto model = seg::build_double_unet(256, 256, 0.125, 11);
        Rng rng(1);
        nn::Tensor input(1, 256, 256, 3);
        for (double& v : input.v) v = rng.uniform();
        nn::Tape tape(false);
        const auto outs = model.forward(tape, nn::make_leaf(input), false);
        c.require(outs.size() == 2, "DoubleUNet must emit two maps");
        for (const auto& o : outs) {
            c.require(o.value().h == 256 && o.value().w == 256 && o.value().c == 1,
                      "output map is not HxWx1");
            bool in_range = true;
            for (double v : o.value().v) in_range = in_range && v >= 0.0 && v <= 1.0;
            c.require(in_range, "sigmoid output out of [0,1]");
        }
    }
    // gating identity: out1 forced to 1 passes the input through unchanged
    {
        auto model = seg::build_double_unet(32, 32, 0.125, 12);
        auto* w = model.store.find("net1/out/W");
        auto* b = model.store.find("net1/out/b");
        std::fill(w->node->value.v.begin(), w->node->value.v.end(), 0.0);
        std::fill(b->node->value.v.begin(), b->node->value.v.end(), 100.0);
        Rng rng(2);
        nn::Tensor input(1, 32, 32, 3);
        for (double& v : input.v) v = rng.uniform();
        nn::Tape tape(false);
        const auto outs = model.forward(tape, nn::make_leaf(input), false);
        bool ones = true;
        for (double v : outs[0].value().v) ones = ones && v == 1.0;
        c.require(ones, "out1 is not identically 1");
        const nn::Tensor* gated = model.net->gated_input();
        c.require(gated != nullptr, "no gated-input probe");
        if (gated) {
            bool same = gated->v.size() == input.v.size();
            for (std::size_t i = 0; same && i < input.v.size(); ++i)
                same = gated->v[i] == input.v[i];
            c.require(same, "network-2 input differs from the original image");
        }
    }
    // residual identity
    {
        nn::ParamStore store;
        Rng rng(3);
        nn::ResidualBlock block(store, "rb", 4, 4, rng, 1);
        block.zero_branch_output();
        nn::Tensor x(1, 8, 8, 4);
        for (double& v : x.v) v = rng.uniform(-1.0, 1.0);
        nn::Tape tape(false);
        const auto out = block(tape, nn::make_leaf(x), true);
        bool same = out.value().same_shape(x);
        for (std::size_t i = 0; same && i < x.v.size(); ++i)
            same = out.value().v[i] == x.v[i];
        c.require(same, "zeroed residual branch is not an exact shortcut");
    }
    // finite-difference gradient checks, >= 5 parameters per architecture
    for (const Architecture arch : {Architecture::double_unet, Architecture::resunet_pp}) {
        auto model = seg::build_segmenter(arch, 32, 32, 0.125, 21);
        Rng rng(derive_seed(99, to_string(arch)));
        nn::Tensor input(2, 32, 32, 3);
        for (double& v : input.v) v = rng.uniform();
        nn::Tensor target(2, 32, 32, 1);
        for (double& v : target.v) v = rng.bernoulli(0.4) ? 1.0 : 0.0;

        auto loss_value = [&]() {
            nn::Tape tape(false);
            const auto outs = model.forward(tape, nn::make_leaf(input), true);
            double total = 0.0;
            for (const auto& o : outs)
                total += nn::dice_loss_op(tape, o, target).value().v[0];
            return total;
        };
        model.store.zero_grad();
        {
            nn::Tape tape;
            const auto outs = model.forward(tape, nn::make_leaf(input), true);
            nn::Var loss;
            for (std::size_t i = 0; i < outs.size(); ++i) {
                nn::Var l = nn::dice_loss_op(tape, outs[i], target);
                loss = i == 0 ? l : nn::add(tape, loss, l);
            }
            tape.backward(loss);
        }
        std::vector<std::size_t> trainable;
        for (std::size_t i = 0; i < model.store.params().size(); ++i)
            if (model.store.params()[i].trainable) trainable.push_back(i);
        for (int s = 0; s < 6; ++s) {
            const auto& p =
                model.store.params()[trainable[rng.uniform_int(trainable.size())]];
            const std::size_t idx = rng.uniform_int(p.node->value.v.size());
            const double analytic = p.node->grad.v.empty() ? 0.0 : p.node->grad.v[idx];
            const double eps = 1e-5;
            const double orig = p.node->value.v[idx];
            p.node->value.v[idx] = orig + eps;
            const double lp = loss_value();
            p.node->value.v[idx] = orig - eps;
            const double lm = loss_value();
            p.node->value.v[idx] = orig;
            const double fd = (lp - lm) / (2.0 * eps);
            const double tol = 1e-3 * std::max({std::abs(fd), std::abs(analytic)}) + 1e-8;
            c.require(std::abs(fd - analytic) <= tol,
                      std::string(to_string(arch)) + " gradient mismatch on " + p.name);
        }
    }
}

static void criterion_5(Check& c) {
    const auto set = blob_set(8, 64, 42);
    for (const Architecture arch : {Architecture::resunet_pp, Architecture::double_unet}) {
        auto model = seg::build_segmenter(arch, 64, 64, 0.125, 7);
        RunConfig cfg;
        cfg.seed = 11;
        cfg.batch_size = 8;
        cfg.epochs = 200;
        cfg.learning_rate = 5e-3;
        cfg.optimizer = Optimizer::rmsprop;
        cfg.loss = Loss::dice_coef_loss;
        cfg.model = arch;
        cfg.width_scale = 0.125;
        const auto history = seg::train_segmenter(model, set, {}, cfg);
        const double iou = mean_train_iou(model, set);
        c.require(history.records.size() <= 200, "trained past 200 epochs");
        c.require(iou >= 0.9, std::string(to_string(arch)) + " train soft IOU " +
                                  std::to_string(iou) + " < 0.9");
    }
}

static void criterion_6(Check& c) {
    const auto manifest = fake_manifest(600);
    const auto plan = make_kfold(manifest, 6, 2024);
    c.require(plan.folds.size() == 6, "expected 6 folds");
    std::set<std::string> all;
    for (const auto& f : plan.folds) {
        c.require(f.size() == 100, "fold size is not 100");
        for (const auto& id : f)
            c.require(all.insert(id).second, "duplicate id across folds");
    }
    c.require(all.size() == 600, "folds do not cover the id set");

    std::map<std::string, int> tested;
    for (int i = 0; i < plan.k; ++i) {
        const auto rot = fold_rotation(plan, i);
        c.require(rot.train_ids.size() == 500, "rotation train side is not 500");
        for (const auto& id : rot.test_ids) ++tested[id];
    }
    bool all_once = tested.size() == 600;
    for (const auto& [id, n] : tested) all_once = all_once && n == 1;
    c.require(all_once, "ids are not each tested exactly once across rotations");
}

static void criterion_7(Check& c) {
    Rng rng(404);
    int done = 0;
    while (done < 50) {
        const int n = 10 + static_cast<int>(rng.uniform_int(80));
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<int> labels(static_cast<std::size_t>(n));
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            scores[static_cast<std::size_t>(i)] = std::round(rng.uniform() * 8.0) / 8.0;
            labels[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
            (labels[static_cast<std::size_t>(i)] ? has1 : has0) = true;
        }
        if (!has0 || !has1) continue;
        ++done;
        c.require(std::abs(roc_auc_binary(scores, labels) - pairwise_auc(scores, labels)) <
                      1e-12,
                  "rank AUC disagrees with the pairwise oracle");
    }

    const std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
    const std::vector<int> lab{0, 0, 1, 1};
    c.require(roc_auc_binary(sep, lab) == 1.0, "perfect separation is not 1.0");
    const std::vector<double> ties(4, 0.5);
    c.require(roc_auc_binary(ties, lab) == 0.5, "constant scores are not 0.5");

    std::vector<double> big_scores(10000);
    std::vector<int> big_labels(10000);
    for (std::size_t i = 0; i < big_scores.size(); ++i) {
        big_scores[i] = rng.uniform();
        big_labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    const double auc = roc_auc_binary(big_scores, big_labels);
    c.require(std::abs(auc - 0.5) < 0.05,
              "uniform-random AUC " + std::to_string(auc) + " outside 0.5 +/- 0.05");
}

static void criterion_8(Check& c) {
    std::vector<cls::GridResult> results;
    const double acc = 0.9976190328;
    results.push_back(grid_row("Xception", Optimizer::rmsprop,
                               Loss::categorical_cross_entropy, acc, 0.0103149469));
    results.push_back(grid_row("VGG19", Optimizer::rmsprop,
                               Loss::categorical_cross_entropy, acc, 0.0216745790));
    results.push_back(
        grid_row("MobileNet", Optimizer::rmsprop, Loss::kl_divergence, acc, 0.0092747136));
    results.push_back(grid_row("MobileNetV2", Optimizer::rmsprop,
                               Loss::categorical_cross_entropy, acc, 0.0024069594));
    results.push_back(grid_row("DenseNet121", Optimizer::rmsprop,
                               Loss::categorical_cross_entropy, acc, 0.0034660110));
    results.push_back(
        grid_row("MobileNetV2", Optimizer::rmsprop, Loss::kl_divergence, acc, 0.0206717420));
    results.push_back(grid_row("MobileNet", Optimizer::rmsprop,
                               Loss::categorical_cross_entropy, acc, 0.0300000000));
    results.push_back(grid_row("ResNet50", Optimizer::adam,
                               Loss::categorical_cross_entropy, 0.8619, 0.4082));

    const auto top = cls::select_base_models(results, 6);
    c.require(top.size() == 6, "did not select 6 bases");
    bool excluded_ok = true;
    for (const auto& r : top) {
        excluded_ok = excluded_ok && r.test_accuracy == acc;
        excluded_ok = excluded_ok &&
                      !(r.backbone == "MobileNet" &&
                        r.loss == Loss::categorical_cross_entropy);
    }
    c.require(excluded_ok, "the max-val-loss tied entry was not the one dropped");

    Rng rng(17);
    auto shuffled = results;
    for (int trial = 0; trial < 20; ++trial) {
        rng.shuffle(shuffled);
        const auto again = cls::select_base_models(shuffled, 6);
        bool same = again.size() == top.size();
        for (std::size_t i = 0; same && i < top.size(); ++i)
            same = again[i].key() == top[i].key();
        c.require(same, "selection is not permutation invariant (shuffle " +
                            std::to_string(trial) + ")");
    }
}

static void criterion_9(Check& c) {
    // perfect one-hot bases: every meta learner reaches accuracy 1.0
    {
        const auto train = balanced_samples(200, "p_train");
        const auto eval = balanced_samples(200, "p_eval");
        const std::vector<stack::BaseModel> bases{perfect_base("p0"), perfect_base("p1")};
        const auto train_features = stack::make_meta_features(bases, train);
        const auto eval_features = stack::make_meta_features(bases, eval);
        for (auto kind : stack::all_meta_kinds()) {
            const auto meta = stack::fit_meta_learner(kind, train_features, 5);
            std::size_t correct = 0;
            for (std::size_t i = 0; i < eval_features.rows.size(); ++i)
                correct +=
                    meta.learner->predict(eval_features.rows[i]) == eval_features.labels[i];
            const double acc = static_cast<double>(correct) /
                               static_cast<double>(eval_features.rows.size());
            if (kind == stack::MetaLearnerKind::gb_regressor)
                c.require(acc >= 0.999, std::string(to_string(kind)) +
                                            " below 0.999 on perfect bases: " +
                                            std::to_string(acc));
            else
                c.require(acc == 1.0, std::string(to_string(kind)) +
                                          " below 1.0 on perfect bases: " +
                                          std::to_string(acc));
        }
    }
    // three independent 80%-accurate bases: the stacked logistic meta
    // matches or beats the best single base on the same 10000-sample set
    {
        const auto train = balanced_samples(1000, "mc_train");  // 3000 samples
        const auto eval = balanced_samples(3334, "mc_eval");    // 10002 samples
        std::vector<stack::TrainableBase> bases;
        for (int i = 0; i < 3; ++i) {
            const std::string id = "noisy" + std::to_string(i);
            bases.push_back(stack::TrainableBase{
                id, noisy_base(id, 0.8),
                [id](const std::vector<cls::LabeledImage>&, std::uint64_t) {
                    return noisy_base(id, 0.8);
                }});
        }
        double best_single = 0.0;
        for (const auto& b : bases)
            best_single = std::max(best_single, base_accuracy(b.full, eval));
        const auto table = stack::run_stacking_comparison(
            bases, train, eval, {3}, {stack::MetaLearnerKind::logistic_regression}, 123,
            false, 5);
        const double stacked = table.accuracy[0][0];
        c.require(stacked >= best_single,
                  "stacked logistic " + std::to_string(stacked) + " < best single base " +
                      std::to_string(best_single));
        c.require(best_single > 0.75 && best_single < 0.85,
                  "single-base accuracy is not near the designed 0.8");
    }
}

static void criterion_10(Check& c) {
#ifndef WSIQC_CLI_PATH
    c.require(false, "CLI path not compiled in");
#else
    const fs::path cli = WSIQC_CLI_PATH;
    c.require(fs::exists(cli), "CLI binary missing: " + cli.string());
    if (!fs::exists(cli)) return;

    const fs::path work =
        fs::temp_directory_path() / ("wsiqc_accept_" + std::to_string(::getpid()));
    fs::remove_all(work);
    fs::create_directories(work);

    // synthetic 512x512 slide: artifact blobs in two quadrants
    ImageBuffer slide(512, 512, 3);
    ImageBuffer truth(512, 512, 1, 0.0);
    {
        Rng rng(9);
        for (int y = 0; y < 512; ++y)
            for (int x = 0; x < 512; ++x) {
                const double n = 0.03 * rng.uniform();
                slide.at(y, x, 0) = 0.92 - n;
                slide.at(y, x, 1) = 0.80 - n;
                slide.at(y, x, 2) = 0.86 - n;
            }
        auto paint = [&](double cy, double cx, double r) {
            for (int y = 0; y < 512; ++y)
                for (int x = 0; x < 512; ++x) {
                    const double dy = y - cy, dx = x - cx;
                    if (dy * dy + dx * dx <= r * r) {
                        slide.at(y, x, 0) = 0.35;
                        slide.at(y, x, 1) = 0.15;
                        slide.at(y, x, 2) = 0.40;
                        truth.at(y, x, 0) = 1.0;
                    }
                }
        };
        paint(128, 128, 80);   // top-left tile
        paint(384, 384, 60);   // bottom-right tile
    }
    const fs::path slide_png = work / "slide.png";
    save_image(slide, slide_png.string());

    // overfit desk segmenter on the slide's own tiles (downscaled to 64)
    auto model = seg::build_resunet_pp(64, 64, 0.125, 77);
    {
        std::vector<seg::TrainSample> train;
        for (int ty = 0; ty < 2; ++ty)
            for (int tx = 0; tx < 2; ++tx) {
                ImageBuffer timg(256, 256, 3);
                ImageBuffer tmask(256, 256, 1);
                for (int y = 0; y < 256; ++y)
                    for (int x = 0; x < 256; ++x) {
                        for (int ch = 0; ch < 3; ++ch)
                            timg.at(y, x, ch) = slide.at(ty * 256 + y, tx * 256 + x, ch);
                        tmask.at(y, x, 0) = truth.at(ty * 256 + y, tx * 256 + x, 0);
                    }
                seg::TrainSample s;
                s.tile.id = "t" + std::to_string(ty) + std::to_string(tx);
                s.tile.image = resize_bilinear(timg, 64, 64);
                s.mask.tile_id = s.tile.id;
                s.mask.mask = resize_nearest(tmask, 64, 64);
                train.push_back(std::move(s));
            }
        RunConfig cfg;
        cfg.seed = 5;
        cfg.batch_size = 4;
        cfg.epochs = 60;
        cfg.learning_rate = 5e-3;
        cfg.optimizer = Optimizer::rmsprop;
        cfg.loss = Loss::dice_coef_loss;
        seg::train_segmenter(model, train, {}, cfg);
    }
    const fs::path ckpt = work / "seg.wsiqc";
    seg::save_checkpoint(model, ckpt.string());

    // severity stack bundle: one desk classifier + logistic meta
    {
        auto classifier = cls::build_classifier(cls::backbone_spec("MobileNet"), 3, 31);
        std::vector<cls::LabeledImage> sev_train;
        Rng rng(13);
        for (int cls_idx = 0; cls_idx < 3; ++cls_idx)
            for (int i = 0; i < 8; ++i) {
                const auto label = static_cast<SeverityLabel>(cls_idx);
                cls::LabeledImage li;
                li.image = make_severity_sample("s", 64, label,
                                                rng.next_u64())
                               .image;
                li.label = cls_idx;
                li.id = "sev" + std::to_string(cls_idx) + "_" + std::to_string(i);
                sev_train.push_back(std::move(li));
            }
        cls::train_classifier(*&classifier, sev_train, {}, Optimizer::rmsprop,
                              Loss::categorical_cross_entropy, 10, 8, 1e-3, 3,
                              /*freeze_backbone=*/false);
        const fs::path cls_ckpt = work / "base.wsiqc";
        cls::save_classifier(classifier, cls_ckpt.string());

        std::vector<stack::BaseModel> bases{
            stack::BaseModel{"base0",
                             [&classifier](const std::vector<const cls::LabeledImage*>& s) {
                                 return cls::predict_probs(classifier, s);
                             }}};
        const auto features = stack::make_meta_features(bases, sev_train);
        const auto meta =
            stack::fit_meta_learner(stack::MetaLearnerKind::logistic_regression, features, 3);
        stack::StackBundleInfo info;
        info.base_ids = {"base0"};
        info.base_checkpoints = {"base.wsiqc"};
        const fs::path bundle = work / "stack";
        fs::create_directories(bundle);
        fs::copy_file(cls_ckpt, bundle / "base.wsiqc",
                      fs::copy_options::overwrite_existing);
        stack::save_stack_bundle(info, meta, bundle);
    }

    auto invoke = [&](const fs::path& out_dir) {
        std::ostringstream cmd;
        cmd << '"' << cli.string() << '"' << " run --image " << slide_png
            << " --seg-model tissue_fold=" << ckpt << " --stack-dir " << (work / "stack")
            << " --tile 256 --trigger 0.01 --out " << out_dir << " > " << (out_dir.string() + ".log")
            << " 2>&1";
        return std::system(cmd.str().c_str());
    };
    const fs::path out_a = work / "run_a";
    const fs::path out_b = work / "run_b";
    c.require(invoke(out_a) == 0, "CLI run (first) failed");
    c.require(invoke(out_b) == 0, "CLI run (second) failed");
    if (!c.ok) return;

    const auto verdicts = pipeline::load_verdicts(out_a / "verdicts.jsonl");
    c.require(verdicts.size() == 4, "expected 4 verdicts, got " +
                                        std::to_string(verdicts.size()));

    // byte-stable across reruns
    c.require(slurp(out_a / "verdicts.jsonl") == slurp(out_b / "verdicts.jsonl"),
              "verdicts differ across reruns");
    c.require(slurp(out_a / "summary.csv") == slurp(out_b / "summary.csv"),
              "summary differs across reruns");
    for (const auto& e : fs::directory_iterator(out_a / "overlays"))
        c.require(slurp(e.path()) == slurp(out_b / "overlays" / e.path().filename()),
                  "overlay differs across reruns: " + e.path().filename().string());

    // overlays differ from the input exactly on the predicted mask pixels
    std::map<ArtifactKind, seg::SegModel*> models{{ArtifactKind::tissue_fold, &model}};
    const auto lib_report = pipeline::run_pipeline(load_image(slide_png.string()), models,
                                                   nullptr, pipeline::DecisionPolicy{}, 256);
    c.require(lib_report.tiles.size() == 4, "library pipeline tile count mismatch");
    for (const auto& t : lib_report.tiles) {
        const auto overlay = load_image(
            (out_a / "overlays" / (t.verdict.tile_id + "_overlay.png")).string());
        auto quantize = [](double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0); };
        bool mask_ok = true;
        for (int y = 0; y < 256 && mask_ok; ++y)
            for (int x = 0; x < 256 && mask_ok; ++x) {
                bool differs = false;
                for (int ch = 0; ch < 3; ++ch)
                    differs = differs || quantize(overlay.at(y, x, ch)) !=
                                             quantize(t.tile_image.at(y, x, ch));
                const bool masked = t.union_mask.at(y, x, 0) > 0.5;
                if (differs != masked) mask_ok = false;
            }
        c.require(mask_ok, "overlay for " + t.verdict.tile_id +
                               " does not differ exactly on masked pixels");
    }
    fs::remove_all(work);
#endif
}

int main() {
    std::printf("wsiqc acceptance suite\n");
    run_criterion(1, "metric oracle suite (200 random 16x16 mask pairs, 1e-9)", 5.0,
                  criterion_1);
    run_criterion(2, "thresholded accuracy protocol fixture (58/60 -> 96.66%)", 5.0,
                  criterion_2);
    run_criterion(3, "plateau and early-stop scheduler traces", 1.0, criterion_3);
    run_criterion(4, "architecture contracts and finite-difference gradients", 120.0,
                  criterion_4);
    run_criterion(5, "overfit smoke test (both architectures, soft IOU >= 0.9)", 600.0,
                  criterion_5);
    run_criterion(6, "6-fold partition properties over 600 ids", 1.0, criterion_6);
    run_criterion(7, "ROC oracle (pairwise counting, edge cases, n=10000)", 5.0,
                  criterion_7);
    run_criterion(8, "base-model selection rule and permutation invariance", 1.0,
                  criterion_8);
    run_criterion(9, "stacking properties (perfect bases, 80% Monte-Carlo)", 120.0,
                  criterion_9);
    run_criterion(10, "end-to-end CLI run on a 512x512 synthetic slide", 60.0,
                  criterion_10);
    if (g_failures == 0) std::printf("all criteria passed\n");
    else std::printf("%d criteria FAILED\n", g_failures);
    return g_failures;
}
