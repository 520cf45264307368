#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "helpers.hpp"
#include "wsiqc/cls/grid.hpp"
#include "wsiqc/data/synthetic.hpp"

using namespace wsiqc;
using namespace wsiqc::cls;

namespace {

std::vector<LabeledImage> severity_data(int per_class, int side, std::uint64_t seed) {
    std::vector<LabeledImage> out;
    int label = 0;
    for (SeverityLabel s : {SeverityLabel::low, SeverityLabel::mid, SeverityLabel::high}) {
        for (int i = 0; i < per_class; ++i) {
            const std::string id = std::string(to_string(s)) + "_" + std::to_string(i);
            LabeledImage li;
            li.image = make_severity_sample(id, side, s, derive_seed(seed, id)).image;
            li.label = label;
            li.id = id;
            out.push_back(std::move(li));
        }
        ++label;
    }
    return out;
}

// interleaved balanced split: first `train_per_class` of each class train
void split_balanced(const std::vector<LabeledImage>& all, int per_class, int train_per_class,
                    std::vector<LabeledImage>& train, std::vector<LabeledImage>& test) {
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < per_class; ++i) {
            const auto& s = all[static_cast<std::size_t>(c * per_class + i)];
            (i < train_per_class ? train : test).push_back(s);
        }
}

}  // namespace

TEST_CASE("backbone table carries the documented input sides") {
    CHECK(backbone_table().size() == 10);
    CHECK(backbone_spec("NasNetLarge").input_side == 331);
    for (const auto& name : {"Xception", "VGG16", "VGG19", "ResNet50", "InceptionV3",
                             "InceptionResNetV2", "MobileNet", "MobileNetV2", "DenseNet121"})
        CHECK(backbone_spec(name).input_side == 224);
    CHECK_THROWS_AS(backbone_spec("AlexNet"), DataError);
}

TEST_CASE("classifier outputs softmax rows of the right shape") {
    auto model = build_classifier(backbone_spec("NasNetLarge"), 3, 7);
    Rng rng(1);
    std::vector<LabeledImage> batch;
    for (int i = 0; i < 3; ++i) {
        LabeledImage li;
        li.image = ImageBuffer(331, 331, 3);
        for (double& v : li.image.v) v = rng.uniform();
        li.label = i;
        batch.push_back(std::move(li));
    }
    std::vector<const LabeledImage*> ptrs;
    for (const auto& b : batch) ptrs.push_back(&b);
    const auto probs = predict_probs(model, ptrs);
    REQUIRE(probs.size() == 3);
    for (const auto& row : probs) {
        double sum = 0.0;
        for (double v : row) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("non-substitute backbones require a weights provider") {
    backbone_weights_provider() = nullptr;
    CHECK_THROWS_AS(build_classifier(backbone_spec("VGG19", /*desk=*/false)), DataError);

    // with a provider pointing at a saved desk model, loading works
    testutil::TempDir dir("bbw");
    auto donor = build_classifier(backbone_spec("VGG19"), 3, 99);
    const auto path = (dir.path / "vgg19.wsiqc").string();
    save_classifier(donor, path);
    backbone_weights_provider() = [path](const std::string& name) {
        return name == "VGG19" ? std::optional<std::string>(path) : std::nullopt;
    };
    auto loaded = build_classifier(backbone_spec("VGG19", false));
    CHECK(loaded.spec.name == "VGG19");
    CHECK_THROWS_AS(build_classifier(backbone_spec("Xception", false)), DataError);
    backbone_weights_provider() = nullptr;
}

TEST_CASE("classifier checkpoint round trip") {
    testutil::TempDir dir("clsckpt");
    auto model = build_classifier(backbone_spec("MobileNet"), 3, 5);
    const auto path = (dir.path / "m.wsiqc").string();
    save_classifier(model, path);
    auto loaded = load_classifier(path);
    CHECK(loaded.spec.name == "MobileNet");
    CHECK(loaded.spec.input_side == 224);
    for (std::size_t i = 0; i < model.store.params().size(); ++i)
        CHECK(loaded.store.params()[i].node->value.v ==
              model.store.params()[i].node->value.v);
}

TEST_CASE("desk grid: two substitutes separate the synthetic classes") {
    testutil::TempDir dir("grid");
    const int per_class = 30;
    const auto all = severity_data(per_class, 64, 2024);
    std::vector<LabeledImage> train, test;
    split_balanced(all, per_class, 21, train, test);  // 70:30

    GridSpec grid;
    grid.backbones = {backbone_spec("MobileNet"), backbone_spec("VGG16")};
    grid.optimizers = {Optimizer::rmsprop};
    grid.losses = {Loss::categorical_cross_entropy};
    GridTrainParams params;
    params.epochs = 15;
    params.batch_size = 16;
    params.learning_rate = 1e-3;
    params.seed = 7;
    params.freeze_backbone = false;  // substitutes start from random weights

    const auto outcome = run_grid(train, test, grid, params, dir.path / "out");
    REQUIRE(outcome.results.size() == 2);
    CHECK(outcome.failures.empty());
    for (const auto& r : outcome.results) {
        INFO(r.backbone << " acc=" << r.test_accuracy);
        CHECK(r.test_accuracy > 0.9);
        CHECK(r.roc_score > 0.9);
        CHECK(std::filesystem::exists(dir.path / "out" / r.checkpoint));
    }

    // grid of one combination
    GridSpec single;
    single.backbones = {backbone_spec("MobileNet")};
    single.optimizers = {Optimizer::rmsprop};
    single.losses = {Loss::categorical_cross_entropy};
    const auto one = run_grid(train, test, single, params, dir.path / "single");
    CHECK(one.results.size() == 1);
}

TEST_CASE("grid resumes from its results file and keys stay unique") {
    testutil::TempDir dir("resume");
    const int per_class = 12;
    const auto all = severity_data(per_class, 48, 11);
    std::vector<LabeledImage> train, test;
    split_balanced(all, per_class, 8, train, test);

    GridTrainParams params;
    params.epochs = 2;
    params.batch_size = 8;
    params.learning_rate = 1e-3;

    GridSpec first;
    first.backbones = {backbone_spec("MobileNet")};
    first.optimizers = {Optimizer::adam};
    first.losses = {Loss::categorical_cross_entropy};
    const auto a = run_grid(train, test, first, params, dir.path);
    CHECK(a.results.size() == 1);
    CHECK(a.skipped_existing == 0);

    GridSpec second = first;
    second.losses = {Loss::categorical_cross_entropy, Loss::kl_divergence};
    const auto b = run_grid(train, test, second, params, dir.path);
    CHECK(b.skipped_existing == 1);
    CHECK(b.results.size() == 2);

    std::set<std::string> keys;
    for (const auto& r : b.results) CHECK(keys.insert(r.key()).second);

    // results file round trip
    const auto loaded = load_grid_csv((dir.path / "grid_results.csv").string());
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].key() == b.results[0].key());
    CHECK(loaded[1].val_loss == Catch::Approx(b.results[1].val_loss));
}

TEST_CASE("a failing combination is recorded and does not abort the grid") {
    testutil::TempDir dir("gridfail");
    backbone_weights_provider() = nullptr;
    const int per_class = 6;
    const auto all = severity_data(per_class, 48, 3);
    std::vector<LabeledImage> train, test;
    split_balanced(all, per_class, 4, train, test);

    GridSpec grid;
    grid.backbones = {backbone_spec("MobileNet"),
                      backbone_spec("VGG19", /*desk=*/false)};  // 2nd cannot build
    grid.optimizers = {Optimizer::adam};
    grid.losses = {Loss::kl_divergence};
    GridTrainParams params;
    params.epochs = 1;
    params.batch_size = 4;

    const auto outcome = run_grid(train, test, grid, params, dir.path);
    CHECK(outcome.results.size() == 1);
    REQUIRE(outcome.failures.size() == 1);
    CHECK(outcome.failures[0].find("VGG19") != std::string::npos);
    CHECK(std::filesystem::exists(dir.path / "grid_failures.log"));
}

TEST_CASE("run_grid rejects imbalanced or off-ratio splits") {
    const auto all = severity_data(10, 48, 5);
    std::vector<LabeledImage> train, test;
    split_balanced(all, 10, 7, train, test);
    train.pop_back();  // unbalance one class
    GridSpec grid;
    grid.backbones = {backbone_spec("MobileNet")};
    CHECK_THROWS_AS(run_grid(train, test, grid, {}, "/tmp/wsiqc_never"), DataError);
}

static cls::GridResult make_result(const std::string& backbone, Optimizer opt, Loss loss,
                                   double acc, double val_loss) {
    cls::GridResult r;
    r.backbone = backbone;
    r.optimizer = opt;
    r.loss = loss;
    r.test_accuracy = acc;
    r.val_loss = val_loss;
    return r;
}

TEST_CASE("select_base_models drops the tied entry with the worst val loss") {
    // seven results tied at the same accuracy, distinct val losses
    std::vector<GridResult> results;
    const double acc = 0.9976190328;
    results.push_back(make_result("Xception", Optimizer::rmsprop, Loss::categorical_cross_entropy, acc, 0.0103149469));
    results.push_back(make_result("VGG19", Optimizer::rmsprop, Loss::categorical_cross_entropy, acc, 0.0216745790));
    results.push_back(make_result("MobileNet", Optimizer::rmsprop, Loss::kl_divergence, acc, 0.0092747136));
    results.push_back(make_result("MobileNetV2", Optimizer::rmsprop, Loss::categorical_cross_entropy, acc, 0.0024069594));
    results.push_back(make_result("DenseNet121", Optimizer::rmsprop, Loss::categorical_cross_entropy, acc, 0.0034660110));
    results.push_back(make_result("MobileNetV2", Optimizer::rmsprop, Loss::kl_divergence, acc, 0.0206717420));
    results.push_back(make_result("MobileNet", Optimizer::rmsprop, Loss::categorical_cross_entropy, acc, 0.0300000000));  // worst val loss
    // plus clearly-worse models that never enter the top 6
    results.push_back(make_result("ResNet50", Optimizer::adam, Loss::categorical_cross_entropy, 0.86, 0.4082));

    const auto top = select_base_models(results, 6);
    REQUIRE(top.size() == 6);
    for (const auto& r : top) {
        CHECK(r.test_accuracy == acc);
        CHECK(!(r.backbone == "MobileNet" && r.loss == Loss::categorical_cross_entropy));
    }
    // ordered by ascending val loss within the tie
    for (std::size_t i = 1; i < top.size(); ++i)
        CHECK(top[i - 1].val_loss <= top[i].val_loss);

    // permutation invariance
    Rng rng(17);
    auto shuffled = results;
    for (int trial = 0; trial < 20; ++trial) {
        rng.shuffle(shuffled);
        const auto again = select_base_models(shuffled, 6);
        for (std::size_t i = 0; i < top.size(); ++i) CHECK(again[i].key() == top[i].key());
    }
}

TEST_CASE("select_base_models: distinct accuracies give plain top-k") {
    std::vector<GridResult> results;
    results.push_back(make_result("A", Optimizer::adam, Loss::categorical_cross_entropy, 0.80, 0.5));
    results.push_back(make_result("B", Optimizer::adam, Loss::categorical_cross_entropy, 0.95, 0.4));
    results.push_back(make_result("C", Optimizer::adam, Loss::categorical_cross_entropy, 0.90, 0.3));
    const auto top = select_base_models(results, 2);
    REQUIRE(top.size() == 2);
    CHECK(top[0].backbone == "B");
    CHECK(top[1].backbone == "C");
    CHECK_THROWS_AS(select_base_models(results, 4), DataError);
}

TEST_CASE("select_base_models agrees with an exhaustive sort oracle") {
    Rng rng(23);
    std::vector<GridResult> results;
    const char* names[] = {"A", "B", "C", "D", "E", "F", "G", "H", "I", "J"};
    for (int i = 0; i < 10; ++i) {
        // quantized accuracies create ties
        const double acc = std::round(rng.uniform() * 3.0) / 3.0;
        const double vl = std::round(rng.uniform() * 5.0) / 5.0;
        results.push_back(make_result(names[i], Optimizer::adam,
                                      Loss::categorical_cross_entropy, acc, vl));
    }
    auto oracle = results;
    std::stable_sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
        if (a.test_accuracy != b.test_accuracy) return a.test_accuracy > b.test_accuracy;
        if (a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
        return a.backbone < b.backbone;
    });
    const auto top = select_base_models(results, 10);
    for (std::size_t i = 0; i < top.size(); ++i) CHECK(top[i].key() == oracle[i].key());
}

TEST_CASE("the full 10x3x2 grid yields exactly 60 unique results") {
    testutil::TempDir dir("fullgrid");
    const int per_class = 3;
    const auto all = severity_data(per_class, 32, 77);
    std::vector<LabeledImage> train, test;
    split_balanced(all, per_class, 2, train, test);

    GridSpec grid;  // defaults: all optimizers and both losses
    for (const auto& spec : backbone_table()) grid.backbones.push_back(spec);
    GridTrainParams params;
    params.epochs = 1;
    params.batch_size = 6;
    params.learning_rate = 1e-3;
    params.freeze_backbone = false;

    const auto outcome = run_grid(train, test, grid, params, dir.path);
    CHECK(outcome.failures.empty());
    REQUIRE(outcome.results.size() == 60);

    // keys are exactly the requested Cartesian product
    std::set<std::string> keys;
    for (const auto& r : outcome.results) CHECK(keys.insert(r.key()).second);
    for (const auto& spec : grid.backbones)
        for (auto opt : grid.optimizers)
            for (auto loss : grid.losses) {
                GridResult probe;
                probe.backbone = spec.name;
                probe.optimizer = opt;
                probe.loss = loss;
                CHECK(keys.count(probe.key()) == 1);
            }
}
