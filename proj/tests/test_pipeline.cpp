#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "helpers.hpp"
#include "wsiqc/data/synthetic.hpp"
#include "wsiqc/pipeline/report_io.hpp"
#include "wsiqc/seg/architectures.hpp"

using namespace wsiqc;
using namespace wsiqc::pipeline;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// severity bases keyed on tile darkness: dark tiles grade high
stack::BaseModel intensity_base(const std::string& id) {
    return stack::BaseModel{
        id, [](const std::vector<const cls::LabeledImage*>& samples) {
            std::vector<std::array<double, 3>> out;
            for (const auto* s : samples) {
                double mean = 0.0;
                for (double v : s->image.v) mean += v;
                mean /= static_cast<double>(s->image.v.size());
                std::array<double, 3> row{0.05, 0.05, 0.05};
                if (mean < 0.68) row[2] = 0.9;        // dark: high severity
                else if (mean < 0.80) row[1] = 0.9;   // mid
                else row[0] = 0.9;                    // bright: low
                double sum = row[0] + row[1] + row[2];
                for (auto& v : row) v /= sum;
                out.push_back(row);
            }
            return out;
        }};
}

pipeline::SeverityStack trained_intensity_stack() {
    pipeline::SeverityStack stack_bundle;
    stack_bundle.bases = {intensity_base("ib0"), intensity_base("ib1")};
    // training samples spanning the three intensity bands
    std::vector<cls::LabeledImage> train;
    Rng rng(77);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 12; ++i) {
            cls::LabeledImage li;
            const double level = c == 0 ? 0.9 : (c == 1 ? 0.74 : 0.45);
            li.image = ImageBuffer(8, 8, 3, level + 0.01 * rng.uniform());
            li.label = c;
            li.id = "band" + std::to_string(c) + "_" + std::to_string(i);
            train.push_back(std::move(li));
        }
    const auto features = stack::make_meta_features(stack_bundle.bases, train);
    stack_bundle.meta =
        stack::fit_meta_learner(stack::MetaLearnerKind::logistic_regression, features, 3);
    return stack_bundle;
}

seg::SegModel constant_mask_model(double bias) {
    auto model = seg::build_unet_baseline(32, 32, 0.125, 9001);
    auto* w = model.store.find("head/W");
    auto* b = model.store.find("head/b");
    std::fill(w->node->value.v.begin(), w->node->value.v.end(), 0.0);
    std::fill(b->node->value.v.begin(), b->node->value.v.end(), bias);
    return model;
}

}  // namespace

TEST_CASE("tile_image: grid arithmetic") {
    ImageBuffer img(512, 512, 3, 0.5);
    const auto tiles = tile_image(img, 256, 256);
    REQUIRE(tiles.size() == 4);
    CHECK(tiles[0].origin_x == 0);
    CHECK(tiles[3].origin_x == 256);
    CHECK(tiles[3].origin_y == 256);
    for (const auto& t : tiles) CHECK_FALSE(t.padded);

    ImageBuffer single(64, 64, 3, 0.1);
    CHECK(tile_image(single, 64, 64).size() == 1);

    ImageBuffer odd(300, 300, 3, 0.2);
    const auto padded = tile_image(odd, 256, 256);
    REQUIRE(padded.size() == 4);
    int flagged = 0;
    for (const auto& t : padded) flagged += t.padded;
    CHECK(flagged == 3);

    CHECK_THROWS_AS(tile_image(single, 128, 0), DataError);
    CHECK_THROWS_AS(tile_image(single, 100, 50), DataError);
}

TEST_CASE("tiling is lossless for stride == tile_side on divisible images") {
    Rng rng(5);
    ImageBuffer img(128, 96, 3);
    for (double& v : img.v) v = rng.uniform();
    const auto tiles = tile_image(img, 32, 32);
    const auto back = reassemble_tiles(tiles, img.h, img.w);
    CHECK(back.v == img.v);
}

TEST_CASE("render_overlay: empty, full and half masks") {
    Rng rng(6);
    ImageBuffer img(16, 16, 3);
    for (double& v : img.v) v = rng.uniform(0.0, 0.9);

    ImageBuffer empty_mask(16, 16, 1, 0.0);
    CHECK(render_overlay(img, empty_mask, std::nullopt).v == img.v);

    ImageBuffer full_mask(16, 16, 1, 1.0);
    const auto full = render_overlay(img, full_mask, SeverityLabel::high);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < img.v.size(); ++i) changed += full.v[i] != img.v[i];
    CHECK(changed == img.v.size());  // alpha 0.4 touches every channel

    ImageBuffer half_mask(16, 16, 1, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 16; ++x) half_mask.at(y, x, 0) = 1.0;
    const auto half = render_overlay(img, half_mask, SeverityLabel::low);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const bool masked = y < 8;
                if (masked) CHECK(half.at(y, x, ch) != img.at(y, x, ch));
                else CHECK(half.at(y, x, ch) == img.at(y, x, ch));
            }

    ImageBuffer bad(8, 16, 1, 0.0);
    CHECK_THROWS_AS(render_overlay(img, bad, std::nullopt), DataError);
}

TEST_CASE("run_pipeline: clean tile retains with fraction 0") {
    auto model = constant_mask_model(-100.0);  // never predicts artifact
    std::map<ArtifactKind, seg::SegModel*> models{{ArtifactKind::tissue_fold, &model}};
    ImageBuffer white(64, 64, 3, 1.0);
    auto stack_bundle = trained_intensity_stack();
    const auto report =
        run_pipeline(white, models, &stack_bundle, DecisionPolicy{}, 32);
    REQUIRE(report.tiles.size() == 4);
    for (const auto& t : report.tiles) {
        CHECK(t.verdict.artifact_fraction == 0.0);
        CHECK(t.verdict.decision == Decision::retain);
        CHECK_FALSE(t.verdict.severity_scored);
    }
    CHECK(report.count(Decision::retain) == 4);
}

TEST_CASE("run_pipeline: trigger 1.0 retains everything regardless of masks") {
    auto model = constant_mask_model(100.0);  // everything is artifact
    std::map<ArtifactKind, seg::SegModel*> models{{ArtifactKind::tissue_fold, &model}};
    ImageBuffer img(64, 64, 3, 0.2);
    DecisionPolicy policy;
    policy.trigger_fraction = 1.0;
    auto stack_bundle = trained_intensity_stack();
    const auto report = run_pipeline(img, models, &stack_bundle, policy, 32);
    for (const auto& t : report.tiles) {
        CHECK(t.verdict.artifact_fraction == 1.0);
        CHECK(t.verdict.decision == Decision::retain);
    }
}

TEST_CASE("run_pipeline: known 30% artifact grades high and excludes") {
    // overfit a tiny segmenter on the fixture tile so the mask is known
    const auto fixture = make_rect_sample("rect", 32, 0.3);
    auto model = seg::build_resunet_pp(32, 32, 0.125, 1234);
    RunConfig cfg;
    cfg.seed = 3;
    cfg.batch_size = 1;
    cfg.epochs = 80;
    cfg.learning_rate = 5e-3;
    cfg.optimizer = Optimizer::rmsprop;
    cfg.loss = Loss::dice_coef_loss;
    const std::vector<seg::TrainSample> train{{fixture.tile, fixture.mask}};
    seg::train_segmenter(model, train, {}, cfg);
    const auto check = seg::predict_mask(model, fixture.tile.image);
    REQUIRE(soft_iou(check.probability.v, fixture.mask.mask.v) > 0.8);

    std::map<ArtifactKind, seg::SegModel*> models{{ArtifactKind::tissue_fold, &model}};
    auto stack_bundle = trained_intensity_stack();
    DecisionPolicy policy;  // defaults: high -> exclude_region

    // darken the artifact strip so the intensity stack grades it high
    ImageBuffer slide = fixture.tile.image;
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 32; ++x)
            for (int ch = 0; ch < 3; ++ch) slide.at(y, x, ch) *= 0.3;

    const auto report = run_pipeline(slide, models, &stack_bundle, policy, 32);
    REQUIRE(report.tiles.size() == 1);
    const auto& v = report.tiles[0].verdict;
    CHECK(v.artifact_fraction == Catch::Approx(0.3).margin(0.08));
    CHECK(v.severity_scored);
    CHECK(v.decision == Decision::exclude_region);
    CHECK(v.artifact_kind.has_value());
    double psum = 0.0;
    for (double p : v.severity_probs) psum += p;
    CHECK(psum == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("run_pipeline: raising the trigger never un-retains a tile") {
    auto model = constant_mask_model(100.0);
    std::map<ArtifactKind, seg::SegModel*> models{{ArtifactKind::air_bubble, &model}};
    ImageBuffer img(64, 96, 3, 0.4);
    auto stack_bundle = trained_intensity_stack();
    std::vector<std::size_t> retains;
    for (double trigger : {0.0, 0.3, 0.9999, 1.0}) {
        DecisionPolicy policy;
        policy.trigger_fraction = trigger;
        const auto report = run_pipeline(img, models, &stack_bundle, policy, 32);
        retains.push_back(report.count(Decision::retain));
        std::size_t total = 0;
        for (const auto& [d, n] : report.decision_counts) total += n;
        CHECK(total == report.tiles.size());
    }
    for (std::size_t i = 1; i < retains.size(); ++i) CHECK(retains[i] >= retains[i - 1]);
}

TEST_CASE("run_pipeline: missing model map errors") {
    ImageBuffer img(64, 64, 3, 0.4);
    auto stack_bundle = trained_intensity_stack();
    std::map<ArtifactKind, seg::SegModel*> empty;
    CHECK_THROWS_AS(run_pipeline(img, empty, &stack_bundle, DecisionPolicy{}, 32),
                    DataError);
    std::map<ArtifactKind, seg::SegModel*> null_model{{ArtifactKind::tissue_fold, nullptr}};
    CHECK_THROWS_AS(run_pipeline(img, null_model, &stack_bundle, DecisionPolicy{}, 32),
                    DataError);
}

TEST_CASE("emit_report writes verdicts, summary and overlays; reruns are byte-stable") {
    testutil::TempDir dir("report");
    auto model = constant_mask_model(100.0);
    std::map<ArtifactKind, seg::SegModel*> models{{ArtifactKind::tissue_fold, &model}};
    ImageBuffer img(64, 64, 3, 0.3);
    auto stack_bundle = trained_intensity_stack();
    const auto report = run_pipeline(img, models, &stack_bundle, DecisionPolicy{}, 32);

    const auto out_a = dir.path / "a";
    const auto out_b = dir.path / "b";
    emit_report(report, out_a);
    emit_report(report, out_b);

    REQUIRE(std::filesystem::exists(out_a / "verdicts.jsonl"));
    REQUIRE(std::filesystem::exists(out_a / "summary.csv"));
    int overlays = 0;
    for (const auto& e : std::filesystem::directory_iterator(out_a / "overlays")) {
        ++overlays;
        CHECK(e.path().filename().string().find("_overlay") != std::string::npos);
    }
    CHECK(overlays == 4);

    CHECK(slurp(out_a / "verdicts.jsonl") == slurp(out_b / "verdicts.jsonl"));
    CHECK(slurp(out_a / "summary.csv") == slurp(out_b / "summary.csv"));
    for (const auto& e : std::filesystem::directory_iterator(out_a / "overlays"))
        CHECK(slurp(e.path()) == slurp(out_b / "overlays" / e.path().filename()));

    // verdict records round trip and re-summarize identically
    const auto verdicts = load_verdicts(out_a / "verdicts.jsonl");
    REQUIRE(verdicts.size() == 4);
    CHECK(summarize_verdicts(verdicts) == slurp(out_a / "summary.csv"));
}

TEST_CASE("emit_report: empty report produces a zero summary and no overlays") {
    testutil::TempDir dir("empty_report");
    DecisionReport report;
    emit_report(report, dir.path / "out");
    CHECK(slurp(dir.path / "out" / "summary.csv") ==
          "tiles,retain,exclude_region,flag_slide_prep\n0,0,0,0\n");
    CHECK(std::filesystem::is_empty(dir.path / "out" / "overlays"));
}

TEST_CASE("external quality score passes through to the verdict") {
    auto model = constant_mask_model(-100.0);
    std::map<ArtifactKind, seg::SegModel*> models{{ArtifactKind::tissue_fold, &model}};
    ImageBuffer img(32, 32, 3, 0.8);
    const auto report = run_pipeline(
        img, models, nullptr, DecisionPolicy{}, 32, 32,
        [](const TileSample& t) { return std::optional<double>(0.42 + t.origin_x); });
    REQUIRE(report.tiles.size() == 1);
    REQUIRE(report.tiles[0].verdict.external_quality_score.has_value());
    CHECK(*report.tiles[0].verdict.external_quality_score == Catch::Approx(0.42));
}
