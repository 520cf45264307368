#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "helpers.hpp"
#include "wsiqc/core/config.hpp"
#include "wsiqc/core/manifest.hpp"
#include "wsiqc/data/synthetic.hpp"

using namespace wsiqc;

static RunConfig paper_seg_config() {
    RunConfig cfg;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-4;
    cfg.optimizer = Optimizer::rmsprop;
    cfg.loss = Loss::dice_coef_loss;
    cfg.plateau = {0.1, 4};
    cfg.early_stop_patience = 10;
    return cfg;
}

TEST_CASE("validate_config accepts the reference segmentation setup") {
    CHECK(validate_config(paper_seg_config()).empty());
}

TEST_CASE("validate_config names the violated field") {
    RunConfig cfg = paper_seg_config();
    cfg.learning_rate = 0.0;
    auto violations = validate_config(cfg);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].find("learning_rate") != std::string::npos);

    cfg = paper_seg_config();
    cfg.plateau.factor = 1.5;
    violations = validate_config(cfg);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].find("plateau.factor") != std::string::npos);
}

static RunConfig random_config(Rng& rng) {
    RunConfig cfg;
    cfg.seed = static_cast<std::int64_t>(rng.uniform_int(1000));
    cfg.batch_size = static_cast<int>(rng.uniform_int(40)) - 4;  // may be invalid
    cfg.epochs = static_cast<int>(rng.uniform_int(60)) - 4;
    cfg.learning_rate = rng.uniform(-0.001, 0.01);
    cfg.optimizer = static_cast<Optimizer>(rng.uniform_int(4));
    cfg.loss = static_cast<Loss>(rng.uniform_int(5));
    cfg.plateau.factor = rng.uniform(-0.2, 1.4);
    cfg.plateau.patience = static_cast<int>(rng.uniform_int(8)) - 1;
    cfg.early_stop_patience = static_cast<int>(rng.uniform_int(14)) - 1;
    cfg.model = static_cast<Architecture>(rng.uniform_int(3));
    cfg.width_scale = rng.uniform(-0.2, 1.3);
    return cfg;
}

static bool config_invariants_hold(const RunConfig& c) {
    return c.batch_size >= 1 && c.epochs >= 1 && c.learning_rate > 0.0 &&
           c.plateau.factor > 0.0 && c.plateau.factor < 1.0 && c.plateau.patience >= 1 &&
           c.early_stop_patience >= 1 && c.width_scale > 0.0 && c.width_scale <= 1.0;
}

TEST_CASE("validate_config is empty exactly on invariant-satisfying configs") {
    Rng rng(2024);
    int valid_seen = 0, invalid_seen = 0;
    for (int i = 0; i < 500; ++i) {
        const RunConfig cfg = random_config(rng);
        const bool ok = config_invariants_hold(cfg);
        (ok ? valid_seen : invalid_seen)++;
        CHECK(validate_config(cfg).empty() == ok);
    }
    // the generator must actually exercise both sides
    CHECK(valid_seen > 10);
    CHECK(invalid_seen > 10);
}

TEST_CASE("config serialize/parse round trip") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        RunConfig cfg = random_config(rng);
        const RunConfig back = parse_config_text(serialize_config(cfg));
        CHECK(back == cfg);
    }
}

TEST_CASE("config parser rejects malformed input") {
    CHECK_THROWS_AS(parse_config_text("optimizer=warp9"), DataError);
    CHECK_THROWS_AS(parse_config_text("no_equals_here"), DataError);
    CHECK_THROWS_AS(parse_config_text("unknown_key=3"), DataError);
    CHECK_THROWS_AS(parse_config_text("learning_rate=abc"), DataError);
}

TEST_CASE("manifest round trip and counts") {
    testutil::TempDir dir("manifest");
    const auto manifest_path =
        write_synthetic_seg_dataset(dir.path / "seg", 12, 32, ArtifactKind::tissue_fold, 99);
    const auto m = load_manifest(manifest_path.string());
    REQUIRE(m.size() == 12);
    CHECK(m.counts_by_kind().at(ArtifactKind::tissue_fold) == 12);

    // serialize -> parse yields structurally equal entries
    const auto copy_path = dir.path / "copy.tsv";
    save_manifest(m, copy_path.string());
    const auto m2 = load_manifest(copy_path.string(), /*check_files=*/false);
    REQUIRE(m2.size() == m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(m2.entries[i].tile_id == m.entries[i].tile_id);
        CHECK(m2.entries[i].image_path == m.entries[i].image_path);
        CHECK(m2.entries[i].mask_path == m.entries[i].mask_path);
        CHECK(m2.entries[i].severity == m.entries[i].severity);
        CHECK(m2.entries[i].artifact_kind == m.entries[i].artifact_kind);
    }
}

TEST_CASE("manifest: empty file loads as zero entries") {
    testutil::TempDir dir("manifest_empty");
    const auto p = dir.path / "empty.tsv";
    std::ofstream(p.string()).close();
    const auto m = load_manifest(p.string());
    CHECK(m.size() == 0);
}

TEST_CASE("manifest: malformed record cites the line") {
    testutil::TempDir dir("manifest_bad");
    const auto p = dir.path / "bad.tsv";
    {
        std::ofstream out(p.string());
        out << "t0\timg.png\t-\t-\ttissue_fold\n";
        out << "t1\timg.png\t-\n";  // 3 fields
    }
    try {
        load_manifest(p.string(), /*check_files=*/false);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("manifest: duplicate ids and missing files are rejected") {
    testutil::TempDir dir("manifest_dup");
    const auto p = dir.path / "dup.tsv";
    {
        std::ofstream out(p.string());
        out << "t0\ta.png\t-\t-\t-\n";
        out << "t0\tb.png\t-\t-\t-\n";
    }
    CHECK_THROWS_AS(load_manifest(p.string(), false), DataError);

    const auto p2 = dir.path / "missing.tsv";
    {
        std::ofstream out(p2.string());
        out << "t0\tno_such.png\t-\t-\t-\n";
    }
    try {
        load_manifest(p2.string());
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("no_such.png") != std::string::npos);
    }
}
