#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>
#include <fstream>
#include <string>

#include "helpers.hpp"
#include "wsiqc/core/manifest.hpp"
#include "wsiqc/io/image_io.hpp"

// Exercises the installed binary: subcommand wiring and exit codes.
// 0 success, 1 usage error, 2 data error (3 = divergence, raised from the
// library and mapped in main, covered by the train_segmenter unit test).

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + WSIQC_CLI_PATH + "\" " + args +
                            " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("cli: --help succeeds") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("ingest --help") == 0);
}

TEST_CASE("cli: usage errors exit with code 1") {
    CHECK(run_cli("") == 1);                       // missing subcommand
    CHECK(run_cli("no-such-subcommand") == 1);
    CHECK(run_cli("split --out /tmp/x") == 1);     // missing required --manifest
    testutil::TempDir dir("cliusage");
    CHECK(run_cli("run --image a.png --out " + dir.path.string()) == 1);  // no models
}

TEST_CASE("cli: data errors exit with code 2") {
    testutil::TempDir dir("clidata");
    CHECK(run_cli("split --manifest /nonexistent/m.tsv --counts 1,1,1 --out " +
                  dir.path.string()) == 2);
    // malformed manifest line
    const auto bad = dir.path / "bad.tsv";
    std::ofstream(bad) << "only\tthree\tfields\n";
    CHECK(run_cli("split --manifest " + bad.string() + " --counts 1,0,0 --out " +
                  dir.path.string()) == 2);
}

TEST_CASE("cli: a full synthetic ingest+split round succeeds") {
    testutil::TempDir dir("cliok");
    CHECK(run_cli("ingest --synth-seg 6 --side 32 --seed 3 --out " +
                  (dir.path / "data").string()) == 0);
    CHECK(run_cli("split --manifest " + (dir.path / "data" / "manifest.tsv").string() +
                  " --counts 4,1,1 --seed 1 --out " + (dir.path / "split").string()) == 0);
    CHECK(fs::exists(dir.path / "split" / "split.tsv"));
}

TEST_CASE("cli: ingest balances severity classes with --oversample") {
    testutil::TempDir dir("clios");
    // unbalanced tree: 3 low, 1 mid, 2 high
    auto put = [&](const std::string& sev, int i) {
        const auto d = dir.path / "imgs" / sev;
        fs::create_directories(d);
        wsiqc::save_image(wsiqc::ImageBuffer(8, 8, 3, 0.5),
                          (d / ("t" + std::to_string(i) + ".png")).string());
    };
    put("low", 0); put("low", 1); put("low", 2);
    put("mid", 0);
    put("high", 0); put("high", 1);

    CHECK(run_cli("ingest --images " + (dir.path / "imgs").string() +
                  " --severity-from-dirs --oversample --out " +
                  (dir.path / "out").string()) == 0);
    const auto m = wsiqc::load_manifest((dir.path / "out" / "manifest.tsv").string());
    const auto counts = m.counts_by_severity();
    CHECK(counts.at(wsiqc::SeverityLabel::low) == 3);
    CHECK(counts.at(wsiqc::SeverityLabel::mid) == 3);
    CHECK(counts.at(wsiqc::SeverityLabel::high) == 3);
}
