#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "ssfilter/checkpoint.hpp"
#include "ssfilter/filtering.hpp"
#include "ssfilter/metrics.hpp"
#include "ssfilter/toy_corpus.hpp"
#include "test_support.hpp"

using namespace ssf;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

int data_rows(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) n += !line.empty() && line[0] != '#';
    return n;
}

// Small corpus and a trained checkpoint shared by the tests below.
struct Trained {
    ssf::testing::TempDir dir{"cli"};
    std::filesystem::path corpus, config, ckpt;

    Trained() {
        ToyCorpusOptions opts;
        opts.categories = {"disc", "ring"};
        opts.image_size = 32;
        opts.train_good = 10;
        opts.test_good = 2;
        opts.test_defect_per_type = 1;
        corpus = dir / "corpus";
        generate_toy_corpus(corpus, opts);
        auto cfg = ssf::testing::small_pipeline_config();
        cfg.total_iterations = 4;
        cfg.cold_start_iterations = 2;
        config = dir / "small.cfg";
        std::ofstream(config) << "# test settings\n" << cfg.echo();
        const auto r = run({"-q", "train", "-c", config.string(), "--dataset", corpus.string(), "--seed", "17", "-o",
                            (dir / "train").string()});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        ckpt = dir / "train" / "final.ckpt";
    }
};

Trained& trained() {
    static Trained t;
    return t;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"filter", "--kappa1", "3"}).code == 2);
    const auto missing = run({"train", "--set", "total_iterations=5"});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("dataset") != std::string::npos);
    const auto unknown = run({"train", "--set", "no_such_key=1", "--dataset", "x"});
    CHECK(unknown.code == 2);
    CHECK(unknown.err.find("no_such_key") != std::string::npos);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("runtime failures exit with code 1") {
    ssf::testing::TempDir dir("cli_fail");
    const auto r = run({"-q", "eval", "--checkpoint", (dir / "none.ckpt").string(), "--dataset",
                        (dir / "none").string(), "-o", (dir / "out").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("none") != std::string::npos);
}

TEST_CASE("train writes one loss row per iteration and records the seed") {
    auto& t = trained();
    CHECK(data_rows(t.dir / "train" / "loss_log.tsv") == 1 + 4);
    const auto header = read_checkpoint_header(t.ckpt);
    CHECK(header.config_text.find("seed=17\n") != std::string::npos);
    CHECK(header.iteration == 4);
    std::ifstream echo(t.dir / "train" / "config.txt");
    std::stringstream ss;
    ss << echo.rdbuf();
    CHECK(ss.str() == header.config_text);
}

TEST_CASE("filter uses default kappas and writes a line-per-path kept list") {
    auto& t = trained();
    const auto out = t.dir / "filter";
    const auto r = run({"-q", "filter", "--checkpoint", t.ckpt.string(), "--dataset", t.corpus.string(), "-o",
                        out.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto m = read_filter_manifest(out / "filter_manifest.tsv");
    CHECK(m.kappa1 == 20);
    CHECK(m.kappa2 == 5);
    CHECK(m.seed == 17);
    CHECK(m.records.size() == 20);
    std::ifstream kept(out / "kept.txt");
    int lines = 0;
    for (std::string l; std::getline(kept, l); ++lines) CHECK(std::filesystem::exists(l));
    CHECK(lines == static_cast<int>(m.kept_paths().size()));
    CHECK(std::filesystem::exists(out / "command.txt"));
    CHECK(std::filesystem::exists(out / "filter_report.tsv"));

    // same inputs, same bytes
    const auto again = t.dir / "filter2";
    run({"-q", "filter", "--checkpoint", t.ckpt.string(), "--dataset", t.corpus.string(), "-o", again.string()});
    std::ifstream a(out / "filter_manifest.tsv"), b(again / "filter_manifest.tsv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
}

TEST_CASE("kappa2 >= kappa1 warns and drops everything") {
    auto& t = trained();
    const auto out = t.dir / "filter_all";
    const auto r = run({"-q", "filter", "--checkpoint", t.ckpt.string(), "--dataset", t.corpus.string(), "--kappa1",
                        "2", "--kappa2", "2", "-o", out.string()});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("WARNING") != std::string::npos);
    CHECK(read_filter_manifest(out / "filter_manifest.tsv").kept_paths().empty());
}

TEST_CASE("eval from a checkpoint reports each category") {
    auto& t = trained();
    const auto out = t.dir / "eval";
    const auto r = run({"-q", "eval", "--checkpoint", t.ckpt.string(), "--dataset", t.corpus.string(), "-o",
                        out.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    std::ifstream in(out / "eval_report.tsv");
    std::string header;
    std::getline(in, header);
    CHECK(header.find("fpr_limit=0.3") != std::string::npos);
    const auto rep = read_eval_report(out / "eval_report.tsv");
    CHECK(rep.categories.size() == 2);
    CHECK(std::filesystem::exists(out / "eval_bars.svg"));
}

TEST_CASE("eval of a perfect scores table is 1/1") {
    ssf::testing::TempDir dir("cli_perfect");
    Image map(4, 4, 1, 0.0f), mask(4, 4, 1, 0.0f);
    map.at(2, 1) = 1.0f;
    mask.at(2, 1) = 1.0f;
    write_png(dir / "map.png", map);
    write_png(dir / "mask.png", mask);
    write_png(dir / "zero.png", Image(4, 4, 1, 0.0f));
    {
        std::ofstream s(dir / "scores.tsv");
        s << "path\tcategory\tlabel\tscore\tmap\tmask\n";
        s << "a\tc\t1\t0.9\tmap.png\tmask.png\n";
        s << "b\tc\t0\t0.1\tzero.png\tzero.png\n";
        s << "d\tk\t1\t0.8\tmap.png\tmask.png\n";
        s << "e\tk\t0\t0.2\tzero.png\tzero.png\n";
    }
    const auto r = run({"eval", "--scores", (dir / "scores.tsv").string(), "-o", (dir / "out").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto rep = read_eval_report(dir / "out" / "eval_report.tsv");
    REQUIRE(rep.categories.size() == 2);
    for (const auto& c : rep.categories) {
        CHECK(c.i_auroc == doctest::Approx(1.0));
        CHECK(c.p_aupro == doctest::Approx(1.0));
    }
}

TEST_CASE("inject-noise, score, dump-bank and synth-corpus") {
    auto& t = trained();
    const auto manifest = t.dir / "noisy.tsv";
    auto r = run({"inject-noise", "--dataset", t.corpus.string(), "--alpha", "0.1", "--seed", "4", "-o",
                  manifest.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(read_manifest(manifest).realized_noise_rate() == doctest::Approx(2.0 / 22.0));
    CHECK(run({"inject-noise", "--dataset", t.corpus.string(), "--alpha", "0.9", "-o", manifest.string()}).code == 1);

    r = run({"-q", "score", "-c", t.config.string(), "--dataset", t.corpus.string(), "--split", "test", "-o",
             (t.dir / "score").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(data_rows(t.dir / "score" / "scores.tsv") == 2 * 2 + 2 * 3);

    r = run({"dump-bank", "--checkpoint", t.ckpt.string(), "-o", (t.dir / "bank").string()});
    CHECK(r.code == 0);
    CHECK(std::filesystem::exists(t.dir / "bank" / "manifest.tsv"));

    r = run({"synth-corpus", "--categories", "tile", "--size", "32", "--train-good", "2", "--test-good", "1",
             "--test-defect", "1", "-o", (t.dir / "synth").string()});
    CHECK(r.code == 0);
    CHECK(std::filesystem::exists(t.dir / "synth" / "tile" / "train" / "good"));
}
