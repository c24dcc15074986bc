#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sitebias/commands.hpp"
#include "sitebias/errors.hpp"
#include "support.hpp"

using namespace sitebias;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "sitebias");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

json read(const fs::path& p) {
    std::ifstream f(p);
    return json::parse(f);
}

// Small enough that every command runs in well under a second.
const std::vector<std::string> kQuick = {"--folds",       "3", "--probe-hidden", "8", "--probe-epochs",
                                         "3",             "--epochs", "1", "--proj-hidden", "8",
                                         "--proj-out",    "4", "--workers", "1",
                                         "--cca-k",       "4", "--lambdas", "0,1"};

std::vector<std::string> with(std::vector<std::string> args, const std::vector<std::string>& extra = kQuick) {
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

// Fragment content that must match between two runs writing to different dirs.
json strip_timings_for_compare(const json& fragment) {
    json j = cli::strip_timings(fragment);
    j["config"].erase("out");
    return j;
}

fs::path make_cohort(const testing::TempDir& dir) {
    const auto r = invoke({"synth", "--out", (dir / "data").string(), "--synth-patches-per-wsi", "5"});
    REQUIRE(r.code == 0);
    return dir / "data" / "cohort.bin";
}

}  // namespace

TEST_CASE("synth") {
    testing::TempDir dir;
    const auto r = invoke({"synth", "--out", (dir / "s").string()});
    REQUIRE(r.code == 0);
    const Cohort c = load_binary(dir / "s" / "cohort.bin");
    CHECK(c.size() == 4000);
    CHECK(load_csv(dir / "s" / "cohort.csv") == c);
    CHECK(read(dir / "s" / "synth.json")["records"] == 4000);
}

TEST_CASE("exit codes and messages") {
    testing::TempDir dir;
    SUBCASE("missing input file") {
        const auto r = invoke({"audit", "--input", (dir / "nope.csv").string(), "--out", (dir / "o").string()});
        CHECK(r.code == 2);
        CHECK(r.err.find("error:") == 0);
    }
    SUBCASE("bad flag value") {
        const auto input = make_cohort(dir);
        const auto r = invoke({"audit", "--input", input.string(), "--out", (dir / "o").string(), "--folds", "abc"});
        CHECK(r.code != 0);
        CHECK(r.err.find("folds") != std::string::npos);
    }
    SUBCASE("unknown flag") {
        CHECK(invoke({"audit", "--no-such-flag", "1"}).code != 0);
        CHECK(invoke({}).code != 0);
    }
    SUBCASE("unknown reference hospital lists the valid names") {
        const auto input = make_cohort(dir);
        const auto r =
            invoke(with({"cca", "--input", input.string(), "--out", (dir / "o").string(), "--reference", "Mars"}));
        CHECK(r.code == 1);
        CHECK(r.err.find("H0") != std::string::npos);
        CHECK(r.err.find("H3") != std::string::npos);
    }
    SUBCASE("empty lambda grid") {
        const auto input = make_cohort(dir);
        const auto r = invoke({"sweep", "--input", input.string(), "--out", (dir / "o").string(), "--lambdas", ""});
        CHECK(r.code == 1);
        CHECK(r.err.find("lambdas") != std::string::npos);
    }
    SUBCASE("tsne cap above the limit") {
        const auto input = make_cohort(dir);
        const auto r = invoke({"tsne", "--input", input.string(), "--out", (dir / "o").string(), "--tsne-cap", "6000"});
        CHECK(r.code == 1);
    }
}

TEST_CASE("config files") {
    testing::TempDir dir;
    const auto input = make_cohort(dir);
    SUBCASE("unknown key is rejected with its line") {
        std::ofstream(dir / "bad.cfg") << "# comment\nfolds = 3\nfoldz = 4\n";
        const auto r = invoke({"audit", "--config", (dir / "bad.cfg").string(), "--input", input.string()});
        CHECK(r.code == 1);
        CHECK(r.err.find("foldz") != std::string::npos);
        CHECK(r.err.find("3") != std::string::npos);
    }
    SUBCASE("flags override the file") {
        std::ofstream(dir / "run.cfg") << "folds = 4\nprobe_epochs = 2\nprobe_hidden = 4\nout = " << (dir / "wrong").string()
                                       << "\n";
        const auto r = invoke({"audit", "--config", (dir / "run.cfg").string(), "--input", input.string(), "--out",
                               (dir / "right").string(), "--folds", "3"});
        REQUIRE(r.code == 0);
        CHECK(!fs::exists(dir / "wrong"));
        const json j = read(dir / "right" / "audit.json");
        CHECK(j["config"]["folds"] == "3");
        CHECK(j["config"]["probe_epochs"] == "2");
        CHECK(j["reports"][0]["folds"].size() == 3);
    }
}

TEST_CASE("pipeline commands and report") {
    testing::TempDir dir;
    const auto input = make_cohort(dir);
    const std::string out = (dir / "run").string();

    REQUIRE(invoke(with({"audit", "--input", input.string(), "--out", out})).code == 0);
    REQUIRE(invoke(with({"debias", "--input", input.string(), "--out", out})).code == 0);
    REQUIRE(invoke(with({"cca", "--input", input.string(), "--out", out})).code == 0);
    REQUIRE(invoke(with({"sweep", "--input", input.string(), "--out", out})).code == 0);

    for (const char* f : {"audit.json", "debias.json", "cca.json", "sweep.json", "sweep.csv", "folds.csv",
                          "checkpoints/fold0.gdm", "checkpoints/fold2_history.csv", "cca/fold1.gcc"})
        CHECK_MESSAGE(fs::exists(fs::path(out) / f), f);

    SUBCASE("outputs stay inside --out") {
        std::set<std::string> top;
        for (const auto& e : fs::directory_iterator(dir.path())) top.insert(e.path().filename().string());
        CHECK(top == std::set<std::string>{"data", "run"});
    }
    SUBCASE("tsne from a checkpoint") {
        const auto r = invoke({"tsne", "--input", input.string(), "--out", out, "--checkpoint",
                               out + "/checkpoints/fold0.gdm", "--tsne-iterations", "250", "--tsne-perplexity", "10",
                               "--tsne-cap", "120"});
        REQUIRE(r.code == 0);
        const json j = read(fs::path(out) / "tsne.json");
        CHECK(j["embedding"]["source"] == "checkpoint");
        CHECK(j["embedding"]["points"] == 120);
    }
    SUBCASE("merged report") {
        const auto r = invoke({"report", out + "/audit.json", out + "/debias.json", out + "/cca.json",
                               out + "/sweep.json", "--out", out});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const json j = read(fs::path(out) / "report.json");
        CHECK(j["reports"].size() == 6);
        CHECK(j.contains("sweep"));
        std::ifstream t(fs::path(out) / "report.txt");
        const std::string text((std::istreambuf_iterator<char>(t)), {});
        CHECK(text.find("MLP") != std::string::npos);
        CHECK(text.find("Adversarial (λ=1)") != std::string::npos);
        CHECK(text.find("CCA") != std::string::npos);
        CHECK(text.find("Lambda sweep") != std::string::npos);
    }
    SUBCASE("conflicting configs are refused") {
        const std::string other = (dir / "other").string();
        REQUIRE(invoke(with({"audit", "--input", input.string(), "--out", other, "--seed", "9"})).code == 0);
        const auto r = invoke({"report", out + "/debias.json", other + "/audit.json", "--out", out});
        CHECK(r.code == 1);
        CHECK(r.err.find("seed") != std::string::npos);
    }
    SUBCASE("re-running from an embedded config is exact") {
        const std::string again = (dir / "again").string();
        REQUIRE(invoke({"debias", "--config", out + "/debias.json", "--out", again}).code == 0);
        json a = strip_timings_for_compare(read(fs::path(out) / "debias.json"));
        json b = strip_timings_for_compare(read(fs::path(again) / "debias.json"));
        CHECK(a == b);
    }
}
