#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "retomaton/cli.hpp"
#include "retomaton/datastore.hpp"
#include "retomaton/gold.hpp"
#include "test_util.hpp"

using namespace retomaton;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("rt_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string write_spec(const TempDir& dir) {
    GoldAutomatonSpec spec;
    spec.num_states = 2;
    spec.vocab_size = 3;
    spec.dim = 4;
    spec.emission_noise = 0.25;
    spec.seed = 99;
    spec.transitions = {
        {{0, 1, 0.7}, {2, 0, 0.3}},
        {{1, 0, 0.5}, {2, 1, 0.5}},
    };
    std::string path = dir.file("spec.json");
    save_gold_spec(spec, path);
    return path;
}

std::vector<uint8_t> slurp(const std::string& path) { return read_file_bytes(path); }

}  // namespace

TEST_CASE("missing required flags exit with the usage code") {
    CHECK(cli_main({"build"}) == 1);
    CHECK(cli_main({"cluster", "--ds", "x.rds"}) == 1);
    CHECK(cli_main({"definitely-not-a-subcommand"}) == 1);
    CHECK(cli_main({}) == 1);
}

TEST_CASE("data errors exit with code 2") {
    TempDir dir;
    CHECK(cli_main({"build", "--trace", dir.file("missing.rtrace"), "--out",
                    dir.file("o.rds")}) == 2);
    std::ofstream(dir.file("junk.rtrace")) << "not a trace";
    CHECK(cli_main({"build", "--trace", dir.file("junk.rtrace"), "--out",
                    dir.file("o.rds")}) == 2);
}

TEST_CASE("build reports the mini corpus transition count") {
    TempDir dir;
    std::string trace = dir.file("mini.rtrace");
    write_trace(testutil::mini_trace(), trace);
    CHECK(cli_main({"build", "--trace", trace, "--out", dir.file("mini.rds")}) == 0);
    Datastore ds = load_datastore(dir.file("mini.rds"));
    CHECK(ds.size() == 5);
    CHECK(ds.num_valid() == 3);
}

TEST_CASE("full pipeline runs and artifacts are reusable") {
    TempDir dir;
    std::string spec = write_spec(dir);
    CHECK(cli_main({"gen", "--spec", spec, "--sequences", "30", "--len", "12", "--out",
                    dir.file("train.rtrace"), "--begin", "0", "--end", "24"}) == 0);
    CHECK(cli_main({"gen", "--spec", spec, "--sequences", "30", "--len", "12", "--out",
                    dir.file("held.rtrace"), "--begin", "24", "--end", "30"}) == 0);
    CHECK(cli_main({"build", "--trace", dir.file("train.rtrace"), "--out",
                    dir.file("ds.rds")}) == 0);
    CHECK(cli_main({"cluster", "--ds", dir.file("ds.rds"), "--clusters", "5", "--seed", "3",
                    "--out", dir.file("ds_c.rds"), "--model-out", dir.file("m.rkm")}) == 0);
    CHECK(cli_main({"index", "--ds", dir.file("ds_c.rds"), "--kind", "flat", "--out",
                    dir.file("i.ridx")}) == 0);
    CHECK(cli_main({"wfa", "--ds", dir.file("ds_c.rds"), "--out", dir.file("a.rwfa")}) == 0);
    CHECK(cli_main({"decode", "--ds", dir.file("ds_c.rds"), "--model", dir.file("m.rkm"),
                    "--index", dir.file("i.ridx"), "--prompt", "0 1", "--max-new-tokens", "4",
                    "--trace-format", "jsonl", "--trace-out", dir.file("t.jsonl")}) == 0);
    CHECK(fs::exists(dir.file("t.jsonl")));
    CHECK(cli_main({"eval", "--ds", dir.file("ds_c.rds"), "--model", dir.file("m.rkm"),
                    "--index", dir.file("i.ridx"), "--heldout", dir.file("held.rtrace"),
                    "--strategy", "automaton", "--gold-spec", spec, "--gold-sequences", "30",
                    "--gold-len", "12", "--gold-begin", "24", "--gold-end", "30", "--csv",
                    dir.file("eval.csv")}) == 0);
    std::vector<uint8_t> csv = slurp(dir.file("eval.csv"));
    std::string text(csv.begin(), csv.end());
    CHECK(text.find("datastore,strategy,k,lambda,temp,clusters,ppl,nll,kld") == 0);
    CHECK(text.find("automaton") != std::string::npos);
}

TEST_CASE("mismatched gold subrange is a data error") {
    TempDir dir;
    std::string spec = write_spec(dir);
    REQUIRE(cli_main({"gen", "--spec", spec, "--sequences", "10", "--len", "6", "--out",
                      dir.file("h.rtrace"), "--begin", "5", "--end", "10"}) == 0);
    REQUIRE(cli_main({"build", "--trace", dir.file("h.rtrace"), "--out",
                      dir.file("ds.rds")}) == 0);
    REQUIRE(cli_main({"cluster", "--ds", dir.file("ds.rds"), "--clusters", "3", "--out",
                      dir.file("ds_c.rds"), "--model-out", dir.file("m.rkm")}) == 0);
    REQUIRE(cli_main({"index", "--ds", dir.file("ds_c.rds"), "--out",
                      dir.file("i.ridx")}) == 0);
    CHECK(cli_main({"eval", "--ds", dir.file("ds_c.rds"), "--model", dir.file("m.rkm"),
                    "--index", dir.file("i.ridx"), "--heldout", dir.file("h.rtrace"),
                    "--gold-spec", spec, "--gold-sequences", "10", "--gold-len", "6",
                    "--gold-begin", "0", "--gold-end", "5"}) == 2);
}

TEST_CASE("sweep over the reference grid writes 60 rows") {
    TempDir dir;
    std::string spec = write_spec(dir);
    REQUIRE(cli_main({"gen", "--spec", spec, "--sequences", "12", "--len", "8", "--out",
                      dir.file("tr.rtrace"), "--end", "10"}) == 0);
    REQUIRE(cli_main({"gen", "--spec", spec, "--sequences", "12", "--len", "8", "--out",
                      dir.file("he.rtrace"), "--begin", "10"}) == 0);
    REQUIRE(cli_main({"build", "--trace", dir.file("tr.rtrace"), "--out",
                      dir.file("ds.rds")}) == 0);
    REQUIRE(cli_main({"cluster", "--ds", dir.file("ds.rds"), "--clusters", "4", "--out",
                      dir.file("ds_c.rds"), "--model-out", dir.file("m.rkm")}) == 0);
    REQUIRE(cli_main({"index", "--ds", dir.file("ds_c.rds"), "--out",
                      dir.file("i.ridx")}) == 0);
    std::ofstream(dir.file("grid.json"))
        << R"({"k": [1024, 512, 256], "lambda": [0.1, 0.15, 0.2, 0.25],)"
        << R"( "temperature": [1.0, 0.95, 0.9, 0.85, 0.8]})";
    CHECK(cli_main({"sweep", "--ds", dir.file("ds_c.rds"), "--model", dir.file("m.rkm"),
                    "--index", dir.file("i.ridx"), "--heldout", dir.file("he.rtrace"),
                    "--strategy", "automaton", "--grid", dir.file("grid.json"), "--csv",
                    dir.file("sweep.csv")}) == 0);
    std::vector<uint8_t> csv = slurp(dir.file("sweep.csv"));
    std::string text(csv.begin(), csv.end());
    size_t lines = std::count(text.begin(), text.end(), '\n');
    CHECK(lines == 61);  // header + 60 grid rows
}

TEST_CASE("build commands are idempotent at the byte level") {
    TempDir dir;
    std::string spec = write_spec(dir);
    auto run_all = [&](const std::string& suffix) {
        REQUIRE(cli_main({"gen", "--spec", spec, "--sequences", "15", "--len", "10", "--out",
                          dir.file("t" + suffix)}) == 0);
        REQUIRE(cli_main({"build", "--trace", dir.file("t" + suffix), "--out",
                          dir.file("d" + suffix)}) == 0);
        REQUIRE(cli_main({"cluster", "--ds", dir.file("d" + suffix), "--clusters", "4",
                          "--seed", "5", "--out", dir.file("dc" + suffix), "--model-out",
                          dir.file("m" + suffix)}) == 0);
        REQUIRE(cli_main({"index", "--ds", dir.file("dc" + suffix), "--kind", "ivf",
                          "--nlist", "4", "--nprobe", "2", "--out",
                          dir.file("i" + suffix)}) == 0);
    };
    run_all("1");
    run_all("2");
    for (const char* f : {"t", "d", "dc", "m", "i"}) {
        CHECK(slurp(dir.file(std::string(f) + "1")) == slurp(dir.file(std::string(f) + "2")));
    }
}

TEST_CASE("cluster count defaults to the square-root heuristic") {
    TempDir dir;
    std::string trace = dir.file("r.rtrace");
    write_trace(testutil::random_trace(10, 11, 3, 4, 5), trace);
    REQUIRE(cli_main({"build", "--trace", trace, "--out", dir.file("ds.rds")}) == 0);
    REQUIRE(cli_main({"cluster", "--ds", dir.file("ds.rds"), "--out", dir.file("dc.rds"),
                      "--model-out", dir.file("m.rkm")}) == 0);
    ClusterModel m = load_cluster_model(dir.file("m.rkm"));
    CHECK(m.k == 10);  // ceil(sqrt(100))
}
