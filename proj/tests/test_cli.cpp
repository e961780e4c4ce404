#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "capsrec/config.hpp"
#include "capsrec/data.hpp"
#include "capsrec/model.hpp"

namespace fs = std::filesystem;
using namespace capsrec;

namespace {

std::string cli_binary() {
    const char* bin = std::getenv("CAPSREC_CLI");
    return bin ? bin : "";
}

// Runs the installed binary, capturing stdout; returns the exit code.
int run_cli(const std::string& args, const fs::path& out_file) {
    std::string cmd = cli_binary() + " " + args + " > " + out_file.string() + " 2> " +
                      out_file.string() + ".err";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

int count_lines(const std::string& s) {
    int n = 0;
    for (char c : s)
        if (c == '\n') ++n;
    return n;
}

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "capsrec_cli" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Mirrors the override flags handed to `generate`/`train` in these tests.
const char* kSmallGen =
    "--n_accounts 20 --n_items 40 --sequences_per_account 4 --seq_len_min 4 "
    "--seq_len_max 8 --seed 11";
const char* kSmallModel = "--d1 4 --d2 4 --alpha 2 --layers 1 --theta 2 --seed 11";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("the binary under test is reachable") {
    REQUIRE_FALSE(cli_binary().empty());
    fs::path dir = fresh_dir("help");
    CHECK(run_cli("--help", dir / "out.txt") == 0);
    std::string out = slurp(dir / "out.txt");
    for (const char* sub : {"generate", "train", "evaluate", "inspect", "bench"})
        CHECK(out.find(sub) != std::string::npos);
}

TEST_CASE("generate is reproducible and echoes its configuration") {
    fs::path dir = fresh_dir("generate");
    fs::path a = dir / "a.tsv", b = dir / "b.tsv", c = dir / "c.tsv";
    CHECK(run_cli(std::string("generate ") + kSmallGen + " --out " + a.string(),
                  dir / "out_a.txt") == 0);
    CHECK(run_cli(std::string("generate ") + kSmallGen + " --out " + b.string(),
                  dir / "out_b.txt") == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a.string() + ".meta") == slurp(b.string() + ".meta"));
    CHECK_FALSE(slurp(a).empty());

    // Same settings, different seed: different interactions.
    CHECK(run_cli("generate --n_accounts 20 --n_items 40 --sequences_per_account 4 "
                  "--seq_len_min 4 --seq_len_max 8 --seed 12 --out " +
                      c.string(),
                  dir / "out_c.txt") == 0);
    CHECK(slurp(a) != slurp(c));

    std::string meta = slurp(a.string() + ".meta");
    for (const char* key : {"seed=", "n_items=", "n_accounts=", "items=", "accounts="})
        CHECK(meta.find(key) != std::string::npos);

    // The emitted file loads back with the documented defaults.
    Dataset d = load_dataset(a.string(), {.session_gap = 1000, .min_seq_len = 2});
    CHECK(d.n == 20);
    CHECK(d.m == 40);
    CHECK(d.has_labels());
}

TEST_CASE("train with zero epochs writes a checkpoint equal to initialization") {
    fs::path dir = fresh_dir("train0");
    fs::path data = dir / "d.tsv";
    REQUIRE(run_cli(std::string("generate ") + kSmallGen + " --out " + data.string(),
                    dir / "gen.txt") == 0);
    fs::path out = dir / "run";
    REQUIRE(run_cli("train --data " + data.string() + " --out " + out.string() + " " +
                        kSmallModel + " --epochs 0",
                    dir / "train.txt") == 0);
    for (const char* f : {"checkpoint.txt", "metrics.csv", "config.txt", "MANIFEST.json"})
        CHECK(fs::exists(out / f));

    // Rebuild the same initial model in process and compare byte for byte.
    RunConfig rc;
    for (const char* kv : {"d1=4", "d2=4", "alpha=2", "layers=1", "theta=2", "seed=11"})
        rc.apply_assignment(kv);
    rc.model.epochs = 0;
    Dataset d = load_dataset(data.string(),
                             {.session_gap = rc.session_gap, .min_seq_len = rc.min_seq_len});
    Dataset parts = split_train_test(d, rc.train_fraction, rc.model.seed);
    Model m(parts, rc.model);
    std::ostringstream want;
    m.save(want);
    CHECK(slurp(out / "checkpoint.txt") == want.str());

    // metrics.csv is just the header when nothing trained.
    CHECK(count_lines(slurp(out / "metrics.csv")) == 1);
}

TEST_CASE("a short training run produces complete artifacts quickly") {
    fs::path dir = fresh_dir("train");
    fs::path data = dir / "d.tsv";
    REQUIRE(run_cli(std::string("generate ") + kSmallGen + " --out " + data.string(),
                    dir / "gen.txt") == 0);
    auto t0 = std::chrono::steady_clock::now();
    fs::path out = dir / "run";
    REQUIRE(run_cli("train --data " + data.string() + " --out " + out.string() + " " +
                        kSmallModel + " --epochs 2",
                    dir / "train.txt") == 0);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 60.0);

    std::string csv = slurp(out / "metrics.csv");
    CHECK(count_lines(csv) == 3);  // header + one row per epoch
    CHECK(csv.rfind(kMetricsCsvHeader, 0) == 0);
    std::string stdout_text = slurp(dir / "train.txt");
    CHECK(stdout_text.find("recall@5") != std::string::npos);
    std::string manifest = slurp(out / "MANIFEST.json");
    for (const char* f : {"checkpoint.txt", "metrics.csv", "config.txt"})
        CHECK(manifest.find(f) != std::string::npos);
    CHECK(manifest.find("\"command\"") != std::string::npos);

    SUBCASE("identical seeds reproduce artifacts byte for byte") {
        fs::path out2 = dir / "run2";
        REQUIRE(run_cli("train --data " + data.string() + " --out " + out2.string() + " " +
                            kSmallModel + " --epochs 2",
                        dir / "train2.txt") == 0);
        CHECK(slurp(out / "checkpoint.txt") == slurp(out2 / "checkpoint.txt"));
        CHECK(slurp(out / "metrics.csv") == slurp(out2 / "metrics.csv"));
        CHECK(slurp(out / "config.txt") == slurp(out2 / "config.txt"));
    }

    SUBCASE("the contrastive ablation matches an explicit zero weight") {
        fs::path oa = dir / "ablate_cl", og = dir / "gamma0";
        REQUIRE(run_cli("train --data " + data.string() + " --out " + oa.string() + " " +
                            kSmallModel + " --epochs 2 --ablate cl",
                        dir / "ta.txt") == 0);
        REQUIRE(run_cli("train --data " + data.string() + " --out " + og.string() + " " +
                            kSmallModel + " --epochs 2 --set gamma=0",
                        dir / "tg.txt") == 0);
        // Configs differ (the switch vs the weight); learned parameters must not.
        std::string ca = slurp(oa / "checkpoint.txt"), cg = slurp(og / "checkpoint.txt");
        REQUIRE(ca.find("[param]") != std::string::npos);
        CHECK(ca.substr(ca.find("[param]")) == cg.substr(cg.find("[param]")));
        CHECK(slurp(oa / "metrics.csv") == slurp(og / "metrics.csv"));
        // The alignment loss column is still populated (nonzero) in both.
        std::string csv_a = slurp(oa / "metrics.csv");
        std::istringstream rows(csv_a);
        std::string line;
        std::getline(rows, line);  // header
        std::getline(rows, line);
        std::istringstream cells(line);
        std::string epoch, loss_s, loss_c;
        std::getline(cells, epoch, ',');
        std::getline(cells, loss_s, ',');
        std::getline(cells, loss_c, ',');
        CHECK(std::stod(loss_c) > 0.0);
    }

    SUBCASE("evaluate reuses the checkpoint deterministically") {
        fs::path e1 = dir / "eval1.txt", e2 = dir / "eval2.txt";
        REQUIRE(run_cli("evaluate --checkpoint " + (out / "checkpoint.txt").string() +
                            " --data " + data.string(),
                        e1) == 0);
        REQUIRE(run_cli("evaluate --checkpoint " + (out / "checkpoint.txt").string() +
                            " --data " + data.string(),
                        e2) == 0);
        CHECK(slurp(e1) == slurp(e2));
        CHECK(slurp(e1).find("recall@20") != std::string::npos);

        REQUIRE(run_cli("evaluate --baseline --checkpoint " +
                            (out / "checkpoint.txt").string() + " --data " + data.string(),
                        dir / "base.txt") == 0);
        CHECK(slurp(dir / "base.txt").find("recall@20") != std::string::npos);

        REQUIRE(run_cli("evaluate --attribution --checkpoint " +
                            (out / "checkpoint.txt").string() + " --data " + data.string(),
                        dir / "attr.txt") == 0);
        CHECK(slurp(dir / "attr.txt").find("attribution") != std::string::npos);
    }

    SUBCASE("evaluate rejects a dataset with a different vocabulary") {
        fs::path other = dir / "other.tsv";
        REQUIRE(run_cli("generate --n_accounts 20 --n_items 80 --seed 11 --out " +
                            other.string(),
                        dir / "gen2.txt") == 0);
        CHECK(run_cli("evaluate --checkpoint " + (out / "checkpoint.txt").string() +
                          " --data " + other.string(),
                      dir / "bad_eval.txt") == 3);
    }

    SUBCASE("inspect dumps the four views next to a manifest") {
        fs::path iout = dir / "inspect";
        REQUIRE(run_cli("inspect --checkpoint " + (out / "checkpoint.txt").string() +
                            " --data " + data.string() + " --out " + iout.string(),
                        dir / "inspect.txt") == 0);
        for (const char* f : {"graph.tsv", "correlations.tsv", "coupling.tsv",
                              "affinity.tsv", "MANIFEST.json"})
            CHECK(fs::exists(iout / f));
        std::string graph = slurp(iout / "graph.tsv");
        CHECK(graph.rfind("src\tdst\trelation", 0) == 0);
        CHECK(graph.find("precedes") != std::string::npos);
        CHECK(graph.find("interacts") != std::string::npos);
        std::string coupling = slurp(iout / "coupling.tsv");
        CHECK(count_lines(coupling) == 1 + 20 * 2);  // header + n * alpha rows
    }
}

TEST_CASE("usage and data errors map to distinct exit codes") {
    fs::path dir = fresh_dir("errors");
    // Unknown subcommand / missing required option -> usage error.
    CHECK(run_cli("frobnicate", dir / "u1.txt") == 2);
    CHECK(run_cli("train", dir / "u2.txt") == 2);
    // Unknown configuration key -> usage error.
    fs::path data = dir / "d.tsv";
    REQUIRE(run_cli(std::string("generate ") + kSmallGen + " --out " + data.string(),
                    dir / "gen.txt") == 0);
    CHECK(run_cli("train --data " + data.string() + " --out " + (dir / "o").string() +
                      " --set no_such_key=1",
                  dir / "u3.txt") == 2);
    CHECK(run_cli("train --data " + data.string() + " --out " + (dir / "o2").string() +
                      " --set d1=abc",
                  dir / "u4.txt") == 2);
    // Missing dataset -> data error.
    CHECK(run_cli("train --data " + (dir / "absent.tsv").string() + " --out " +
                      (dir / "o3").string(),
                  dir / "u5.txt") == 3);
}

TEST_CASE("grid training sweeps the requested axes into a CSV") {
    fs::path dir = fresh_dir("grid");
    fs::path data = dir / "d.tsv";
    REQUIRE(run_cli(std::string("generate ") + kSmallGen + " --out " + data.string(),
                    dir / "gen.txt") == 0);
    fs::path out = dir / "sweep";
    REQUIRE(run_cli("train --data " + data.string() + " --out " + out.string() + " " +
                        kSmallModel + " --epochs 1 --grid alpha=1,2 --grid gamma=0.5,0.9",
                    dir / "train.txt") == 0);
    std::string csv = slurp(out / "sweep.csv");
    CHECK(count_lines(csv) == 5);  // header + 2x2 cells
    CHECK(csv.rfind("alpha,gamma,", 0) == 0);
    CHECK(csv.find("recall@20") != std::string::npos);
    CHECK(csv.find("params") != std::string::npos);

    // Sweeping a non-model key is refused up front.
    CHECK(run_cli("train --data " + data.string() + " --out " + (dir / "s2").string() +
                      " --grid train_fraction=0.5,0.8",
                  dir / "bad.txt") == 2);
}

TEST_CASE("bench reports parameter counts and scaling fits") {
    fs::path dir = fresh_dir("bench");
    int rc = run_cli(
        "bench --d1 4 --d2 4 --alpha 2 --layers 1 --n_accounts 20 --n_items 60 "
        "--sequences_per_account 3 --seed 3 --out " +
            (dir / "o").string(),
        dir / "bench.txt");
    REQUIRE(rc == 0);
    std::string out = slurp(dir / "bench.txt");
    CHECK(out.find("parameters by group") != std::string::npos);
    CHECK(out.find("match") != std::string::npos);
    CHECK(out.find("epoch") != std::string::npos);
    CHECK(fs::exists(dir / "o" / "bench.txt"));
    CHECK(fs::exists(dir / "o" / "MANIFEST.json"));
}

TEST_CASE("the bundled sample dataset trains with stock settings") {
    const char* src = std::getenv("CAPSREC_SRC");
    REQUIRE(src != nullptr);
    fs::path toy = fs::path(src) / "data" / "toy.tsv";
    REQUIRE(fs::exists(toy));
    fs::path dir = fresh_dir("toy");
    auto t0 = std::chrono::steady_clock::now();
    REQUIRE(run_cli("train --data " + toy.string() + " --out " + (dir / "run").string(),
                    dir / "train.txt") == 0);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 60.0);
    CHECK(fs::exists(dir / "run" / "checkpoint.txt"));
}

}  // TEST_SUITE
