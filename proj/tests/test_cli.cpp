#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pgnn/cli.hpp"
#include "pgnn/data.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using pgnn::cli::run;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("pgnn_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

int simulate_into(const TempDir& dir, const std::string& leaf, int days, int sites,
                  std::uint64_t seed, double noise = 0.0) {
    return run({"simulate", "--out", dir / leaf, "--seed", std::to_string(seed), "--days",
                std::to_string(days), "--sites", std::to_string(sites), "--noise-sd",
                std::to_string(noise)});
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run({"simulate"}) == 2);                      // missing required --out
    CHECK(run({"bogus-subcommand"}) == 2);
    CHECK(run({}) == 2);
    TempDir dir("usage");
    CHECK(run({"train", "--data", dir / "missing.csv", "--out", dir / "out"}) == 2);
}

TEST_CASE("simulate is byte-deterministic and row counts add up") {
    TempDir dir("sim");
    REQUIRE(simulate_into(dir, "a", 365, 2, 11) == 0);
    REQUIRE(simulate_into(dir, "b", 365, 2, 11) == 0);
    CHECK(slurp(dir / "a/dataset.csv") == slurp(dir / "b/dataset.csv"));
    CHECK(slurp(dir / "a/provenance.json") == slurp(dir / "b/provenance.json"));

    // 730 data rows + 1 header line
    const auto text = slurp(dir / "a/dataset.csv");
    CHECK(std::count(text.begin(), text.end(), '\n') == 731);

    REQUIRE(simulate_into(dir, "c", 365, 2, 12) == 0);
    CHECK(slurp(dir / "a/dataset.csv") != slurp(dir / "c/dataset.csv"));

    // the emitted file parses back through the data module
    auto ds = pgnn::data::load_csv(dir / "a/dataset.csv");
    CHECK(ds.sites.size() == 2);
    CHECK(ds.total_rows() == 730);
}

TEST_CASE("config file values merge under explicit flags") {
    TempDir dir("cfg");
    {
        std::ofstream cfg(dir / "cfg.json");
        cfg << R"({"days": 14, "sites": 2, "seed": 5})";
    }
    REQUIRE(run({"simulate", "--out", dir / "fromcfg", "--config", dir / "cfg.json"}) == 0);
    auto ds = pgnn::data::load_csv(dir / "fromcfg/dataset.csv");
    CHECK(ds.total_rows() == 28);

    // an explicit flag wins over the config file
    REQUIRE(run({"simulate", "--out", dir / "override", "--config", dir / "cfg.json", "--days",
                 "7"}) == 0);
    auto ds2 = pgnn::data::load_csv(dir / "override/dataset.csv");
    CHECK(ds2.total_rows() == 14);

    // malformed config is a usage error
    {
        std::ofstream bad(dir / "bad.json");
        bad << "{nope";
    }
    CHECK(run({"simulate", "--out", dir / "broken", "--config", dir / "bad.json"}) == 2);
}

TEST_CASE("train handles the process model without any network training") {
    TempDir dir("train_po");
    REQUIRE(simulate_into(dir, "sim", 1095, 1, 3, 0.05) == 0);
    REQUIRE(run({"train", "--data", dir / "sim/dataset.csv", "--out", dir / "po", "--kind",
                 "process-only", "--seed", "1"}) == 0);
    const auto metrics = json::parse(slurp(dir / "po/metrics.json"));
    CHECK(metrics.at("rows").size() == 1);
    CHECK(metrics.at("rows").at(0).at("kind") == "process-only");
    CHECK(metrics.at("rows").at(0).at("mae_std").get<double>() == 0.0);
    CHECK(fs::exists(dir / "po/bundle.json"));
    CHECK(fs::exists(dir / "po/folds.csv"));
    CHECK(fs::exists(dir / "po/loss_traces.csv"));
}

TEST_CASE("train rerun with the same seed reproduces metrics byte for byte") {
    TempDir dir("train_det");
    REQUIRE(simulate_into(dir, "sim", 1095, 1, 9, 0.05) == 0);
    auto train_once = [&](const std::string& leaf) {
        return run({"train", "--data", dir / "sim/dataset.csv", "--out", dir / leaf, "--kind",
                    "naive", "--hidden", "5", "--epochs", "15", "--seed", "77"});
    };
    REQUIRE(train_once("r1") == 0);
    REQUIRE(train_once("r2") == 0);
    CHECK(slurp(dir / "r1/metrics.json") == slurp(dir / "r2/metrics.json"));
    CHECK(slurp(dir / "r1/bundle.json") == slurp(dir / "r2/bundle.json"));
    CHECK(slurp(dir / "r1/folds.csv") == slurp(dir / "r2/folds.csv"));
    CHECK(slurp(dir / "r1/loss_traces.csv") == slurp(dir / "r2/loss_traces.csv"));
}

TEST_CASE("search emits the documented columns with the best row first") {
    TempDir dir("search");
    REQUIRE(simulate_into(dir, "sim", 1095, 1, 21, 0.05) == 0);
    REQUIRE(run({"search", "--data", dir / "sim/dataset.csv", "--out", dir / "s", "--kind",
                 "naive", "--budget", "2", "--epochs", "5", "--seed", "4"}) == 0);

    const auto csv = slurp(dir / "s/search.csv");
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // provenance comment
    CHECK(line.rfind("# pgnn", 0) == 0);
    std::getline(lines, line);
    CHECK(line == "architecture,lr,batch_size,lambda,index");
    int rows = 0;
    double best = -1, min_index = 1e300;
    while (std::getline(lines, line)) {
        ++rows;
        const auto last_comma = line.rfind(',');
        const double idx = std::stod(line.substr(last_comma + 1));
        if (rows == 1) best = idx;
        min_index = std::min(min_index, idx);
    }
    CHECK(rows == 2);
    CHECK(best == min_index);

    const auto sj = json::parse(slurp(dir / "s/search.json"));
    CHECK(sj.at("best").contains("architecture"));
    CHECK(sj.at("best").at("index").get<double>() == min_index);
}

TEST_CASE("evaluate guards against leakage and scores a perfect oracle at zero") {
    TempDir dir("eval");
    REQUIRE(simulate_into(dir, "sim", 1095, 1, 31, 0.0) == 0);  // noise-free: PM is exact
    REQUIRE(run({"train", "--data", dir / "sim/dataset.csv", "--out", dir / "m", "--kind",
                 "process-only", "--seed", "2"}) == 0);

    // same dataset: refused without --allow-leakage
    CHECK(run({"evaluate", "--bundle", dir / "m/bundle.json", "--data", dir / "sim/dataset.csv",
               "--out", dir / "e0"}) == 2);
    REQUIRE(run({"evaluate", "--bundle", dir / "m/bundle.json", "--data", dir / "sim/dataset.csv",
                 "--out", dir / "e1", "--allow-leakage"}) == 0);
    auto ej = json::parse(slurp(dir / "e1/evaluation.json"));
    CHECK(ej.at("mae").get<double>() == 0.0);  // noise-free PM data, PM model
    CHECK(ej.at("bundle_hash").get<std::string>().size() == 16);

    // a different dataset needs no flag
    REQUIRE(simulate_into(dir, "other", 730, 1, 99, 0.1) == 0);
    CHECK(run({"evaluate", "--bundle", dir / "m/bundle.json", "--data", dir / "other/dataset.csv",
               "--out", dir / "e2"}) == 0);
    auto ej2 = json::parse(slurp(dir / "e2/evaluation.json"));
    CHECK(ej2.at("mae").get<double>() > 0.0);
}

TEST_CASE("ice defaults cover four windows and five variables") {
    TempDir dir("ice");
    REQUIRE(simulate_into(dir, "sim", 1095, 1, 41, 0.05) == 0);
    REQUIRE(run({"train", "--data", dir / "sim/dataset.csv", "--out", dir / "m", "--kind",
                 "process-only", "--seed", "5"}) == 0);

    REQUIRE(run({"ice", "--bundle", dir / "m/bundle.json", "--data", dir / "sim/dataset.csv",
                 "--out", dir / "full", "--grid-points", "5", "--mode", "frozen-state"}) == 0);
    auto ij = json::parse(slurp(dir / "full/ice.json"));
    CHECK(ij.at("results").size() == 20);  // 4 windows x 5 variables

    REQUIRE(run({"ice", "--bundle", dir / "m/bundle.json", "--data", dir / "sim/dataset.csv",
                 "--out", dir / "one", "--variable", "vpd", "--grid-points", "5", "--mode",
                 "frozen-state"}) == 0);
    auto ij2 = json::parse(slurp(dir / "one/ice.json"));
    CHECK(ij2.at("results").size() == 4);  // windows only

    // deterministic across reruns and thread counts
    REQUIRE(run({"ice", "--bundle", dir / "m/bundle.json", "--data", dir / "sim/dataset.csv",
                 "--out", dir / "t1", "--variable", "par", "--grid-points", "7", "--threads",
                 "1"}) == 0);
    REQUIRE(run({"ice", "--bundle", dir / "m/bundle.json", "--data", dir / "sim/dataset.csv",
                 "--out", dir / "t4", "--variable", "par", "--grid-points", "7", "--threads",
                 "4"}) == 0);
    CHECK(slurp(dir / "t1/ice.csv") == slurp(dir / "t4/ice.csv"));
}

TEST_CASE("multi-kind training writes one metrics row per kind") {
    TempDir dir("matrix");
    REQUIRE(simulate_into(dir, "sim", 1095, 1, 51, 0.05) == 0);
    REQUIRE(run({"train", "--data", dir / "sim/dataset.csv", "--out", dir / "m", "--kind",
                 "process-only,naive,parallel-physics", "--hidden", "4", "--epochs", "10",
                 "--seed", "3"}) == 0);
    const auto metrics = json::parse(slurp(dir / "m/metrics.json"));
    CHECK(metrics.at("rows").size() == 3);
    CHECK(fs::exists(dir / "m/bundle-naive.json"));
    CHECK(fs::exists(dir / "m/bundle-process-only.json"));
    CHECK(fs::exists(dir / "m/bundle-parallel-physics.json"));
}
