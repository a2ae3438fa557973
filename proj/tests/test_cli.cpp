// End-to-end tests of the command-line tool: every subcommand is exercised
// through a real process, including the documented exit codes.
#include <catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "kmle/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  const fs::path out_file =
      fs::temp_directory_path() / ("kmle_cli_stdout_" + std::to_string(::getpid()) + ".txt");
  const std::string cmd = std::string(KVARS_CLI_PATH) + " " + args + " > " + out_file.string() + " 2>/dev/null";
  const int raw = std::system(cmd.c_str());
  CliResult res;
  res.code = WEXITSTATUS(raw);
  std::ifstream in(out_file);
  std::ostringstream ss;
  ss << in.rdbuf();
  res.out = ss.str();
  return res;
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("kmle_cli_" + tag);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("simulate writes a complete dataset directory") {
  const fs::path dir = fresh_dir("sim");
  const auto res =
      run_cli("simulate --out " + dir.string() + " --m 2 --p 2 --k 3 --nc 5 --t 100 --seed 7");
  REQUIRE(res.code == 0);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "truth.json"));
  int csvs = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") ++csvs;
  CHECK(csvs == 15);

  const json manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["m"] == 2);
  CHECK(manifest["T"] == 100);
  CHECK(manifest["N"] == 15);
}

TEST_CASE("simulate is byte-identical across runs") {
  const fs::path a = fresh_dir("sim_a");
  const fs::path b = fresh_dir("sim_b");
  const std::string flags = " --m 2 --p 1 --k 2 --nc 3 --t 60 --seed 42";
  REQUIRE(run_cli("simulate --out " + a.string() + flags).code == 0);
  REQUIRE(run_cli("simulate --out " + b.string() + flags).code == 0);
  for (const auto& e : fs::directory_iterator(a)) {
    const fs::path other = b / e.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(e.path()) == slurp(other));
  }
}

TEST_CASE("simulate rejects an unachievable SNR target") {
  const fs::path dir = fresh_dir("sim_snr");
  const auto res = run_cli("simulate --out " + dir.string() + " --m 2 --p 1 --k 2 --nc 2 --t 50 --snr-db -10");
  CHECK(res.code == 2);
}

TEST_CASE("cluster, evaluate and score agree end to end") {
  const fs::path dir = fresh_dir("flow");
  REQUIRE(run_cli("simulate --out " + dir.string() + " --m 2 --p 2 --k 3 --nc 8 --t 200 --seed 11").code == 0);

  const fs::path result = dir / "result.json";
  const auto clu = run_cli("cluster " + dir.string() + " --k 3 --p 2 --init oracle --seed 5 --out " +
                           result.string());
  REQUIRE(clu.code == 0);
  REQUIRE(fs::exists(result));

  // evaluate against the truth: oracle-seeded recovery on well-separated data
  const fs::path report = dir / "metrics.json";
  const auto eva = run_cli("evaluate " + (dir / "truth.json").string() + " " + result.string() + " --out " +
                           report.string());
  REQUIRE(eva.code == 0);
  const json metrics = json::parse(slurp(report));
  CHECK(metrics["ari"].get<double>() >= 0.9);

  // evaluating a file against itself is perfect agreement
  const auto self = run_cli("evaluate " + result.string() + " " + result.string());
  REQUIRE(self.code == 0);
  const json selfj = json::parse(self.out);
  CHECK(selfj["ri"].get<double>() == 1.0);
  CHECK(selfj["ari"].get<double>() == 1.0);
  CHECK(selfj["nid"].get<double>() == 0.0);

  // scoring the dataset under the fitted models reproduces the labels
  const fs::path scores = dir / "scores.csv";
  REQUIRE(run_cli("score " + dir.string() + " " + result.string() + " --out " + scores.string()).code == 0);
  const std::string csv = slurp(scores);
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header == "series,D_1,D_2,D_3,label");
  const json resultj = json::parse(slurp(result));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto comma = line.rfind(',');
    CHECK(std::stoi(line.substr(comma + 1)) == resultj["labels"][n].get<int>());
    ++n;
  }
  CHECK(n == 24);
}

TEST_CASE("labels written 1-based evaluate identically to 0-based copies") {
  const fs::path dir = fresh_dir("basis");
  fs::create_directories(dir);
  kmle::io::write_text(dir / "one.json", "[1, 1, 2, 2]\n");
  kmle::io::write_text(dir / "zero.json", "[0, 0, 1, 1]\n");
  const auto res = run_cli("evaluate " + (dir / "one.json").string() + " " + (dir / "zero.json").string());
  REQUIRE(res.code == 0);
  const json j = json::parse(res.out);
  CHECK(j["ari"].get<double>() == 1.0);
}

TEST_CASE("single-cluster run pools everything in one iteration") {
  const fs::path dir = fresh_dir("pool");
  REQUIRE(run_cli("simulate --out " + dir.string() + " --m 1 --p 1 --k 2 --nc 4 --t 80 --seed 3").code == 0);
  const fs::path result = dir / "result.json";
  REQUIRE(run_cli("cluster " + dir.string() + " --k 1 --p 1 --out " + result.string()).code == 0);
  const json j = json::parse(slurp(result));
  CHECK(j["iters"].get<int>() == 1);
  CHECK(j["clusters"].size() == 1);
}

TEST_CASE("loglik threshold filters restarts") {
  const fs::path dir = fresh_dir("thresh");
  REQUIRE(run_cli("simulate --out " + dir.string() + " --m 1 --p 1 --k 2 --nc 3 --t 60 --seed 9").code == 0);
  // An absurd threshold removes every restart.
  const auto res = run_cli("cluster " + dir.string() + " --k 2 --p 1 --restarts 3 --loglik-threshold 1e9");
  CHECK(res.code == 5);
  // A permissive threshold keeps them.
  const auto ok = run_cli("cluster " + dir.string() +
                          " --k 2 --p 1 --restarts 3 --loglik-threshold -1e12 --out " +
                          (dir / "r.json").string());
  CHECK(ok.code == 0);
}

TEST_CASE("select produces a table and a best cell") {
  const fs::path dir = fresh_dir("select");
  REQUIRE(run_cli("simulate --out " + dir.string() + " --m 1 --p 1 --k 2 --nc 4 --t 60 --seed 21").code == 0);

  SECTION("single-cell grid gives a one-row table") {
    const auto res = run_cli("select " + dir.string() + " --k-grid 2 --p-grid 1 --restarts 2 --out-csv " +
                             (dir / "bic.csv").string() + " --out-best " + (dir / "best.json").string());
    REQUIRE(res.code == 0);
    const std::string csv = slurp(dir / "bic.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + one cell
    const json best = json::parse(slurp(dir / "best.json"));
    CHECK(best["K"] == 2);
    CHECK(best["p"] == 1);
  }
  SECTION("cyclic mode visits a subset and never beats the grid minimum") {
    REQUIRE(run_cli("select " + dir.string() + " --k-grid 1:1:3 --p-grid 1:1:2 --restarts 2 --seed 5"
                    " --out-csv " + (dir / "grid.csv").string() + " --out-best " +
                    (dir / "grid_best.json").string()).code == 0);
    REQUIRE(run_cli("select " + dir.string() + " --k-grid 1:1:3 --p-grid 1:1:2 --restarts 2 --seed 5"
                    " --mode cyclic --start 3,2 --out-csv " + (dir / "cyc.csv").string() +
                    " --out-best " + (dir / "cyc_best.json").string()).code == 0);
    const json grid_best = json::parse(slurp(dir / "grid_best.json"));
    const json cyc_best = json::parse(slurp(dir / "cyc_best.json"));
    CHECK(cyc_best["bic"].get<double>() >= grid_best["bic"].get<double>() - 1e-9);
    CHECK(std::count(slurp(dir / "cyc.csv").begin(), slurp(dir / "cyc.csv").end(), '\n') <=
          std::count(slurp(dir / "grid.csv").begin(), slurp(dir / "grid.csv").end(), '\n'));
  }
  SECTION("bad grid syntax is a usage error") {
    CHECK(run_cli("select " + dir.string() + " --k-grid 2:0:4 --p-grid 1").code == 2);
    CHECK(run_cli("select " + dir.string() + " --k-grid nope --p-grid 1").code == 2);
  }
}

TEST_CASE("results do not depend on the thread count") {
  const fs::path dir = fresh_dir("threads");
  REQUIRE(run_cli("simulate --out " + dir.string() + " --m 2 --p 1 --k 3 --nc 6 --t 80 --seed 31").code == 0);
  REQUIRE(run_cli("cluster " + dir.string() + " --k 3 --p 1 --seed 2 --threads 1 --out " +
                  (dir / "t1.json").string()).code == 0);
  REQUIRE(run_cli("cluster " + dir.string() + " --k 3 --p 1 --seed 2 --threads 4 --out " +
                  (dir / "t4.json").string()).code == 0);
  CHECK(slurp(dir / "t1.json") == slurp(dir / "t4.json"));
}

TEST_CASE("a single model gives one score column") {
  const fs::path dir = fresh_dir("onecol");
  REQUIRE(run_cli("simulate --out " + dir.string() + " --m 1 --p 1 --k 1 --nc 3 --t 60 --seed 13").code == 0);
  REQUIRE(run_cli("cluster " + dir.string() + " --k 1 --p 1 --out " + (dir / "r.json").string()).code == 0);
  REQUIRE(run_cli("score " + dir.string() + " " + (dir / "r.json").string() + " --out " +
                  (dir / "s.csv").string()).code == 0);
  std::istringstream lines(slurp(dir / "s.csv"));
  std::string header;
  std::getline(lines, header);
  CHECK(header == "series,D_1,label");
}

TEST_CASE("numeric degeneracy in strict mode exits with code 4") {
  // Exactly-linear series admit no noise covariance; without --ridge every
  // initialisation candidate fails.
  const fs::path dir = fresh_dir("degenerate");
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "{\"m\": 1, \"T\": 20, \"N\": 2, \"files\": [\"a.csv\", \"b.csv\"]}";
  kmle::io::write_text(dir / "manifest.json", manifest.str());
  std::ostringstream ramp;
  for (int t = 1; t <= 20; ++t) ramp << t << "\n";
  kmle::io::write_text(dir / "a.csv", ramp.str());
  std::ostringstream ramp2;
  for (int t = 1; t <= 20; ++t) ramp2 << 2 * t << "\n";
  kmle::io::write_text(dir / "b.csv", ramp2.str());
  CHECK(run_cli("cluster " + dir.string() + " --k 2 --p 1").code == 4);
}

TEST_CASE("unwritable output directories exit with code 3") {
  const fs::path blocker = fresh_dir("blocker");
  fs::create_directories(blocker.parent_path());
  kmle::io::write_text(blocker, "occupied\n");  // a plain file where the dir should go
  const auto res = run_cli("simulate --out " + (blocker / "sub").string() +
                           " --m 1 --p 1 --k 1 --nc 2 --t 30");
  CHECK(res.code == 3);
}

TEST_CASE("usage and I/O failures use the documented exit codes") {
  CHECK(run_cli("cluster").code == 2);                       // missing required flags
  CHECK(run_cli("no_such_command").code == 2);               // unknown subcommand
  CHECK(run_cli("cluster /nonexistent_dir --k 2 --p 1").code == 3);
  const auto help = run_cli("--help");
  CHECK(help.code == 0);
}

TEST_CASE("evaluate rejects mismatched label files") {
  const fs::path dir = fresh_dir("mismatch");
  fs::create_directories(dir);
  kmle::io::write_text(dir / "a.json", "[1, 2]\n");
  kmle::io::write_text(dir / "b.json", "[1, 2, 3]\n");
  CHECK(run_cli("evaluate " + (dir / "a.json").string() + " " + (dir / "b.json").string()).code == 2);
}
