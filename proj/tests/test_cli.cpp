#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

// End-to-end checks of the command-line tool, driven through std::system.
// DFME_TOOL_PATH is injected by CMake.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "dfme/serialize.hpp"
#include "dfme/wire.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kTool = DFME_TOOL_PATH;

int run(const std::string& args) {
  const std::string cmd = kTool + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& child = "") const {
    return (child.empty() ? path : path / child).string();
  }
};

}  // namespace

TEST_CASE("cli: train-victim produces a loadable victim file") {
  TempDir dir("dfme_cli_train");
  const std::string vf = dir.str("victim.json");
  CHECK(run("train-victim --dataset blobs:classes=3,per_class=60,dim=2 "
            "--victim-arch 2-16-3 --epochs 25 --seed 3 --victim-file " + vf) == 0);

  const dfme::VictimFile loaded = dfme::load_victim_file(vf);
  CHECK(loaded.net.input_dim() == 2);
  CHECK(loaded.net.output_dim() == 3);
  CHECK(loaded.test_accuracy >= 0.99);
  CHECK(loaded.eval_split.size() > 0);
}

TEST_CASE("cli: bad architecture token is named in the error") {
  TempDir dir("dfme_cli_badarch");
  const std::string cmd = kTool +
                          " train-victim --dataset blobs:per_class=10 --victim-arch 2-x-3"
                          " --victim-file " + dir.str("v.json") + " 2> " + dir.str("err");
  CHECK(std::system(cmd.c_str()) != 0);
  const std::string err = slurp(dir.str("err"));
  CHECK(err.find("'x'") != std::string::npos);
}

TEST_CASE("cli: same seed gives an identical victim file") {
  TempDir dir("dfme_cli_repro");
  const std::string base = "train-victim --dataset blobs:classes=3,per_class=40,dim=2 "
                           "--victim-arch 2-8-3 --epochs 8 --seed 11 --victim-file ";
  CHECK(run(base + dir.str("a.json")) == 0);
  CHECK(run(base + dir.str("b.json")) == 0);
  CHECK(slurp(dir.str("a.json")) == slurp(dir.str("b.json")));
}

TEST_CASE("cli: extract writes config echo, logs, csv and aggregate") {
  TempDir dir("dfme_cli_extract");
  const std::string vf = dir.str("victim.json");
  REQUIRE(run("train-victim --dataset blobs:classes=3,per_class=60,dim=2 "
              "--victim-arch 2-16-3 --epochs 25 --seed 3 --victim-file " + vf) == 0);

  CHECK(run("extract --victim-file " + vf +
            " --mode hl --budget 400 --batch-size 20 --pool-size 60 --generators 2 "
            "--clones 2 --gen-batches 2 --replay-batches 3 --replay-capacity 200 "
            "--seed 7 --repeats 2 --out " + dir.str("out")) == 0);

  // Config echo materializes every knob.
  const json echo = json::parse(slurp(dir.str("out/config.json")));
  CHECK(echo.at("budget") == 400);
  CHECK(echo.at("seed") == 7);
  CHECK(echo.at("use_selective_query") == true);
  CHECK(echo.at("lr_drop_factor") == 0.3);
  CHECK(echo.contains("replay_capacity"));

  // Per-run artifacts.
  CHECK(fs::exists(dir.str("out/run_000.jsonl")));
  CHECK(fs::exists(dir.str("out/run_001.jsonl")));
  const json summary = json::parse(slurp(dir.str("out/run_000.summary.json")));
  CHECK(summary.at("spent") == 400);
  CHECK(summary.contains("finalAccuracy"));
  CHECK(summary.contains("wallTime"));

  // Stable CSV columns.
  std::ifstream csv(dir.str("out/runs.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header ==
        "run_id,seed,budget,mode,final_accuracy,final_fidelity,discovered_K,wall_seconds");
  std::string row;
  int rows = 0;
  while (std::getline(csv, row)) {
    if (!row.empty()) ++rows;
  }
  CHECK(rows == 2);

  const std::string agg = slurp(dir.str("out/aggregate.csv"));
  CHECK(agg.find("final_accuracy,") != std::string::npos);
  CHECK(agg.find("metric,mean,std,ci95_halfwidth") != std::string::npos);
}

TEST_CASE("cli: repeats=1 aggregate equals the single run with zero half-width") {
  TempDir dir("dfme_cli_single");
  const std::string vf = dir.str("victim.json");
  REQUIRE(run("train-victim --dataset blobs:classes=3,per_class=60,dim=2 "
              "--victim-arch 2-16-3 --epochs 25 --seed 3 --victim-file " + vf) == 0);
  REQUIRE(run("extract --victim-file " + vf +
              " --budget 200 --batch-size 20 --pool-size 60 --generators 2 "
              "--replay-batches 2 --replay-capacity 100 --seed 5 --out " +
              dir.str("out")) == 0);

  const json summary = json::parse(slurp(dir.str("out/run_000.summary.json")));
  std::ifstream agg(dir.str("out/aggregate.csv"));
  std::string line;
  std::getline(agg, line);  // header
  std::getline(agg, line);  // final_accuracy row
  std::istringstream ss(line);
  std::string name, mean, stddev, half;
  std::getline(ss, name, ',');
  std::getline(ss, mean, ',');
  std::getline(ss, stddev, ',');
  std::getline(ss, half, ',');
  CHECK(name == "final_accuracy");
  CHECK(std::stod(mean) == doctest::Approx(summary.at("finalAccuracy").get<double>()));
  CHECK(std::stod(half) == 0.0);
}

TEST_CASE("cli: ablation flags change only the named knob in the config echo") {
  TempDir dir("dfme_cli_ablation");
  const std::string vf = dir.str("victim.json");
  REQUIRE(run("train-victim --dataset blobs:classes=3,per_class=60,dim=2 "
              "--victim-arch 2-16-3 --epochs 25 --seed 3 --victim-file " + vf) == 0);

  const std::string common = "extract --victim-file " + vf +
                             " --budget 200 --batch-size 20 --pool-size 60 --generators 2"
                             " --replay-batches 2 --replay-capacity 100 --seed 5 --out ";
  REQUIRE(run(common + dir.str("base")) == 0);
  REQUIRE(run(common + dir.str("nosq") + " --no-selective-query") == 0);
  REQUIRE(run(common + dir.str("circ") + " --circular-replay") == 0);

  json base = json::parse(slurp(dir.str("base/config.json")));
  json nosq = json::parse(slurp(dir.str("nosq/config.json")));
  json circ = json::parse(slurp(dir.str("circ/config.json")));
  for (json* j : {&base, &nosq, &circ}) j->erase("out");

  json base_sq = base;
  base_sq["use_selective_query"] = false;
  CHECK(base_sq == nosq);
  json base_circ = base;
  base_circ["circular_replay"] = true;
  CHECK(base_circ == circ);
}

TEST_CASE("cli: extraction against a served victim matches in-process") {
  TempDir dir("dfme_cli_serve");
  const std::string vf = dir.str("victim.json");
  REQUIRE(run("train-victim --dataset blobs:classes=3,per_class=60,dim=2 "
              "--victim-arch 2-16-3 --epochs 25 --seed 3 --victim-file " + vf) == 0);

  // Serve in-process rather than forking the CLI, same wire stack.
  const dfme::VictimFile loaded = dfme::load_victim_file(vf);
  dfme::LocalVictimOracle oracle(loaded.net, dfme::ResponseMode::kHardLabel, 10000);
  dfme::VictimServer server(oracle, "127.0.0.1", 0);
  server.start();

  const std::string common = " --mode hl --budget 400 --batch-size 20 --pool-size 60 "
                             "--generators 2 --replay-batches 3 --replay-capacity 200 "
                             "--seed 9 --out ";
  CHECK(run("extract --victim-file " + vf + common + dir.str("local")) == 0);
  CHECK(run("extract --victim-file " + vf + " --endpoint 127.0.0.1:" +
            std::to_string(server.port()) + common + dir.str("remote")) == 0);
  server.stop();
  CHECK(oracle.spent() == 400);

  // Metric logs agree line by line; labels are bitwise identical so the
  // whole log matches byte for byte.
  CHECK(slurp(dir.str("local/run_000.jsonl")) == slurp(dir.str("remote/run_000.jsonl")));

  const json a = json::parse(slurp(dir.str("local/run_000.summary.json")));
  const json b = json::parse(slurp(dir.str("remote/run_000.summary.json")));
  CHECK(a.at("finalAccuracy") == b.at("finalAccuracy"));
  CHECK(a.at("finalFidelity") == b.at("finalFidelity"));
  CHECK(a.at("K") == b.at("K"));
}

TEST_CASE("cli: serve answers status over the wire and stops on SIGTERM") {
  TempDir dir("dfme_cli_servebin");
  const std::string vf = dir.str("victim.json");
  REQUIRE(run("train-victim --dataset blobs:classes=3,per_class=40,dim=2 "
              "--victim-arch 2-8-3 --epochs 10 --seed 3 --victim-file " + vf) == 0);

  const std::string cmd = kTool + " serve --victim-file " + vf +
                          " --endpoint 127.0.0.1:39114 --mode hl --budget 50 "
                          ">/dev/null 2>&1 & echo $!";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[32] = {0};
  REQUIRE(fgets(buf, sizeof(buf), pipe) != nullptr);
  const int pid = std::atoi(buf);
  pclose(pipe);
  REQUIRE(pid > 0);

  // Wait for the port to come up, then check status == fresh.
  bool ok = false;
  for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    try {
      dfme::RemoteVictimOracle remote("127.0.0.1", 39114, dfme::ResponseMode::kHardLabel);
      ok = remote.spent() == 0 && remote.budget() == 50;
    } catch (const dfme::IoError&) {
    }
  }
  CHECK(ok);
  CHECK(std::system(("kill " + std::to_string(pid) + " 2>/dev/null").c_str()) == 0);
}
