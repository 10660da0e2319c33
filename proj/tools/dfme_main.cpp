// Command-line front end: train desk victims, serve them over the wire
// protocol, and run extraction experiments with CSV aggregation.

#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dfme/engine.hpp"
#include "dfme/serialize.hpp"
#include "dfme/wire.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class LogLevel { kQuiet = 0, kError, kWarn, kInfo, kDebug };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("DFME_LOG_LEVEL");
    if (!env) return LogLevel::kInfo;
    const std::string v = env;
    if (v == "quiet") return LogLevel::kQuiet;
    if (v == "error") return LogLevel::kError;
    if (v == "warn") return LogLevel::kWarn;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

void log_line(LogLevel level, const std::string& msg) {
  if (level <= log_level()) std::fprintf(stderr, "%s\n", msg.c_str());
}

void info(const std::string& msg) { log_line(LogLevel::kInfo, msg); }

struct Stats {
  double mean = 0.0;
  double std_dev = 0.0;    // sample standard deviation
  double ci95_half = 0.0;  // 1.96 * s / sqrt(n)
};

Stats compute_stats(const std::vector<double>& values) {
  Stats s;
  const double n = static_cast<double>(values.size());
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std_dev = std::sqrt(ss / (n - 1.0));
    s.ci95_half = 1.96 * s.std_dev / std::sqrt(n);
  }
  return s;
}

volatile std::sig_atomic_t g_interrupted = 0;

int cmd_train_victim(const std::string& dataset, const std::string& arch,
                     const std::string& victim_file, std::size_t epochs,
                     std::uint64_t seed) {
  dfme::Rng rng(seed);
  dfme::LabeledDataset full = dfme::load_dataset(dataset, rng);
  full.validate();
  const dfme::SplitDataset split = dfme::split_dataset(full, 0.2, rng);

  const std::vector<std::size_t> dims = dfme::parse_arch(arch);
  if (dims.front() != full.input_dim()) {
    throw dfme::ConfigError("architecture input width " + std::to_string(dims.front()) +
                            " does not match dataset dimension " +
                            std::to_string(full.input_dim()));
  }
  if (dims.back() < static_cast<std::size_t>(full.num_classes)) {
    throw dfme::ConfigError("architecture output width is below the class count");
  }

  std::vector<dfme::Activation> acts(dims.size() - 2, dfme::Activation::kRelu);
  acts.push_back(dfme::Activation::kLinear);
  dfme::DenseNetwork net(dims, acts);
  net.init_params(rng);

  dfme::VictimTrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  info("training victim " + arch + " on " + dataset + " for " + std::to_string(epochs) +
       " epochs");
  dfme::VictimTrainResult result =
      dfme::train_desk_victim(split.train, split.test, std::move(net), cfg);

  dfme::VictimFile vf;
  vf.net = std::move(result.net);
  vf.dataset_descriptor = dataset;
  vf.arch = arch;
  vf.train_accuracy = result.train_accuracy;
  vf.test_accuracy = result.test_accuracy;
  vf.seed = seed;
  vf.eval_split = split.test;
  dfme::save_victim_file(victim_file, vf);

  std::printf("victim trained: train_accuracy=%.4f test_accuracy=%.4f classes=%d -> %s\n",
              result.train_accuracy, result.test_accuracy, split.test.num_classes,
              victim_file.c_str());
  return 0;
}

int cmd_serve(const std::string& victim_file, const std::string& endpoint,
              const std::string& mode, std::int64_t budget) {
  const dfme::VictimFile vf = dfme::load_victim_file(victim_file);
  dfme::LocalVictimOracle oracle(vf.net, dfme::response_mode_from_string(mode), budget);
  auto [host, port] = dfme::parse_endpoint(endpoint);
  dfme::VictimServer server(oracle, host, port);
  std::printf("serving %s victim from %s on %s:%u (budget %lld)\n", mode.c_str(),
              victim_file.c_str(), host.c_str(), server.port(),
              static_cast<long long>(budget));
  std::fflush(stdout);

  std::signal(SIGINT, [](int) { g_interrupted = 1; });
  std::signal(SIGTERM, [](int) { g_interrupted = 1; });
  server.start();
  while (!g_interrupted) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  server.stop();
  info("server stopped, spent=" + std::to_string(oracle.spent()));
  return 0;
}

int cmd_extract(dfme::ExtractionConfig cfg, const std::string& victim_file,
                const std::string& endpoint, std::size_t repeats,
                const std::string& out_dir) {
  const dfme::VictimFile vf = dfme::load_victim_file(victim_file);
  cfg.input_dim = vf.net.input_dim();
  cfg.validate();
  if (repeats == 0) throw dfme::ConfigError("--repeats must be at least 1");

  fs::create_directories(out_dir);

  // Config echo: every knob materialized, nothing implicit.
  {
    json echo = cfg.to_json();
    echo["victim_file"] = victim_file;
    echo["endpoint"] = endpoint;
    echo["repeats"] = repeats;
    echo["out"] = out_dir;
    echo["victim_dataset"] = vf.dataset_descriptor;
    echo["victim_arch"] = vf.arch;
    echo["victim_test_accuracy"] = vf.test_accuracy;
    std::ofstream(out_dir + "/config.json") << echo.dump(2) << "\n";
  }

  std::ofstream csv(out_dir + "/runs.csv");
  csv << "run_id,seed,budget,mode,final_accuracy,final_fidelity,discovered_K,"
         "wall_seconds\n";

  std::vector<double> accuracies, fidelities, ks, walls;
  for (std::size_t run = 0; run < repeats; ++run) {
    dfme::ExtractionConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + run;

    std::unique_ptr<dfme::VictimOracle> oracle;
    if (!endpoint.empty()) {
      oracle = std::make_unique<dfme::RemoteVictimOracle>(endpoint, run_cfg.mode);
    } else {
      oracle =
          std::make_unique<dfme::LocalVictimOracle>(vf.net, run_cfg.mode, run_cfg.budget);
    }

    char run_name[32];
    std::snprintf(run_name, sizeof(run_name), "run_%03zu", run);
    std::ofstream run_log(out_dir + "/" + std::string(run_name) + ".jsonl");

    dfme::ExtractionEngine engine(run_cfg, *oracle,
                                  dfme::EvaluationContext(vf.eval_split, vf.net));
    info(std::string(run_name) + ": seed " + std::to_string(run_cfg.seed) + ", budget " +
         std::to_string(run_cfg.budget));
    const dfme::RunSummary summary = engine.run(&run_log);

    json jsummary;
    jsummary["finalAccuracy"] = summary.final_record.accuracy;
    jsummary["finalFidelity"] = summary.final_record.fidelity;
    jsummary["spent"] = summary.spent;
    jsummary["K"] = summary.final_record.discovered_k;
    jsummary["wallTime"] = summary.wall_seconds;
    std::ofstream(out_dir + "/" + std::string(run_name) + ".summary.json")
        << jsummary.dump(2) << "\n";

    csv << run << "," << run_cfg.seed << "," << run_cfg.budget << ","
        << dfme::to_string(run_cfg.mode) << "," << summary.final_record.accuracy << ","
        << summary.final_record.fidelity << "," << summary.final_record.discovered_k
        << "," << summary.wall_seconds << "\n";
    csv.flush();

    accuracies.push_back(summary.final_record.accuracy);
    fidelities.push_back(summary.final_record.fidelity);
    ks.push_back(static_cast<double>(summary.final_record.discovered_k));
    walls.push_back(summary.wall_seconds);

    std::printf("%s: accuracy=%.4f fidelity=%.4f K=%zu spent=%lld wall=%.1fs\n", run_name,
                summary.final_record.accuracy, summary.final_record.fidelity,
                summary.final_record.discovered_k, static_cast<long long>(summary.spent),
                summary.wall_seconds);
    std::fflush(stdout);
  }

  std::ofstream agg(out_dir + "/aggregate.csv");
  agg << "metric,mean,std,ci95_halfwidth\n";
  auto emit = [&](const std::string& name, const std::vector<double>& values) {
    const Stats s = compute_stats(values);
    agg << name << "," << s.mean << "," << s.std_dev << "," << s.ci95_half << "\n";
  };
  emit("final_accuracy", accuracies);
  emit("final_fidelity", fidelities);
  emit("discovered_K", ks);
  emit("wall_seconds", walls);

  const Stats acc = compute_stats(accuracies);
  std::printf("aggregate over %zu runs: accuracy %.4f +- %.4f (95%% CI)\n", repeats,
              acc.mean, acc.ci95_half);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data-free model extraction workbench"};
  app.require_subcommand(1);

  // train-victim
  auto* train = app.add_subcommand("train-victim", "train and serialize a desk victim");
  std::string dataset = "digits";
  std::string victim_arch = "64-48-32-10";
  std::string victim_file = "victim.json";
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  train->add_option("--dataset", dataset, "dataset descriptor");
  train->add_option("--victim-arch", victim_arch, "layer widths, e.g. 64-48-32-10");
  train->add_option("--victim-file", victim_file, "output path");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--seed", seed, "rng seed");

  // serve
  auto* serve = app.add_subcommand("serve", "serve a victim over the wire protocol");
  std::string serve_victim_file = "victim.json";
  std::string serve_endpoint = "127.0.0.1:7777";
  std::string serve_mode = "hl";
  std::int64_t serve_budget = 25000;
  serve->add_option("--victim-file", serve_victim_file, "victim file to serve");
  serve->add_option("--endpoint", serve_endpoint, "host:port to bind");
  serve->add_option("--mode", serve_mode, "hl or sl")
      ->check(CLI::IsMember({"hl", "sl", "HL", "SL"}));
  serve->add_option("--budget", serve_budget, "query budget");

  // extract
  auto* extract = app.add_subcommand("extract", "run extraction against a victim");
  dfme::ExtractionConfig cfg;
  std::string extract_victim_file;
  std::string extract_endpoint;
  std::string extract_mode = "hl";
  std::string lr_drops = "off";
  std::size_t repeats = 1;
  std::string out_dir = "out";
  bool no_selective_query = false;
  bool circular_replay = false;
  extract->add_option("--victim-file", extract_victim_file,
                      "victim file (weights for local queries, eval split always)")
      ->required();
  extract->add_option("--endpoint", extract_endpoint,
                      "query a served victim at host:port instead of in-process");
  extract->add_option("--mode", extract_mode, "hl or sl")
      ->check(CLI::IsMember({"hl", "sl", "HL", "SL"}));
  extract->add_option("--budget", cfg.budget, "total victim inputs allowed");
  extract->add_option("--batch-size", cfg.batch_size, "victim query batch size");
  extract->add_option("--pool-size", cfg.pool_size, "selective-query candidate pool");
  extract->add_option("--generators", cfg.generator_count, "generator ensemble size");
  extract->add_option("--clones", cfg.clone_count, "clone ensemble size");
  extract->add_option("--gen-batches", cfg.generator_batches_per_phase,
                      "generator batches per phase");
  extract->add_option("--replay-batches", cfg.replay_batches_per_phase,
                      "replay batches per phase");
  extract->add_option("--replay-capacity", cfg.replay_capacity, "replay sample capacity");
  extract->add_option("--clone-lr", cfg.clone_lr, "clone learning rate");
  extract->add_option("--gen-lr", cfg.generator_lr, "generator learning rate");
  extract->add_option("--lr-drops", lr_drops, "on|off (relaxed-budget schedule)")
      ->check(CLI::IsMember({"on", "off"}));
  extract->add_option("--seed", cfg.seed, "base seed; run i uses seed+i");
  extract->add_option("--repeats", repeats, "independent seeded runs");
  extract->add_option("--out", out_dir, "output directory");
  extract->add_flag("--no-selective-query", no_selective_query,
                    "ablation: query unfiltered generator batches");
  extract->add_flag("--circular-replay", circular_replay,
                    "ablation: prior-work circular buffer replay");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return cmd_train_victim(dataset, victim_arch, victim_file, epochs, seed);
    }
    if (serve->parsed()) {
      return cmd_serve(serve_victim_file, serve_endpoint, serve_mode, serve_budget);
    }
    cfg.mode = dfme::response_mode_from_string(extract_mode);
    cfg.lr_drops_enabled = lr_drops == "on";
    cfg.use_selective_query = !no_selective_query;
    cfg.circular_replay = circular_replay;
    return cmd_extract(cfg, extract_victim_file, extract_endpoint, repeats, out_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
