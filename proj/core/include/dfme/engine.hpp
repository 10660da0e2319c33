#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfme/clone_ensemble.hpp"
#include "dfme/dataset.hpp"
#include "dfme/generator_ensemble.hpp"
#include "dfme/replay.hpp"
#include "dfme/selective_query.hpp"
#include "dfme/victim.hpp"

namespace dfme {

struct ExtractionConfig {
  std::int64_t budget = 25000;
  std::size_t batch_size = 250;
  std::size_t pool_size = 1000;
  std::size_t generator_batches_per_phase = 3;
  std::size_t replay_batches_per_phase = 12;
  std::size_t clone_count = 2;
  std::size_t generator_count = 8;
  ResponseMode mode = ResponseMode::kHardLabel;
  double clone_lr = 0.02;
  double generator_lr = 0.002;
  double lr_drop_factor = 0.3;
  std::vector<double> lr_drop_fractions = {0.4, 0.8};
  bool lr_drops_enabled = false;  // relaxed-budget regime only
  std::size_t replay_capacity = 10000;
  std::uint64_t seed = 1;
  std::size_t clone_iterations = 1;
  std::size_t input_dim = 0;
  std::size_t head_capacity = 64;
  std::size_t noise_dim = 100;
  std::vector<std::size_t> clone_hidden = {64, 48};
  std::vector<std::size_t> generator_hidden = {128};
  std::size_t eval_every_cycles = 10;
  bool use_selective_query = true;
  bool circular_replay = false;

  void validate() const;
  nlohmann::json to_json() const;
  static ExtractionConfig from_json(const nlohmann::json& j);
};

struct MetricRecord {
  std::size_t cycle = 0;
  std::int64_t spent = 0;
  double accuracy = 0.0;
  double fidelity = 0.0;
  std::size_t discovered_k = 0;
  double lambda = 0.0;
  double clone_loss = 0.0;       // fresh-batch loss, last cycle
  double replay_loss = 0.0;      // mean replay-batch loss, last cycle
  double gen_disagreement = 0.0;
  double gen_diversity = 0.0;

  nlohmann::json to_json() const;
};

// Simulation-only evaluation channel: a private victim copy plus a held-out
// labeled set. Never touches any ledger; extraction code cannot reach the
// victim through it.
class EvaluationContext {
 public:
  EvaluationContext(LabeledDataset eval_set, DenseNetwork victim);

  const LabeledDataset& eval_set() const { return eval_set_; }
  const std::vector<int>& victim_labels() const { return victim_labels_; }

 private:
  LabeledDataset eval_set_;
  DenseNetwork victim_;
  std::vector<int> victim_labels_;  // victim argmax on the eval set, cached
};

// Learning-rate factor for a given spent-budget fraction: 1 before the first
// drop point, multiplied by drop_factor at each crossed point. Disabled
// entirely in the limited-budget regime.
double lr_schedule_factor(double spent_fraction, double drop_factor,
                          const std::vector<double>& drop_fractions, bool enabled);
double lr_schedule(double spent_fraction, double base_lr, double drop_factor,
                   const std::vector<double>& drop_fractions, bool enabled);

struct RunSummary {
  MetricRecord final_record;
  std::size_t cycles = 0;
  std::int64_t spent = 0;
  double wall_seconds = 0.0;
};

// Orchestrates extraction: one unselected bootstrap batch to seed class
// discovery, then Generator Training / Clone Training cycles until the
// budget cannot afford another batch. All victim contact goes through the
// oracle's metered query path.
class ExtractionEngine {
 public:
  ExtractionEngine(const ExtractionConfig& cfg, VictimOracle& oracle,
                   std::optional<EvaluationContext> eval = std::nullopt);

  void bootstrap();
  MetricRecord run_phase_cycle();

  // Accuracy against ground truth and fidelity against the victim's labels
  // on the held-out set; zero budget consumed. Appends to the history.
  MetricRecord evaluate();

  // Full run. Writes one JSON line per evaluation to metrics_log when given.
  RunSummary run(std::ostream* metrics_log = nullptr);

  double scheduled_lr(double base_lr) const;

  CloneEnsemble& clones() { return *clones_; }
  GeneratorEnsemble& generators() { return *generators_; }
  ReplayBase& replay() { return *replay_; }
  ReplayContainer* replay_container();  // null when the ablation buffer is active
  const ExtractionConfig& config() const { return cfg_; }
  std::size_t cycle() const { return cycle_; }
  bool bootstrapped() const { return bootstrapped_; }
  Rng& rng() { return rng_; }
  const std::vector<MetricRecord>& history() const { return history_; }
  const SelectionReport& last_selection() const { return last_selection_; }

  nlohmann::json checkpoint() const;
  void restore(const nlohmann::json& snapshot);

 private:
  // Queries the victim with the batch, applies discovery, trains the clones
  // and offers every labeled sample to the replay. Returns the batch loss.
  double process_fresh_batch(const Tensor& batch);
  std::size_t lambda_k() const;

  ExtractionConfig cfg_;
  VictimOracle* oracle_;
  std::optional<EvaluationContext> eval_;
  Rng rng_;
  std::unique_ptr<CloneEnsemble> clones_;
  std::unique_ptr<GeneratorEnsemble> generators_;
  std::unique_ptr<ReplayBase> replay_;
  std::size_t cycle_ = 0;
  bool bootstrapped_ = false;
  std::vector<MetricRecord> history_;
  SelectionReport last_selection_;

  // Last-cycle loss stats carried into metric records.
  GeneratorLossReport last_gen_report_;
  double last_clone_loss_ = 0.0;
  double last_replay_loss_ = 0.0;
};

}  // namespace dfme
