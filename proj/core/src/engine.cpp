#include "dfme/engine.hpp"

#include <chrono>
#include <cmath>

#include "dfme/serialize.hpp"

namespace dfme {

using nlohmann::json;

void ExtractionConfig::validate() const {
  if (budget < static_cast<std::int64_t>(batch_size)) {
    throw ConfigError("budget " + std::to_string(budget) +
                      " cannot afford one batch of " + std::to_string(batch_size));
  }
  if (batch_size == 0 || pool_size == 0 || replay_batches_per_phase == 0 ||
      clone_count == 0 || generator_count == 0 || replay_capacity == 0 ||
      clone_iterations == 0 || head_capacity == 0 || noise_dim == 0 ||
      eval_every_cycles == 0) {
    throw ConfigError("all extraction counts must be positive");
  }
  if (clone_count < 2) {
    throw ConfigError("clone ensemble size must be at least 2 (disagreement needs it)");
  }
  if (pool_size < batch_size) {
    throw ConfigError("pool size must be at least the batch size");
  }
  if (generator_count > batch_size) {
    throw ConfigError("more generators than batch rows");
  }
  if (input_dim == 0) throw ConfigError("input_dim not set");
  double prev = 0.0;
  for (double f : lr_drop_fractions) {
    if (f <= prev || f >= 1.0) {
      throw ConfigError("lr drop fractions must be strictly increasing in (0, 1)");
    }
    prev = f;
  }
}

json ExtractionConfig::to_json() const {
  json j;
  j["budget"] = budget;
  j["batch_size"] = batch_size;
  j["pool_size"] = pool_size;
  j["generator_batches_per_phase"] = generator_batches_per_phase;
  j["replay_batches_per_phase"] = replay_batches_per_phase;
  j["clone_count"] = clone_count;
  j["generator_count"] = generator_count;
  j["mode"] = to_string(mode);
  j["clone_lr"] = clone_lr;
  j["generator_lr"] = generator_lr;
  j["lr_drop_factor"] = lr_drop_factor;
  j["lr_drop_fractions"] = lr_drop_fractions;
  j["lr_drops_enabled"] = lr_drops_enabled;
  j["replay_capacity"] = replay_capacity;
  j["seed"] = seed;
  j["clone_iterations"] = clone_iterations;
  j["input_dim"] = input_dim;
  j["head_capacity"] = head_capacity;
  j["noise_dim"] = noise_dim;
  j["clone_hidden"] = clone_hidden;
  j["generator_hidden"] = generator_hidden;
  j["eval_every_cycles"] = eval_every_cycles;
  j["use_selective_query"] = use_selective_query;
  j["circular_replay"] = circular_replay;
  return j;
}

ExtractionConfig ExtractionConfig::from_json(const json& j) {
  ExtractionConfig cfg;
  cfg.budget = j.at("budget").get<std::int64_t>();
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.pool_size = j.at("pool_size").get<std::size_t>();
  cfg.generator_batches_per_phase = j.at("generator_batches_per_phase").get<std::size_t>();
  cfg.replay_batches_per_phase = j.at("replay_batches_per_phase").get<std::size_t>();
  cfg.clone_count = j.at("clone_count").get<std::size_t>();
  cfg.generator_count = j.at("generator_count").get<std::size_t>();
  cfg.mode = response_mode_from_string(j.at("mode").get<std::string>());
  cfg.clone_lr = j.at("clone_lr").get<double>();
  cfg.generator_lr = j.at("generator_lr").get<double>();
  cfg.lr_drop_factor = j.at("lr_drop_factor").get<double>();
  cfg.lr_drop_fractions = j.at("lr_drop_fractions").get<std::vector<double>>();
  cfg.lr_drops_enabled = j.at("lr_drops_enabled").get<bool>();
  cfg.replay_capacity = j.at("replay_capacity").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.clone_iterations = j.at("clone_iterations").get<std::size_t>();
  cfg.input_dim = j.at("input_dim").get<std::size_t>();
  cfg.head_capacity = j.at("head_capacity").get<std::size_t>();
  cfg.noise_dim = j.at("noise_dim").get<std::size_t>();
  cfg.clone_hidden = j.at("clone_hidden").get<std::vector<std::size_t>>();
  cfg.generator_hidden = j.at("generator_hidden").get<std::vector<std::size_t>>();
  cfg.eval_every_cycles = j.at("eval_every_cycles").get<std::size_t>();
  cfg.use_selective_query = j.at("use_selective_query").get<bool>();
  cfg.circular_replay = j.at("circular_replay").get<bool>();
  return cfg;
}

double lr_schedule_factor(double spent_fraction, double drop_factor,
                          const std::vector<double>& drop_fractions, bool enabled) {
  if (!enabled) return 1.0;
  double factor = 1.0;
  for (double frac : drop_fractions) {
    if (spent_fraction >= frac) factor *= drop_factor;
  }
  return factor;
}

double lr_schedule(double spent_fraction, double base_lr, double drop_factor,
                   const std::vector<double>& drop_fractions, bool enabled) {
  return base_lr * lr_schedule_factor(spent_fraction, drop_factor, drop_fractions, enabled);
}

EvaluationContext::EvaluationContext(LabeledDataset eval_set, DenseNetwork victim)
    : eval_set_(std::move(eval_set)), victim_(std::move(victim)) {
  if (eval_set_.size() == 0) throw DomainError("empty evaluation set");
  eval_set_.validate();
  victim_labels_ = simulation_only_labels(victim_, eval_set_.inputs);
}

json MetricRecord::to_json() const {
  json j;
  j["cycle"] = cycle;
  j["spent"] = spent;
  j["accuracy"] = accuracy;
  j["fidelity"] = fidelity;
  j["K"] = discovered_k;
  j["lambda"] = lambda;
  j["clone_loss"] = clone_loss;
  j["replay_loss"] = replay_loss;
  j["gen_disagreement"] = gen_disagreement;
  j["gen_diversity"] = gen_diversity;
  return j;
}

ExtractionEngine::ExtractionEngine(const ExtractionConfig& cfg, VictimOracle& oracle,
                                   std::optional<EvaluationContext> eval)
    : cfg_(cfg), oracle_(&oracle), eval_(std::move(eval)), rng_(cfg.seed) {
  cfg_.validate();
  if (oracle_->mode() != cfg_.mode) {
    throw ConfigError("oracle mode does not match extraction config mode");
  }

  CloneConfig clone_cfg;
  clone_cfg.count = cfg_.clone_count;
  clone_cfg.input_dim = cfg_.input_dim;
  clone_cfg.hidden = cfg_.clone_hidden;
  clone_cfg.head_capacity = cfg_.head_capacity;
  clone_cfg.mode = cfg_.mode;
  clone_cfg.optimizer = sgd_momentum(cfg_.clone_lr);
  clones_ = std::make_unique<CloneEnsemble>(clone_cfg, rng_);

  GeneratorConfig gen_cfg;
  gen_cfg.count = cfg_.generator_count;
  gen_cfg.noise_dim = cfg_.noise_dim;
  gen_cfg.hidden = cfg_.generator_hidden;
  gen_cfg.output_dim = cfg_.input_dim;
  gen_cfg.optimizer = adam(cfg_.generator_lr);
  generators_ = std::make_unique<GeneratorEnsemble>(gen_cfg, rng_);

  if (cfg_.circular_replay) {
    replay_ = std::make_unique<CircularReplay>(cfg_.replay_capacity);
  } else {
    // The replay owns a dedicated rng stream so container-internal eviction
    // draws do not perturb the engine stream.
    replay_ = std::make_unique<ReplayContainer>(cfg_.replay_capacity, cfg_.seed ^ 0x9e3779b97f4a7c15ull);
  }
}

ReplayContainer* ExtractionEngine::replay_container() {
  return dynamic_cast<ReplayContainer*>(replay_.get());
}

std::size_t ExtractionEngine::lambda_k() const { return clones_->discovered(); }

double ExtractionEngine::scheduled_lr(double base_lr) const {
  const double fraction = static_cast<double>(oracle_->spent()) /
                          static_cast<double>(std::max<std::int64_t>(cfg_.budget, 1));
  return lr_schedule(fraction, base_lr, cfg_.lr_drop_factor, cfg_.lr_drop_fractions,
                     cfg_.lr_drops_enabled);
}

double ExtractionEngine::process_fresh_batch(const Tensor& batch) {
  const VictimResponse resp = oracle_->query(batch);
  const std::int64_t spent_now = oracle_->spent();
  const std::size_t b = batch.rows();

  CloneBatchTargets targets;
  targets.mode = cfg_.mode;
  std::vector<int> bank_keys(b);

  if (cfg_.mode == ResponseMode::kHardLabel) {
    if (resp.hard_labels.size() != b) {
      throw DimensionError("victim returned " + std::to_string(resp.hard_labels.size()) +
                           " labels for a batch of " + std::to_string(b));
    }
    targets.head_indices.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
      const int label = resp.hard_labels[i];
      targets.head_indices[i] =
          static_cast<int>(clones_->discover_class(label, spent_now));
      replay_->register_class(label);
      bank_keys[i] = label;
    }
  } else {
    if (resp.probabilities.rows() != b) {
      throw DimensionError("victim probability rows do not match the batch");
    }
    clones_->fix_head_width(resp.probabilities.cols());
    targets.pseudo_logits = pseudo_logits(resp.probabilities);
    const auto arg = argmax_rows(resp.probabilities);
    for (std::size_t i = 0; i < b; ++i) {
      replay_->register_class(arg[i]);
      bank_keys[i] = arg[i];
    }
  }

  const CloneTrainResult trained = clones_->train_on_batch(
      batch, targets, cfg_.clone_iterations, scheduled_lr(cfg_.clone_lr));

  std::vector<StoredSample> to_store(b);
  for (std::size_t i = 0; i < b; ++i) {
    to_store[i].input = batch.row_copy(i);
    to_store[i].victim_label = bank_keys[i];
    if (cfg_.mode == ResponseMode::kSoftLabel) {
      to_store[i].probs = resp.probabilities.row_copy(i);
    }
    to_store[i].last_loss = trained.per_sample_loss[i];
  }
  replay_->store(std::move(to_store));
  return trained.batch_loss;
}

void ExtractionEngine::bootstrap() {
  if (bootstrapped_) throw StateError("bootstrap called twice");
  // K = 0 means Selective Query and lambda are undefined, so the first batch
  // is generated unselectively and spent on seeding class discovery.
  const Tensor batch = generators_->generate(cfg_.batch_size, rng_);
  last_clone_loss_ = process_fresh_batch(batch);
  bootstrapped_ = true;
}

MetricRecord ExtractionEngine::run_phase_cycle() {
  if (!bootstrapped_) throw StateError("run_phase_cycle before bootstrap");
  ++cycle_;

  // (a) Generator Training: clones frozen, no victim contact.
  last_gen_report_ =
      train_generators(*generators_, *clones_, cfg_.generator_batches_per_phase,
                       cfg_.batch_size, lambda_k(), scheduled_lr(cfg_.generator_lr), rng_);

  // (b) Clone Training stage 1: select a batch, spend budget, train, store.
  Tensor batch;
  if (cfg_.use_selective_query) {
    const CandidatePool pool =
        build_pool(*generators_, *clones_, cfg_.pool_size, cfg_.batch_size, rng_);
    last_selection_ = select_batch(pool, cfg_.batch_size, clones_->discovered(), rng_);
    batch = Tensor({cfg_.batch_size, cfg_.input_dim});
    for (std::size_t i = 0; i < last_selection_.selected.size(); ++i) {
      const auto src = pool.inputs.row(last_selection_.selected[i]);
      std::copy(src.begin(), src.end(), batch.row(i).begin());
    }
  } else {
    batch = generators_->generate(cfg_.batch_size, rng_);
    last_selection_ = SelectionReport{};
  }
  last_clone_loss_ = process_fresh_batch(batch);

  // (c) Clone Training stage 2: replay only, no victim contact. Stored
  // losses are refreshed after every replay batch.
  double replay_loss_sum = 0.0;
  std::size_t replay_batches = 0;
  for (std::size_t r = 0; r < cfg_.replay_batches_per_phase; ++r) {
    if (replay_->empty()) break;
    const ReplayDraw draw = replay_->sample_balanced(cfg_.batch_size, rng_);

    CloneBatchTargets targets;
    targets.mode = cfg_.mode;
    if (cfg_.mode == ResponseMode::kHardLabel) {
      targets.head_indices.resize(draw.victim_labels.size());
      for (std::size_t i = 0; i < draw.victim_labels.size(); ++i) {
        const auto head = clones_->registry().head_index(draw.victim_labels[i]);
        if (!head) throw StateError("replayed sample of an undiscovered class");
        targets.head_indices[i] = static_cast<int>(*head);
      }
    } else {
      targets.pseudo_logits = pseudo_logits(draw.probs);
    }

    const CloneTrainResult trained =
        clones_->train_on_batch(draw.inputs, targets, 1, scheduled_lr(cfg_.clone_lr));
    replay_->update_losses(draw.refs, trained.per_sample_loss);
    replay_loss_sum += trained.batch_loss;
    ++replay_batches;
  }
  last_replay_loss_ = replay_batches > 0 ? replay_loss_sum / replay_batches : 0.0;

  MetricRecord record;
  record.cycle = cycle_;
  record.spent = oracle_->spent();
  record.discovered_k = clones_->discovered();
  record.lambda = lambda_schedule(lambda_k());
  record.clone_loss = last_clone_loss_;
  record.replay_loss = last_replay_loss_;
  record.gen_disagreement = last_gen_report_.disagreement;
  record.gen_diversity = last_gen_report_.diversity;
  if (!history_.empty()) {
    record.accuracy = history_.back().accuracy;
    record.fidelity = history_.back().fidelity;
  }
  return record;
}

MetricRecord ExtractionEngine::evaluate() {
  if (!eval_) throw StateError("evaluate without an evaluation context");
  const LabeledDataset& ds = eval_->eval_set();

  MetricRecord record;
  record.cycle = cycle_;
  record.spent = oracle_->spent();
  record.discovered_k = clones_->discovered();
  record.lambda = lambda_schedule(lambda_k());
  record.clone_loss = last_clone_loss_;
  record.replay_loss = last_replay_loss_;
  record.gen_disagreement = last_gen_report_.disagreement;
  record.gen_diversity = last_gen_report_.diversity;

  const ClonePrediction pred = clones_->predict(ds.inputs);
  std::size_t correct = 0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int victim_class =
        clones_->registry().victim_id(static_cast<std::size_t>(pred.labels[i]));
    if (victim_class == ds.labels[i]) ++correct;
    if (victim_class == eval_->victim_labels()[i]) ++agree;
  }
  record.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  record.fidelity = static_cast<double>(agree) / static_cast<double>(ds.size());

  history_.push_back(record);
  return record;
}

RunSummary ExtractionEngine::run(std::ostream* metrics_log) {
  const auto start = std::chrono::steady_clock::now();

  auto emit = [&](const MetricRecord& record) {
    if (!metrics_log) return;
    json line = record.to_json();
    if (cfg_.use_selective_query && cycle_ > 0) {
      json counts = json::object();
      for (const auto& [head, count] : last_selection_.per_class_counts) {
        counts[std::to_string(head)] = count;
      }
      line["selection"] = {{"per_class_counts", std::move(counts)},
                           {"deficit_r", last_selection_.deficit_r},
                           {"by_disagreement", last_selection_.deficit_by_disagreement},
                           {"uniform", last_selection_.deficit_uniform}};
    }
    *metrics_log << line.dump() << "\n";
  };

  bootstrap();
  if (eval_) emit(evaluate());

  bool exhausted = false;
  while (!exhausted &&
         oracle_->spent() + static_cast<std::int64_t>(cfg_.batch_size) <= cfg_.budget) {
    try {
      run_phase_cycle();
    } catch (const BudgetExhausted&) {
      // A remote ledger may be tighter than the configured budget; finalize.
      exhausted = true;
    }
    if (eval_ && (cycle_ % cfg_.eval_every_cycles == 0 || exhausted)) {
      emit(evaluate());
    }
  }

  RunSummary summary;
  if (eval_) {
    if (history_.empty() || history_.back().cycle != cycle_) emit(evaluate());
    summary.final_record = history_.back();
  } else {
    summary.final_record.cycle = cycle_;
    summary.final_record.spent = oracle_->spent();
    summary.final_record.discovered_k = clones_->discovered();
    summary.final_record.lambda = lambda_schedule(lambda_k());
  }
  summary.cycles = cycle_;
  summary.spent = oracle_->spent();
  summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summary;
}

json ExtractionEngine::checkpoint() const {
  json j;
  j["config"] = cfg_.to_json();
  j["rng"] = rng_.serialize();
  j["cycle"] = cycle_;
  j["bootstrapped"] = bootstrapped_;
  j["clones"] = clone_ensemble_to_json(*clones_);
  j["generators"] = generator_ensemble_to_json(*generators_);
  if (cfg_.circular_replay) {
    throw StateError("checkpointing is supported for the class-banked replay only");
  }
  j["replay"] = static_cast<const ReplayContainer&>(*replay_).serialize();
  json history = json::array();
  for (const auto& record : history_) history.push_back(record.to_json());
  j["history"] = std::move(history);
  j["last_clone_loss"] = last_clone_loss_;
  j["last_replay_loss"] = last_replay_loss_;
  j["last_gen"] = {{"disagreement", last_gen_report_.disagreement},
                   {"diversity", last_gen_report_.diversity},
                   {"lambda", last_gen_report_.lambda},
                   {"total", last_gen_report_.total}};
  return j;
}

void ExtractionEngine::restore(const json& snapshot) {
  const ExtractionConfig stored = ExtractionConfig::from_json(snapshot.at("config"));
  if (stored.to_json() != cfg_.to_json()) {
    throw ConfigError("snapshot was produced under a different configuration");
  }
  rng_ = Rng::deserialize(snapshot.at("rng").get<std::string>());
  cycle_ = snapshot.at("cycle").get<std::size_t>();
  bootstrapped_ = snapshot.at("bootstrapped").get<bool>();
  restore_clone_ensemble(*clones_, snapshot.at("clones"));
  restore_generator_ensemble(*generators_, snapshot.at("generators"));
  replay_ = std::make_unique<ReplayContainer>(
      ReplayContainer::deserialize(snapshot.at("replay").get<std::string>()));
  history_.clear();
  for (const auto& jr : snapshot.at("history")) {
    MetricRecord record;
    record.cycle = jr.at("cycle").get<std::size_t>();
    record.spent = jr.at("spent").get<std::int64_t>();
    record.accuracy = jr.at("accuracy").get<double>();
    record.fidelity = jr.at("fidelity").get<double>();
    record.discovered_k = jr.at("K").get<std::size_t>();
    record.lambda = jr.at("lambda").get<double>();
    record.clone_loss = jr.at("clone_loss").get<double>();
    record.replay_loss = jr.at("replay_loss").get<double>();
    record.gen_disagreement = jr.at("gen_disagreement").get<double>();
    record.gen_diversity = jr.at("gen_diversity").get<double>();
    history_.push_back(record);
  }
  last_clone_loss_ = snapshot.at("last_clone_loss").get<double>();
  last_replay_loss_ = snapshot.at("last_replay_loss").get<double>();
  const auto& jg = snapshot.at("last_gen");
  last_gen_report_.disagreement = jg.at("disagreement").get<double>();
  last_gen_report_.diversity = jg.at("diversity").get<double>();
  last_gen_report_.lambda = jg.at("lambda").get<double>();
  last_gen_report_.total = jg.at("total").get<double>();
}

}  // namespace dfme
