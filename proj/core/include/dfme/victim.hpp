#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "dfme/dataset.hpp"
#include "dfme/network.hpp"
#include "dfme/ops.hpp"
#include "dfme/tensor.hpp"

namespace dfme {

enum class ResponseMode { kHardLabel, kSoftLabel };

std::string to_string(ResponseMode mode);
ResponseMode response_mode_from_string(const std::string& name);

struct VictimResponse {
  ResponseMode mode = ResponseMode::kHardLabel;
  std::vector<int> hard_labels;  // HL: one class id per input
  Tensor probabilities;          // SL: [B, K] rows summing to 1
};

struct QueryEvent {
  std::int64_t batch_size = 0;
  std::int64_t timestamp_ms = 0;
};

// Append-only accounting of every input sent to the victim. A query is
// admitted atomically or rejected; spent never exceeds budget. This is the
// serialization point for concurrent clients.
class BudgetLedger {
 public:
  explicit BudgetLedger(std::int64_t budget);

  std::int64_t budget() const { return budget_; }
  std::int64_t spent() const;
  std::int64_t remaining() const;

  // Throws BudgetExhausted (carrying the affordable remainder) when the
  // charge would exceed the budget.
  void charge(std::int64_t batch_size);

  std::vector<QueryEvent> log() const;

  // Serialization support (single-threaded contexts only).
  void restore(std::int64_t spent, std::vector<QueryEvent> log);

 private:
  mutable std::mutex mu_;
  std::int64_t budget_ = 0;
  std::int64_t spent_ = 0;
  std::vector<QueryEvent> log_;
};

// Black-box query interface. Every forward pass through a victim costs one
// budget unit; there is no other way in.
class VictimOracle {
 public:
  virtual ~VictimOracle() = default;
  virtual VictimResponse query(const Tensor& batch) = 0;
  virtual ResponseMode mode() const = 0;
  virtual std::int64_t spent() = 0;
  virtual std::int64_t budget() = 0;
};

class LocalVictimOracle final : public VictimOracle {
 public:
  LocalVictimOracle(DenseNetwork victim, ResponseMode mode, std::int64_t budget);

  VictimResponse query(const Tensor& batch) override;
  ResponseMode mode() const override { return mode_; }
  std::int64_t spent() override { return ledger_.spent(); }
  std::int64_t budget() override { return ledger_.budget(); }

  BudgetLedger& ledger() { return ledger_; }
  const DenseNetwork& network() const { return net_; }
  std::size_t num_classes() const { return net_.output_dim(); }

 private:
  DenseNetwork net_;
  ResponseMode mode_;
  BudgetLedger ledger_;
  std::mutex query_mu_;
};

// DFME-style pseudo logits: clamp probabilities at 1e-12, take logs and
// center each row to zero mean.
Tensor pseudo_logits(const Tensor& probs);

// Plain argmax labels from a network, outside any ledger. Exists for victim
// training/evaluation harnesses only; extraction code must go through
// VictimOracle::query.
std::vector<int> simulation_only_labels(DenseNetwork& net, const Tensor& batch);

double classification_accuracy(DenseNetwork& net, const LabeledDataset& ds);

struct VictimTrainConfig {
  std::size_t epochs = 40;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
};

struct VictimTrainResult {
  DenseNetwork net;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Small-scale victim trainer: SGD with momentum on softmax cross-entropy.
// The architecture arrives initialized; epochs == 0 returns it unchanged.
// Throws TrainingError naming the epoch if the loss turns non-finite.
VictimTrainResult train_desk_victim(const LabeledDataset& train, const LabeledDataset& test,
                                    DenseNetwork arch, const VictimTrainConfig& cfg);

// "input-hidden-...-output" -> layer widths, e.g. "64-48-32-10".
std::vector<std::size_t> parse_arch(const std::string& arch);

}  // namespace dfme
