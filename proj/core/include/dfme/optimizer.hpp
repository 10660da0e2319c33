#pragma once

#include <cstdint>
#include <vector>

#include "dfme/network.hpp"

namespace dfme {

enum class OptimizerKind { kSgdMomentum, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  double learning_rate = 0.01;
  double momentum = 0.9;    // SGD
  double beta1 = 0.9;       // Adam
  double beta2 = 0.999;     // Adam
  double epsilon = 1e-8;    // Adam
};

inline OptimizerConfig sgd_momentum(double lr, double momentum = 0.9) {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kSgdMomentum;
  cfg.learning_rate = lr;
  cfg.momentum = momentum;
  return cfg;
}

inline OptimizerConfig adam(double lr, double beta1 = 0.9, double beta2 = 0.999) {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kAdam;
  cfg.learning_rate = lr;
  cfg.beta1 = beta1;
  cfg.beta2 = beta2;
  return cfg;
}

// Classic SGD-with-momentum and bias-corrected Adam over one network's
// parameters. Accumulator buffers mirror the parameter layout and are
// allocated lazily on the first step. step() applies the update and zeroes
// the network's gradients.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void step(DenseNetwork& net);

  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  double learning_rate() const { return cfg_.learning_rate; }
  const OptimizerConfig& config() const { return cfg_; }

  // State access for serialization.
  std::vector<std::vector<double>>& slot1() { return slot1_; }
  std::vector<std::vector<double>>& slot2() { return slot2_; }
  const std::vector<std::vector<double>>& slot1() const { return slot1_; }
  const std::vector<std::vector<double>>& slot2() const { return slot2_; }
  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t t) { step_count_ = t; }

 private:
  void ensure_buffers(DenseNetwork& net);

  OptimizerConfig cfg_;
  std::vector<std::vector<double>> slot1_;  // momentum / first moment
  std::vector<std::vector<double>> slot2_;  // second moment (Adam only)
  std::int64_t step_count_ = 0;
};

}  // namespace dfme
