#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dfme/network.hpp"
#include "dfme/optimizer.hpp"
#include "dfme/rng.hpp"

namespace dfme {

class CloneEnsemble;

// Contiguous [begin, end) index blocks covering [0, batch_size). The first
// batch_size % n blocks carry one extra index, so block sizes differ by at
// most one.
std::vector<std::pair<std::size_t, std::size_t>> partition_batch(std::size_t batch_size,
                                                                 std::size_t n);

struct GeneratorConfig {
  std::size_t count = 8;
  std::size_t noise_dim = 100;
  std::vector<std::size_t> hidden = {128};
  std::size_t output_dim = 0;
  OptimizerConfig optimizer = adam(0.002);
};

// Ensemble of generators that jointly produce every synthetic batch: the
// batch is partitioned into sub-batches and member j generates the rows of
// its block from standard-normal noise through a tanh output.
class GeneratorEnsemble {
 public:
  GeneratorEnsemble(const GeneratorConfig& cfg, Rng& rng);

  // Noise is drawn row by row for the whole batch, then each member runs
  // its block. Fixed rng state -> bit-identical output.
  Tensor generate(std::size_t batch_size, Rng& rng);

  // Same forward pass from caller-supplied noise (gradient checks).
  Tensor forward_noise(const Tensor& noise);

  // Routes dLoss/dOutput rows of the last generate() to the member that
  // produced them and accumulates parameter gradients.
  void backward(const Tensor& output_grad);

  // One optimizer step per member at the given learning rate; gradients are
  // zeroed by the step.
  void step(double learning_rate);

  std::size_t count() const { return cfg_.count; }
  std::size_t noise_dim() const { return cfg_.noise_dim; }
  std::size_t output_dim() const { return cfg_.output_dim; }
  const GeneratorConfig& config() const { return cfg_; }
  std::vector<DenseNetwork>& members() { return members_; }
  const std::vector<DenseNetwork>& members() const { return members_; }
  std::vector<Optimizer>& optimizers() { return optims_; }
  const std::vector<Optimizer>& optimizers() const { return optims_; }

  std::uint64_t param_hash() const;
  std::uint64_t madds() const;
  void reset_madds();

 private:
  GeneratorConfig cfg_;
  std::vector<DenseNetwork> members_;
  std::vector<Optimizer> optims_;
  std::vector<std::pair<std::size_t, std::size_t>> last_blocks_;
  bool has_cache_ = false;
};

// Per-sample disagreement: mean over classes of the population standard
// deviation of the clone probabilities. Needs at least two clones.
std::vector<double> disagreement_per_sample(const std::vector<Tensor>& clone_probs);

// L_D: batch mean of the per-sample disagreement.
double disagreement_loss(const std::vector<Tensor>& clone_probs);

// L_div: entropy of the class distribution obtained by averaging the clone
// probabilities over members and over the batch.
double diversity_loss(const std::vector<Tensor>& clone_probs);

// lambda = 4 / (10 + K).
double lambda_schedule(std::size_t discovered_classes);

// Quantities to maximize; the optimizer minimizes their negation.
struct GeneratorLossReport {
  double disagreement = 0.0;  // L_D
  double diversity = 0.0;     // L_div
  double lambda = 0.0;
  double total = 0.0;         // L_D + lambda * L_div
};

// Gradient of -(L_D + lambda L_div) with respect to each clone's probability
// tensor. Exposed for gradient checking.
std::vector<Tensor> generator_objective_prob_grads(const std::vector<Tensor>& clone_probs,
                                                   double lambda);

// Runs `batches` generator-training iterations: generate a full batch,
// score it with the frozen clones, backpropagate -(L_D + lambda L_div) into
// each member's own sub-batch and step each member's optimizer. Clone
// parameters are untouched and no victim queries are spent. The report
// carries the last batch's loss values.
GeneratorLossReport train_generators(GeneratorEnsemble& generators, CloneEnsemble& clones,
                                     std::size_t batches, std::size_t batch_size,
                                     std::size_t discovered_classes, double learning_rate,
                                     Rng& rng);

}  // namespace dfme
