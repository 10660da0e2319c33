#pragma once

#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "dfme/network.hpp"
#include "dfme/ops.hpp"
#include "dfme/optimizer.hpp"
#include "dfme/victim.hpp"

namespace dfme {

struct DiscoveryEvent {
  int victim_id = 0;
  std::int64_t spent_at = 0;
};

// Append-only map from victim class ids to clone head indices. Indices are
// consecutive 0..K-1 in discovery order.
class ClassRegistry {
 public:
  std::size_t discover(int victim_id, std::int64_t spent_at);
  std::optional<std::size_t> head_index(int victim_id) const;
  int victim_id(std::size_t head_index) const;
  std::size_t size() const { return victim_ids_.size(); }
  const std::vector<DiscoveryEvent>& log() const { return log_; }
  const std::vector<int>& victim_ids() const { return victim_ids_; }

 private:
  std::unordered_map<int, std::size_t> index_;
  std::vector<int> victim_ids_;  // head index -> victim class id
  std::vector<DiscoveryEvent> log_;
};

struct CloneConfig {
  std::size_t count = 2;
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden = {48, 32};
  std::size_t head_capacity = 64;
  ResponseMode mode = ResponseMode::kHardLabel;
  OptimizerConfig optimizer = sgd_momentum(0.01);
};

struct ClonePrediction {
  std::vector<Tensor> per_clone_probs;  // count x [B, K]
  Tensor ensemble_probs;                // [B, K], arithmetic mean over clones
  std::vector<int> labels;              // [B] head indices, lowest-index ties
};

struct CloneBatchTargets {
  ResponseMode mode = ResponseMode::kHardLabel;
  std::vector<int> head_indices;  // HL: target head index per sample
  Tensor pseudo_logits;           // SL: [B, K] regression targets
};

struct CloneTrainResult {
  std::vector<double> per_sample_loss;  // averaged over clone members
  double batch_loss = 0.0;
};

// Cross-entropy over the K discovered classes. Targets are head indices.
// Optionally emits dLoss/dlogits and per-sample losses.
double hard_label_loss(const Tensor& logits, const std::vector<int>& target_heads,
                       Tensor* dlogits = nullptr, std::vector<double>* per_sample = nullptr);

// Mean over the batch of the summed squared difference between clone logits
// and victim pseudo logits.
double soft_label_loss(const Tensor& logits, const Tensor& victim_pseudo_logits,
                       Tensor* dlogits = nullptr, std::vector<double>* per_sample = nullptr);

// Ensemble of clone models sharing one architecture and one class registry.
// The output head is preallocated at head_capacity and masked down to the K
// discovered classes; growth activates one more unit and is behaviorally
// identical to appending it.
class CloneEnsemble {
 public:
  CloneEnsemble(const CloneConfig& cfg, Rng& rng);

  // HL only. Returns the head index of the label, activating a new head
  // unit on every member if the label is new. New units start with zero
  // incoming weights and a bias equal to the minimum active bias.
  std::size_t discover_class(int victim_label, std::int64_t spent_at = 0);

  // SL only. Fixes the head width to the victim's response width; the
  // head-index mapping is the identity.
  void fix_head_width(std::size_t k);

  std::size_t discovered() const { return registry_.size(); }
  ResponseMode mode() const { return cfg_.mode; }

  ClonePrediction predict(const Tensor& batch);

  // Routes dLoss/dProbs of the last predict() through softmax and the clone
  // networks, returning dLoss/dInput summed over members. Parameter
  // gradients are not touched; used for generator training.
  Tensor backprop_prob_grads_to_input(const std::vector<Tensor>& prob_grads);

  // Trains every member `iterations` steps on the batch with the
  // mode-appropriate loss. iterations == 0 only evaluates losses.
  CloneTrainResult train_on_batch(const Tensor& batch, const CloneBatchTargets& targets,
                                  std::size_t iterations, double learning_rate);

  // Active-class logits of one member (test and evaluation access).
  Tensor member_logits(std::size_t member, const Tensor& batch);

  const CloneConfig& config() const { return cfg_; }
  ClassRegistry& registry() { return registry_; }
  const ClassRegistry& registry() const { return registry_; }
  std::vector<DenseNetwork>& members() { return members_; }
  const std::vector<DenseNetwork>& members() const { return members_; }
  std::vector<Optimizer>& optimizers() { return optims_; }
  const std::vector<Optimizer>& optimizers() const { return optims_; }

  // Serialization support.
  bool head_fixed() const { return head_fixed_; }
  void set_head_fixed(bool fixed) { head_fixed_ = fixed; }

  std::uint64_t param_hash() const;

 private:
  Tensor gather_active(const Tensor& full_logits) const;   // [B, cap] -> [B, K]
  Tensor scatter_active(const Tensor& grad_active) const;  // [B, K] -> [B, cap]

  CloneConfig cfg_;
  std::vector<DenseNetwork> members_;
  std::vector<Optimizer> optims_;
  ClassRegistry registry_;
  bool head_fixed_ = false;  // SL: width pinned by the first response

  // Cache of the last predict() for backprop_prob_grads_to_input.
  std::vector<Tensor> last_probs_;
  bool has_prediction_ = false;
};

}  // namespace dfme
