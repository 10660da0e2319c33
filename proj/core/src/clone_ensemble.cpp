#include "dfme/clone_ensemble.hpp"

#include <cmath>

namespace dfme {

std::size_t ClassRegistry::discover(int victim_id, std::int64_t spent_at) {
  const auto it = index_.find(victim_id);
  if (it != index_.end()) return it->second;
  const std::size_t head = victim_ids_.size();
  index_.emplace(victim_id, head);
  victim_ids_.push_back(victim_id);
  log_.push_back(DiscoveryEvent{victim_id, spent_at});
  return head;
}

std::optional<std::size_t> ClassRegistry::head_index(int victim_id) const {
  const auto it = index_.find(victim_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int ClassRegistry::victim_id(std::size_t head_index) const {
  if (head_index >= victim_ids_.size()) {
    throw DomainError("head index " + std::to_string(head_index) + " not registered");
  }
  return victim_ids_[head_index];
}

double hard_label_loss(const Tensor& logits, const std::vector<int>& target_heads,
                       Tensor* dlogits, std::vector<double>* per_sample) {
  const std::size_t b = logits.rows();
  const std::size_t k = logits.cols();
  if (target_heads.size() != b) {
    throw DimensionError("hard_label_loss: " + std::to_string(b) + " rows vs " +
                         std::to_string(target_heads.size()) + " targets");
  }
  for (int t : target_heads) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw DomainError("target head index " + std::to_string(t) + " outside [0, " +
                        std::to_string(k) + ")");
    }
  }

  const Tensor probs = softmax(logits);
  if (dlogits) *dlogits = Tensor({b, k});
  if (per_sample) per_sample->assign(b, 0.0);

  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t r = 0; r < b; ++r) {
    const auto target = static_cast<std::size_t>(target_heads[r]);
    const double p = probs(r, target);
    const double sample_loss = -std::log(std::max(p, 1e-300));
    loss += sample_loss;
    if (per_sample) (*per_sample)[r] = sample_loss;
    if (dlogits) {
      for (std::size_t c = 0; c < k; ++c) (*dlogits)(r, c) = probs(r, c) * inv_b;
      (*dlogits)(r, target) -= inv_b;
    }
  }
  return loss * inv_b;
}

double soft_label_loss(const Tensor& logits, const Tensor& victim_pseudo_logits,
                       Tensor* dlogits, std::vector<double>* per_sample) {
  if (logits.shape != victim_pseudo_logits.shape) {
    throw DimensionError("soft_label_loss: shapes " + shape_string(logits.shape) +
                         " vs " + shape_string(victim_pseudo_logits.shape));
  }
  const std::size_t b = logits.rows();
  const std::size_t k = logits.cols();
  if (dlogits) *dlogits = Tensor({b, k});
  if (per_sample) per_sample->assign(b, 0.0);

  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t r = 0; r < b; ++r) {
    double row_loss = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double diff = logits(r, c) - victim_pseudo_logits(r, c);
      row_loss += diff * diff;
      if (dlogits) (*dlogits)(r, c) = 2.0 * diff * inv_b;
    }
    loss += row_loss;
    if (per_sample) (*per_sample)[r] = row_loss;
  }
  return loss * inv_b;
}

CloneEnsemble::CloneEnsemble(const CloneConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.count < 2) {
    throw ConfigError("clone ensemble needs at least 2 members for disagreement");
  }
  if (cfg_.input_dim == 0) throw ConfigError("clone input_dim not set");
  if (cfg_.head_capacity == 0) throw ConfigError("clone head_capacity must be positive");

  members_.reserve(cfg_.count);
  optims_.reserve(cfg_.count);
  for (std::size_t i = 0; i < cfg_.count; ++i) {
    DenseNetwork net = DenseNetwork::mlp(cfg_.input_dim, cfg_.hidden, cfg_.head_capacity,
                                         Activation::kLinear);
    net.init_params(rng);
    members_.push_back(std::move(net));
    optims_.emplace_back(cfg_.optimizer);
  }
}

std::size_t CloneEnsemble::discover_class(int victim_label, std::int64_t spent_at) {
  if (cfg_.mode != ResponseMode::kHardLabel) {
    throw ModeError("discover_class is hard-label only; SL head width is fixed by "
                    "the first victim response");
  }
  if (const auto existing = registry_.head_index(victim_label)) return *existing;

  const std::size_t head = registry_.size();
  if (head >= cfg_.head_capacity) {
    throw ConfigError("head capacity " + std::to_string(cfg_.head_capacity) +
                      " exhausted at discovery of class " + std::to_string(victim_label));
  }

  // Activate one more unit: zero incoming weights, bias = min active bias,
  // so the new class starts as the least likely prediction.
  for (auto& member : members_) {
    auto& out_layer = member.layers().back();
    const std::size_t in = out_layer.weight.shape[1];
    double* w = out_layer.weight.data.data() + head * in;
    std::fill(w, w + in, 0.0);
    double min_bias = 0.0;
    for (std::size_t h = 0; h < head; ++h) {
      min_bias = h == 0 ? out_layer.bias.data[h] : std::min(min_bias, out_layer.bias.data[h]);
    }
    out_layer.bias.data[head] = min_bias;
  }

  return registry_.discover(victim_label, spent_at);
}

void CloneEnsemble::fix_head_width(std::size_t k) {
  if (cfg_.mode != ResponseMode::kSoftLabel) {
    throw ModeError("fix_head_width is soft-label only");
  }
  if (head_fixed_) {
    if (registry_.size() != k) {
      throw StateError("SL head width already fixed to " + std::to_string(registry_.size()));
    }
    return;
  }
  if (k == 0 || k > cfg_.head_capacity) {
    throw ConfigError("SL response width " + std::to_string(k) +
                      " outside head capacity " + std::to_string(cfg_.head_capacity));
  }
  for (std::size_t c = 0; c < k; ++c) registry_.discover(static_cast<int>(c), 0);
  head_fixed_ = true;
}

Tensor CloneEnsemble::gather_active(const Tensor& full_logits) const {
  const std::size_t b = full_logits.rows();
  const std::size_t k = registry_.size();
  Tensor active({b, k});
  for (std::size_t r = 0; r < b; ++r) {
    const double* src = full_logits.data.data() + r * cfg_.head_capacity;
    double* dst = active.data.data() + r * k;
    std::copy(src, src + k, dst);
  }
  return active;
}

Tensor CloneEnsemble::scatter_active(const Tensor& grad_active) const {
  const std::size_t b = grad_active.rows();
  const std::size_t k = registry_.size();
  Tensor full({b, cfg_.head_capacity});
  for (std::size_t r = 0; r < b; ++r) {
    const double* src = grad_active.data.data() + r * k;
    double* dst = full.data.data() + r * cfg_.head_capacity;
    std::copy(src, src + k, dst);
  }
  return full;
}

ClonePrediction CloneEnsemble::predict(const Tensor& batch) {
  const std::size_t k = registry_.size();
  if (k == 0) throw StateError("predict before any class was discovered");

  const std::size_t b = batch.rows();
  ClonePrediction pred;
  pred.per_clone_probs.reserve(members_.size());
  pred.ensemble_probs = Tensor({b, k});

  for (auto& member : members_) {
    const Tensor logits = gather_active(member.forward(batch));
    Tensor probs = softmax(logits);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      pred.ensemble_probs.data[i] += probs.data[i];
    }
    pred.per_clone_probs.push_back(std::move(probs));
  }
  const double inv_m = 1.0 / static_cast<double>(members_.size());
  for (double& v : pred.ensemble_probs.data) v *= inv_m;
  pred.labels = argmax_rows(pred.ensemble_probs);

  last_probs_ = pred.per_clone_probs;
  has_prediction_ = true;
  return pred;
}

Tensor CloneEnsemble::backprop_prob_grads_to_input(const std::vector<Tensor>& prob_grads) {
  if (!has_prediction_) {
    throw StateError("backprop_prob_grads_to_input without a preceding predict");
  }
  if (prob_grads.size() != members_.size()) {
    throw DimensionError("expected one probability gradient per clone member");
  }

  const std::size_t k = registry_.size();
  Tensor input_grad;
  for (std::size_t m = 0; m < members_.size(); ++m) {
    const Tensor& probs = last_probs_[m];
    const Tensor& dprobs = prob_grads[m];
    if (dprobs.shape != probs.shape) {
      throw DimensionError("probability gradient shape mismatch for member " +
                           std::to_string(m));
    }
    const std::size_t b = probs.rows();

    // Softmax Jacobian: dz_j = p_j (g_j - sum_k g_k p_k).
    Tensor dlogits({b, k});
    for (std::size_t r = 0; r < b; ++r) {
      const double* p = probs.data.data() + r * k;
      const double* g = dprobs.data.data() + r * k;
      double dot = 0.0;
      for (std::size_t c = 0; c < k; ++c) dot += g[c] * p[c];
      double* dz = dlogits.data.data() + r * k;
      for (std::size_t c = 0; c < k; ++c) dz[c] = p[c] * (g[c] - dot);
    }

    Tensor member_grad = members_[m].backward(scatter_active(dlogits), /*param_grads=*/false);
    if (m == 0) {
      input_grad = std::move(member_grad);
    } else {
      for (std::size_t i = 0; i < input_grad.size(); ++i) {
        input_grad.data[i] += member_grad.data[i];
      }
    }
  }
  return input_grad;
}

CloneTrainResult CloneEnsemble::train_on_batch(const Tensor& batch,
                                               const CloneBatchTargets& targets,
                                               std::size_t iterations, double learning_rate) {
  const std::size_t k = registry_.size();
  if (k == 0) throw StateError("training before any class was discovered");
  if (targets.mode != cfg_.mode) throw ModeError("target mode does not match clone mode");
  const std::size_t b = batch.rows();
  if (cfg_.mode == ResponseMode::kHardLabel && targets.head_indices.size() != b) {
    throw DimensionError("head index count does not match batch");
  }

  CloneTrainResult result;
  result.per_sample_loss.assign(b, 0.0);
  const double inv_m = 1.0 / static_cast<double>(members_.size());

  auto member_pass = [&](std::size_t m, bool train, bool record) {
    DenseNetwork& member = members_[m];
    const Tensor logits = gather_active(member.forward(batch));
    Tensor dlogits;
    std::vector<double> per_sample;
    double loss = 0.0;
    if (cfg_.mode == ResponseMode::kHardLabel) {
      loss = hard_label_loss(logits, targets.head_indices, train ? &dlogits : nullptr,
                             &per_sample);
    } else {
      loss = soft_label_loss(logits, targets.pseudo_logits, train ? &dlogits : nullptr,
                             &per_sample);
    }
    if (record) {
      for (std::size_t i = 0; i < b; ++i) result.per_sample_loss[i] += per_sample[i] * inv_m;
      result.batch_loss += loss * inv_m;
    }
    if (train) {
      member.backward(scatter_active(dlogits));
      optims_[m].set_learning_rate(learning_rate);
      optims_[m].step(member);
    }
  };

  if (iterations == 0) {
    for (std::size_t m = 0; m < members_.size(); ++m) member_pass(m, false, true);
    return result;
  }
  // Reported losses are the ones observed by the final training step,
  // i.e. the most recent values available for replay bookkeeping.
  for (std::size_t it = 0; it < iterations; ++it) {
    const bool record = it + 1 == iterations;
    for (std::size_t m = 0; m < members_.size(); ++m) member_pass(m, true, record);
  }
  return result;
}

Tensor CloneEnsemble::member_logits(std::size_t member, const Tensor& batch) {
  if (member >= members_.size()) throw DomainError("clone member index out of range");
  if (registry_.size() == 0) throw StateError("no classes discovered");
  return gather_active(members_[member].forward(batch));
}

std::uint64_t CloneEnsemble::param_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& member : members_) {
    const std::uint64_t mh = member.param_hash();
    h = fnv1a(&mh, sizeof(mh), h);
  }
  return h;
}

}  // namespace dfme
