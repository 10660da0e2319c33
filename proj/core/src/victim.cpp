#include "dfme/victim.hpp"

#include <chrono>
#include <cmath>

namespace dfme {

std::string to_string(ResponseMode mode) {
  return mode == ResponseMode::kHardLabel ? "HL" : "SL";
}

ResponseMode response_mode_from_string(const std::string& name) {
  if (name == "HL" || name == "hl") return ResponseMode::kHardLabel;
  if (name == "SL" || name == "sl") return ResponseMode::kSoftLabel;
  throw ConfigError("unknown response mode '" + name + "'");
}

BudgetLedger::BudgetLedger(std::int64_t budget) : budget_(budget) {
  if (budget < 0) throw ConfigError("negative query budget");
}

std::int64_t BudgetLedger::spent() const {
  std::lock_guard<std::mutex> lock(mu_);
  return spent_;
}

std::int64_t BudgetLedger::remaining() const {
  std::lock_guard<std::mutex> lock(mu_);
  return budget_ - spent_;
}

void BudgetLedger::charge(std::int64_t batch_size) {
  if (batch_size <= 0) throw DomainError("ledger charge must be positive");
  std::lock_guard<std::mutex> lock(mu_);
  if (spent_ + batch_size > budget_) {
    throw BudgetExhausted(budget_ - spent_);
  }
  spent_ += batch_size;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  log_.push_back(QueryEvent{
      batch_size,
      std::chrono::duration_cast<std::chrono::milliseconds>(now).count()});
}

std::vector<QueryEvent> BudgetLedger::log() const {
  std::lock_guard<std::mutex> lock(mu_);
  return log_;
}

void BudgetLedger::restore(std::int64_t spent, std::vector<QueryEvent> log) {
  std::lock_guard<std::mutex> lock(mu_);
  spent_ = spent;
  log_ = std::move(log);
}

LocalVictimOracle::LocalVictimOracle(DenseNetwork victim, ResponseMode mode,
                                     std::int64_t budget)
    : net_(std::move(victim)), mode_(mode), ledger_(budget) {}

VictimResponse LocalVictimOracle::query(const Tensor& batch) {
  std::lock_guard<std::mutex> lock(query_mu_);
  if (batch.rank() != 2 || batch.cols() != net_.input_dim()) {
    throw DimensionError("query: batch shape " + shape_string(batch.shape) +
                         " does not match victim input shape [B, " +
                         std::to_string(net_.input_dim()) + "]");
  }
  ledger_.charge(static_cast<std::int64_t>(batch.rows()));

  const Tensor logits = net_.forward(batch);
  VictimResponse resp;
  resp.mode = mode_;
  if (mode_ == ResponseMode::kHardLabel) {
    resp.hard_labels = argmax_rows(logits);
  } else {
    resp.probabilities = softmax(logits);
  }
  return resp;
}

Tensor pseudo_logits(const Tensor& probs) {
  const std::size_t rows = probs.rows();
  const std::size_t cols = probs.cols();
  if (cols == 0) throw DimensionError("pseudo_logits over empty rows");
  Tensor out(probs.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = probs.data.data() + r * cols;
    double* o = out.data.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::log(std::max(p[c], 1e-12));
      mean += o[c];
    }
    mean /= static_cast<double>(cols);
    for (std::size_t c = 0; c < cols; ++c) o[c] -= mean;
  }
  return out;
}

std::vector<int> simulation_only_labels(DenseNetwork& net, const Tensor& batch) {
  return argmax_rows(net.forward(batch));
}

double classification_accuracy(DenseNetwork& net, const LabeledDataset& ds) {
  if (ds.size() == 0) throw DomainError("accuracy over an empty dataset");
  const auto labels = simulation_only_labels(net, ds.inputs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == ds.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

VictimTrainResult train_desk_victim(const LabeledDataset& train, const LabeledDataset& test,
                                    DenseNetwork arch, const VictimTrainConfig& cfg) {
  if (train.size() == 0) throw DomainError("empty training dataset");
  train.validate();
  if (arch.output_dim() < static_cast<std::size_t>(train.num_classes)) {
    throw ConfigError("victim output width " + std::to_string(arch.output_dim()) +
                      " smaller than class count " + std::to_string(train.num_classes));
  }

  Rng rng(cfg.seed);
  const std::size_t n = train.size();
  const std::size_t d = train.input_dim();
  const std::size_t k = arch.output_dim();

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  // Momentum buffers, one per parameter tensor.
  std::vector<std::vector<double>> velocity;
  arch.for_each_param([&](Tensor& p) { velocity.emplace_back(p.size(), 0.0); });

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      Tensor batch({b, d});
      std::vector<int> targets(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = order[start + i];
        std::copy(train.inputs.row(src).begin(), train.inputs.row(src).end(),
                  batch.row(i).begin());
        targets[i] = train.labels[src];
      }

      const Tensor logits = arch.forward(batch);
      const Tensor probs = softmax(logits);
      double loss = 0.0;
      Tensor dlogits({b, k});
      for (std::size_t i = 0; i < b; ++i) {
        const double p = probs(i, static_cast<std::size_t>(targets[i]));
        loss -= std::log(std::max(p, 1e-300));
        for (std::size_t c = 0; c < k; ++c) {
          dlogits(i, c) = probs(i, c) / static_cast<double>(b);
        }
        dlogits(i, static_cast<std::size_t>(targets[i])) -= 1.0 / static_cast<double>(b);
      }
      loss /= static_cast<double>(b);
      epoch_loss += loss;
      ++batches;
      if (!std::isfinite(loss)) {
        throw TrainingError("victim training diverged (non-finite loss) at epoch " +
                            std::to_string(epoch));
      }

      arch.backward(dlogits);
      std::size_t pi = 0;
      arch.for_each_param([&](Tensor& p) {
        auto& v = velocity[pi++];
        const auto& g = p.grad_ref();
        for (std::size_t j = 0; j < v.size(); ++j) {
          v[j] = cfg.momentum * v[j] + g[j];
          p.data[j] -= cfg.learning_rate * v[j];
        }
      });
      arch.zero_grads();
    }
    (void)epoch_loss;
    (void)batches;
  }

  VictimTrainResult result;
  result.net = std::move(arch);
  result.train_accuracy = classification_accuracy(result.net, train);
  result.test_accuracy = test.size() > 0 ? classification_accuracy(result.net, test) : 0.0;
  return result;
}

std::vector<std::size_t> parse_arch(const std::string& arch) {
  std::vector<std::size_t> dims;
  std::string token;
  std::istringstream ss(arch);
  while (std::getline(ss, token, '-')) {
    if (token.empty() || token.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("bad architecture token '" + token + "' in '" + arch + "'");
    }
    dims.push_back(std::stoul(token));
  }
  if (dims.size() < 2) {
    throw ConfigError("architecture '" + arch + "' needs at least input and output widths");
  }
  return dims;
}

}  // namespace dfme
