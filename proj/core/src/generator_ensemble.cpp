#include "dfme/generator_ensemble.hpp"

#include <cmath>

#include "dfme/clone_ensemble.hpp"
#include "dfme/ops.hpp"

namespace dfme {

std::vector<std::pair<std::size_t, std::size_t>> partition_batch(std::size_t batch_size,
                                                                 std::size_t n) {
  if (n == 0 || n > batch_size) {
    throw ConfigError("cannot partition batch of " + std::to_string(batch_size) +
                      " into " + std::to_string(n) + " blocks");
  }
  const std::size_t base = batch_size / n;
  const std::size_t extra = batch_size % n;
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  blocks.reserve(n);
  std::size_t begin = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t size = base + (j < extra ? 1 : 0);
    blocks.emplace_back(begin, begin + size);
    begin += size;
  }
  return blocks;
}

GeneratorEnsemble::GeneratorEnsemble(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.count == 0) throw ConfigError("generator ensemble needs at least one member");
  if (cfg_.noise_dim == 0) throw ConfigError("generator noise_dim must be positive");
  if (cfg_.output_dim == 0) throw ConfigError("generator output_dim not set");

  members_.reserve(cfg_.count);
  optims_.reserve(cfg_.count);
  for (std::size_t j = 0; j < cfg_.count; ++j) {
    DenseNetwork net = DenseNetwork::mlp(cfg_.noise_dim, cfg_.hidden, cfg_.output_dim,
                                         Activation::kTanh);
    net.init_params(rng);
    members_.push_back(std::move(net));
    optims_.emplace_back(cfg_.optimizer);
  }
}

Tensor GeneratorEnsemble::generate(std::size_t batch_size, Rng& rng) {
  Tensor noise({batch_size, cfg_.noise_dim});
  for (double& v : noise.data) v = rng.normal();
  return forward_noise(noise);
}

Tensor GeneratorEnsemble::forward_noise(const Tensor& noise) {
  const std::size_t batch_size = noise.rows();
  if (noise.cols() != cfg_.noise_dim) {
    throw DimensionError("noise shape " + shape_string(noise.shape) +
                         " does not match noise dim " + std::to_string(cfg_.noise_dim));
  }
  last_blocks_ = partition_batch(batch_size, cfg_.count);

  Tensor out({batch_size, cfg_.output_dim});
  for (std::size_t j = 0; j < cfg_.count; ++j) {
    const auto [begin, end] = last_blocks_[j];
    const std::size_t rows = end - begin;
    Tensor block_noise({rows, cfg_.noise_dim});
    std::copy(noise.data.begin() + begin * cfg_.noise_dim,
              noise.data.begin() + end * cfg_.noise_dim, block_noise.data.begin());
    const Tensor block_out = members_[j].forward(block_noise);
    std::copy(block_out.data.begin(), block_out.data.end(),
              out.data.begin() + begin * cfg_.output_dim);
  }
  has_cache_ = true;
  return out;
}

void GeneratorEnsemble::backward(const Tensor& output_grad) {
  if (!has_cache_) throw StateError("generator backward before generate");
  const std::size_t batch_size = last_blocks_.back().second;
  if (output_grad.rows() != batch_size || output_grad.cols() != cfg_.output_dim) {
    throw DimensionError("output gradient shape " + shape_string(output_grad.shape) +
                         " does not match last generated batch");
  }
  for (std::size_t j = 0; j < cfg_.count; ++j) {
    const auto [begin, end] = last_blocks_[j];
    const std::size_t rows = end - begin;
    Tensor block_grad({rows, cfg_.output_dim});
    std::copy(output_grad.data.begin() + begin * cfg_.output_dim,
              output_grad.data.begin() + end * cfg_.output_dim, block_grad.data.begin());
    members_[j].backward(block_grad);
  }
}

void GeneratorEnsemble::step(double learning_rate) {
  for (std::size_t j = 0; j < cfg_.count; ++j) {
    optims_[j].set_learning_rate(learning_rate);
    optims_[j].step(members_[j]);
  }
}

std::uint64_t GeneratorEnsemble::param_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& member : members_) {
    const std::uint64_t mh = member.param_hash();
    h = fnv1a(&mh, sizeof(mh), h);
  }
  return h;
}

std::uint64_t GeneratorEnsemble::madds() const {
  std::uint64_t total = 0;
  for (const auto& member : members_) total += member.madds();
  return total;
}

void GeneratorEnsemble::reset_madds() {
  for (auto& member : members_) member.reset_madds();
}

namespace {

void check_clone_probs(const std::vector<Tensor>& clone_probs) {
  if (clone_probs.size() < 2) {
    throw ConfigError("disagreement needs at least 2 clone predictions");
  }
  for (const auto& t : clone_probs) {
    if (t.shape != clone_probs.front().shape) {
      throw DimensionError("clone prediction shapes differ");
    }
  }
}

}  // namespace

std::vector<double> disagreement_per_sample(const std::vector<Tensor>& clone_probs) {
  check_clone_probs(clone_probs);
  const std::size_t m = clone_probs.size();
  const std::size_t b = clone_probs.front().rows();
  const std::size_t k = clone_probs.front().cols();
  const double inv_m = 1.0 / static_cast<double>(m);

  std::vector<double> out(b, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += clone_probs[i](r, c);
      mean *= inv_m;
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = clone_probs[i](r, c) - mean;
        var += d * d;
      }
      acc += std::sqrt(var * inv_m);  // population std
    }
    out[r] = acc / static_cast<double>(k);
  }
  return out;
}

double disagreement_loss(const std::vector<Tensor>& clone_probs) {
  const auto per_sample = disagreement_per_sample(clone_probs);
  double sum = 0.0;
  for (double v : per_sample) sum += v;
  return sum / static_cast<double>(per_sample.size());
}

double diversity_loss(const std::vector<Tensor>& clone_probs) {
  check_clone_probs(clone_probs);
  const std::size_t b = clone_probs.front().rows();
  const std::size_t k = clone_probs.front().cols();

  std::vector<double> mean(k, 0.0);
  for (const auto& probs : clone_probs) {
    for (std::size_t r = 0; r < b; ++r) {
      const double* p = probs.data.data() + r * k;
      for (std::size_t c = 0; c < k; ++c) mean[c] += p[c];
    }
  }
  const double inv = 1.0 / static_cast<double>(b * clone_probs.size());
  for (double& v : mean) v *= inv;
  return entropy(std::span<const double>(mean.data(), mean.size()));
}

double lambda_schedule(std::size_t discovered_classes) {
  return 4.0 / (10.0 + static_cast<double>(discovered_classes));
}

std::vector<Tensor> generator_objective_prob_grads(const std::vector<Tensor>& clone_probs,
                                                   double lambda) {
  check_clone_probs(clone_probs);
  const std::size_t m = clone_probs.size();
  const std::size_t b = clone_probs.front().rows();
  const std::size_t k = clone_probs.front().cols();
  const double inv_m = 1.0 / static_cast<double>(m);
  const double mb = static_cast<double>(m) * static_cast<double>(b);

  // Batch-and-clone-averaged class distribution for the diversity term.
  std::vector<double> q(k, 0.0);
  for (const auto& probs : clone_probs) {
    for (std::size_t i = 0; i < probs.size(); ++i) q[i % k] += probs.data[i];
  }
  for (double& v : q) v /= mb;

  std::vector<Tensor> grads(m, Tensor({b, k}));
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += clone_probs[i](r, c);
      mean *= inv_m;
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = clone_probs[i](r, c) - mean;
        var += d * d;
      }
      const double sigma = std::sqrt(var * inv_m);

      // d L_div / d p_i = -(ln q + 1) / (M B), shared across members and rows.
      const double div_term = q[c] > 0.0 ? -(std::log(q[c]) + 1.0) / mb : 0.0;

      for (std::size_t i = 0; i < m; ++i) {
        // d L_D / d p_i = (p_i - mean) / (M sigma B K); zero where sigma is.
        double dis_term = 0.0;
        if (sigma > 0.0) {
          dis_term = (clone_probs[i](r, c) - mean) /
                     (static_cast<double>(m) * sigma * static_cast<double>(b) *
                      static_cast<double>(k));
        }
        grads[i](r, c) = -(dis_term + lambda * div_term);
      }
    }
  }
  return grads;
}

GeneratorLossReport train_generators(GeneratorEnsemble& generators, CloneEnsemble& clones,
                                     std::size_t batches, std::size_t batch_size,
                                     std::size_t discovered_classes, double learning_rate,
                                     Rng& rng) {
  GeneratorLossReport report;
  report.lambda = lambda_schedule(discovered_classes);

  for (std::size_t it = 0; it < batches; ++it) {
    const Tensor batch = generators.generate(batch_size, rng);
    const ClonePrediction pred = clones.predict(batch);

    report.disagreement = disagreement_loss(pred.per_clone_probs);
    report.diversity = diversity_loss(pred.per_clone_probs);
    report.total = report.disagreement + report.lambda * report.diversity;

    const auto prob_grads =
        generator_objective_prob_grads(pred.per_clone_probs, report.lambda);
    const Tensor input_grad = clones.backprop_prob_grads_to_input(prob_grads);
    generators.backward(input_grad);
    generators.step(learning_rate);
  }
  return report;
}

}  // namespace dfme
