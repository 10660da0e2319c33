#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfme/rng.hpp"
#include "dfme/tensor.hpp"

namespace dfme {

enum class Activation { kRelu, kTanh, kLinear };

std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
  Activation act = Activation::kLinear;
};

// Fully-connected network with manual backprop. Forward caches per-layer
// activations; backward consumes the cache, accumulates parameter gradients
// and returns the gradient with respect to the input batch.
class DenseNetwork {
 public:
  DenseNetwork() = default;

  // dims = [input, h1, ..., output]; acts has one entry per layer.
  DenseNetwork(const std::vector<std::size_t>& dims, const std::vector<Activation>& acts);

  // ReLU hidden layers, caller-chosen output activation.
  static DenseNetwork mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                          std::size_t output_dim, Activation output_act = Activation::kLinear);

  // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for weights and biases,
  // drawn layer by layer, weights row-major then bias.
  void init_params(Rng& rng);

  Tensor forward(const Tensor& batch);

  // output_grad is dLoss/dOutput of the last forward. When param_grads is
  // false only the input gradient is computed (used when backpropagating
  // through frozen clones into generator outputs).
  Tensor backward(const Tensor& output_grad, bool param_grads = true);

  void zero_grads();
  bool grads_populated() const { return grads_populated_; }
  void clear_cache();

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t layer_count() const { return layers_.size(); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (auto& layer : layers_) {
      fn(layer.weight);
      fn(layer.bias);
    }
  }

  std::size_t param_count() const;

  // Multiply-add counter covering every matrix product in forward/backward.
  std::uint64_t madds() const { return madds_; }
  void reset_madds() { madds_ = 0; }

  // FNV-1a over the raw parameter bytes; used by phase-isolation checks.
  std::uint64_t param_hash() const;

 private:
  std::vector<DenseLayer> layers_;
  // cache_[0] is the input batch, cache_[t+1] the post-activation output of
  // layer t.
  std::vector<Tensor> cache_;
  bool has_cache_ = false;
  bool grads_populated_ = false;
  std::uint64_t madds_ = 0;
};

// FNV-1a over arbitrary bytes.
std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t seed = 1469598103934665603ull);

}  // namespace dfme
