#include "dfme/network.hpp"

#include <cmath>
#include <cstring>

namespace dfme {

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kLinear: return "linear";
  }
  return "linear";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "linear") return Activation::kLinear;
  throw ConfigError("unknown activation '" + name + "'");
}

DenseNetwork::DenseNetwork(const std::vector<std::size_t>& dims,
                           const std::vector<Activation>& acts) {
  if (dims.size() < 2) throw ConfigError("network needs at least one layer");
  if (acts.size() != dims.size() - 1) {
    throw ConfigError("expected " + std::to_string(dims.size() - 1) +
                      " activations, got " + std::to_string(acts.size()));
  }
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("zero-width layer in network dims");
  }
  layers_.reserve(dims.size() - 1);
  for (std::size_t t = 0; t + 1 < dims.size(); ++t) {
    DenseLayer layer;
    layer.weight = Tensor({dims[t + 1], dims[t]});
    layer.bias = Tensor({dims[t + 1]});
    layer.act = acts[t];
    layers_.push_back(std::move(layer));
  }
}

DenseNetwork DenseNetwork::mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                               std::size_t output_dim, Activation output_act) {
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);
  std::vector<Activation> acts(hidden.size(), Activation::kRelu);
  acts.push_back(output_act);
  return DenseNetwork(dims, acts);
}

void DenseNetwork::init_params(Rng& rng) {
  for (auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.shape[1]));
    for (double& w : layer.weight.data) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias.data) b = rng.uniform(-bound, bound);
  }
}

std::size_t DenseNetwork::input_dim() const {
  if (layers_.empty()) throw StateError("input_dim of an empty network");
  return layers_.front().weight.shape[1];
}

std::size_t DenseNetwork::output_dim() const {
  if (layers_.empty()) throw StateError("output_dim of an empty network");
  return layers_.back().bias.size();
}

std::size_t DenseNetwork::param_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

namespace {

inline double apply_act(Activation act, double z) {
  switch (act) {
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kTanh: return std::tanh(z);
    case Activation::kLinear: return z;
  }
  return z;
}

// Derivative expressed through the post-activation value a = act(z).
inline double act_derivative(Activation act, double a) {
  switch (act) {
    case Activation::kRelu: return a > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: return 1.0 - a * a;
    case Activation::kLinear: return 1.0;
  }
  return 1.0;
}

}  // namespace

Tensor DenseNetwork::forward(const Tensor& batch) {
  if (layers_.empty()) throw StateError("forward through an empty network");
  if (batch.rank() != 2 || batch.cols() != input_dim()) {
    throw DimensionError("forward: batch shape " + shape_string(batch.shape) +
                         " does not match network input shape [B, " +
                         std::to_string(input_dim()) + "]");
  }

  const std::size_t b = batch.rows();
  has_cache_ = false;
  cache_.clear();
  cache_.reserve(layers_.size() + 1);
  cache_.push_back(batch);

  for (const auto& layer : layers_) {
    const std::size_t in = layer.weight.shape[1];
    const std::size_t out = layer.weight.shape[0];
    const Tensor& x = cache_.back();
    Tensor y({b, out});
    for (std::size_t r = 0; r < b; ++r) {
      const double* xr = x.data.data() + r * in;
      double* yr = y.data.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wo = layer.weight.data.data() + o * in;
        double acc = layer.bias.data[o];
        for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xr[i];
        yr[o] = apply_act(layer.act, acc);
      }
    }
    madds_ += static_cast<std::uint64_t>(b) * out * in;
    cache_.push_back(std::move(y));
  }

  has_cache_ = true;
  return cache_.back();
}

Tensor DenseNetwork::backward(const Tensor& output_grad, bool param_grads) {
  if (!has_cache_) throw StateError("backward called before forward");
  const std::size_t b = cache_.front().rows();
  if (output_grad.rank() != 2 || output_grad.rows() != b ||
      output_grad.cols() != output_dim()) {
    throw DimensionError("backward: gradient shape " + shape_string(output_grad.shape) +
                         " does not match forward output shape [" + std::to_string(b) +
                         ", " + std::to_string(output_dim()) + "]");
  }

  Tensor grad = output_grad;
  for (std::size_t t = layers_.size(); t-- > 0;) {
    auto& layer = layers_[t];
    const std::size_t in = layer.weight.shape[1];
    const std::size_t out = layer.weight.shape[0];
    const Tensor& x = cache_[t];        // layer input
    const Tensor& a = cache_[t + 1];    // layer post-activation output

    // dz = grad ⊙ act'(z), evaluated through the cached post-activation.
    Tensor dz({b, out});
    for (std::size_t r = 0; r < b; ++r) {
      const double* gr = grad.data.data() + r * out;
      const double* ar = a.data.data() + r * out;
      double* dzr = dz.data.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        dzr[o] = gr[o] * act_derivative(layer.act, ar[o]);
      }
    }

    if (param_grads) {
      layer.weight.ensure_grad();
      layer.bias.ensure_grad();
      auto& dw = layer.weight.grad_ref();
      auto& db = layer.bias.grad_ref();
      for (std::size_t r = 0; r < b; ++r) {
        const double* dzr = dz.data.data() + r * out;
        const double* xr = x.data.data() + r * in;
        for (std::size_t o = 0; o < out; ++o) {
          const double g = dzr[o];
          if (g == 0.0) continue;
          double* dwo = dw.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) dwo[i] += g * xr[i];
          db[o] += g;
        }
      }
      madds_ += static_cast<std::uint64_t>(b) * out * in;
    }

    // dX = dz · W
    Tensor dx({b, in});
    for (std::size_t r = 0; r < b; ++r) {
      const double* dzr = dz.data.data() + r * out;
      double* dxr = dx.data.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = dzr[o];
        if (g == 0.0) continue;
        const double* wo = layer.weight.data.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) dxr[i] += g * wo[i];
      }
    }
    madds_ += static_cast<std::uint64_t>(b) * out * in;
    grad = std::move(dx);
  }

  if (param_grads) grads_populated_ = true;
  return grad;
}

void DenseNetwork::zero_grads() {
  for (auto& layer : layers_) {
    layer.weight.zero_grad();
    layer.bias.zero_grad();
  }
  grads_populated_ = false;
}

void DenseNetwork::clear_cache() {
  cache_.clear();
  has_cache_ = false;
}

std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t DenseNetwork::param_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& layer : layers_) {
    h = fnv1a(layer.weight.data.data(), layer.weight.size() * sizeof(double), h);
    h = fnv1a(layer.bias.data.data(), layer.bias.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace dfme
