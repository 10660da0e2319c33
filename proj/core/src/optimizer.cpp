#include "dfme/optimizer.hpp"

#include <cmath>

namespace dfme {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgdMomentum ? "sgd-momentum" : "adam";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd-momentum") return OptimizerKind::kSgdMomentum;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer kind '" + name + "'");
}

void Optimizer::ensure_buffers(DenseNetwork& net) {
  std::vector<std::size_t> sizes;
  net.for_each_param([&](Tensor& p) { sizes.push_back(p.size()); });
  if (slot1_.size() == sizes.size()) return;
  slot1_.clear();
  slot2_.clear();
  for (std::size_t n : sizes) {
    slot1_.emplace_back(n, 0.0);
    slot2_.emplace_back(n, 0.0);
  }
}

void Optimizer::step(DenseNetwork& net) {
  if (!net.grads_populated()) {
    throw StateError("optimizer step without populated gradients");
  }
  ensure_buffers(net);

  const double lr = cfg_.learning_rate;
  std::size_t p = 0;

  if (cfg_.kind == OptimizerKind::kSgdMomentum) {
    net.for_each_param([&](Tensor& param) {
      auto& v = slot1_[p++];
      const auto& g = param.grad_ref();
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = cfg_.momentum * v[i] + g[i];
        param.data[i] -= lr * v[i];
      }
    });
  } else {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    net.for_each_param([&](Tensor& param) {
      auto& m = slot1_[p];
      auto& v = slot2_[p];
      ++p;
      const auto& g = param.grad_ref();
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        param.data[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
      }
    });
  }

  net.zero_grads();
}

}  // namespace dfme
