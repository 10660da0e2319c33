#include "dfme/ops.hpp"

#include <cmath>

namespace dfme {

Tensor softmax(const Tensor& logits) {
  if (logits.rank() == 0 || logits.cols() == 0) {
    throw DimensionError("softmax over empty last dimension, shape " +
                         shape_string(logits.shape));
  }
  const std::size_t rows = logits.rows();
  const std::size_t cols = logits.cols();
  Tensor out(logits.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = logits.data.data() + r * cols;
    double* o = out.data.data() + r * cols;
    double mx = in[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= sum;
  }
  return out;
}

double entropy(std::span<const double> probs) {
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw DomainError("entropy of a distribution with negative mass");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw DomainError("entropy input sums to " + std::to_string(sum) + ", not 1");
  }
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double entropy(const Tensor& probs) {
  return entropy(std::span<const double>(probs.data.data(), probs.data.size()));
}

std::vector<int> argmax_rows(const Tensor& values) {
  const std::size_t rows = values.rows();
  const std::size_t cols = values.cols();
  if (cols == 0) throw DimensionError("argmax over empty rows");
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = values.data.data() + r * cols;
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (v[c] > v[best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace dfme
