#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfme/errors.hpp"

namespace dfme {

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major tensor of doubles with an optional gradient buffer of the
// same shape. Rank 1 and rank 2 are the only shapes the system uses.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape_)
      : shape(std::move(shape_)), data(shape_product(shape), 0.0) {}

  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
      : shape(std::move(shape_)), data(std::move(data_)) {
    if (data.size() != shape_product(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(shape));
    }
  }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows[0].size();
    Tensor t({r, c});
    for (std::size_t i = 0; i < r; ++i) {
      if (rows[i].size() != c) {
        throw DimensionError("ragged rows in Tensor::from_rows");
      }
      std::copy(rows[i].begin(), rows[i].end(), t.data.begin() + i * c);
    }
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool empty() const { return data.empty(); }

  std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
  std::size_t cols() const {
    if (rank() == 2) return shape[1];
    if (rank() == 1) return shape[0];
    throw DimensionError("rows/cols on tensor of rank " + std::to_string(rank()));
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<double> row(std::size_t r) {
    return std::span<double>(data.data() + r * cols(), cols());
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data.data() + r * cols(), cols());
  }

  std::vector<double> row_copy(std::size_t r) const {
    auto s = row(r);
    return std::vector<double>(s.begin(), s.end());
  }

  // Gradient slot management. ensure_grad allocates zeros on first use.
  bool has_grad() const { return grad.has_value(); }
  void ensure_grad() {
    if (!grad) grad.emplace(data.size(), 0.0);
  }
  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
  }
  void drop_grad() { grad.reset(); }
  std::vector<double>& grad_ref() {
    if (!grad) throw StateError("tensor gradient accessed before allocation");
    return *grad;
  }
  const std::vector<double>& grad_ref() const {
    if (!grad) throw StateError("tensor gradient accessed before allocation");
    return *grad;
  }
};

}  // namespace dfme
