#pragma once

#include <span>
#include <vector>

#include "dfme/tensor.hpp"

namespace dfme {

// Row-wise softmax, numerically stabilized by max-subtraction. Accepts rank-1
// (single distribution) or rank-2 tensors and preserves the shape.
Tensor softmax(const Tensor& logits);

// Shannon entropy -sum p ln p with 0 ln 0 := 0. The input must be a valid
// distribution: non-negative entries summing to 1 within 1e-6.
double entropy(std::span<const double> probs);
double entropy(const Tensor& probs);

// Per-row argmax with ties broken toward the lowest index.
std::vector<int> argmax_rows(const Tensor& values);

}  // namespace dfme
