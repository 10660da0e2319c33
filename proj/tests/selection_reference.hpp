#pragma once

// Line-by-line reference for the class-balanced top-disagreement selection,
// written independently of select_batch and kept test-only. It consumes the
// rng with the same pinned protocol (Fisher-Yates over the post-disagreement
// remainder, then a prefix).

#include <algorithm>
#include <set>
#include <vector>

#include "dfme/selective_query.hpp"

namespace dfme::test {

inline std::vector<std::size_t> reference_selection(const CandidatePool& pool,
                                                    std::size_t n, std::size_t k,
                                                    Rng& rng) {
  std::vector<std::size_t> b;  // output batch
  const std::size_t n_k = n / k;
  std::size_t r = n - k * n_k;

  auto sorted_desc = [&](std::vector<std::size_t> v) {
    std::stable_sort(v.begin(), v.end(), [&](std::size_t x, std::size_t y) {
      return pool.disagreement[x] > pool.disagreement[y];
    });
    return v;
  };

  for (std::size_t cls = 0; cls < k; ++cls) {
    std::vector<std::size_t> s_k;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (pool.predicted_labels[i] == static_cast<int>(cls)) s_k.push_back(i);
    }
    s_k = sorted_desc(std::move(s_k));
    if (s_k.size() >= n_k) {
      b.insert(b.end(), s_k.begin(), s_k.begin() + n_k);
    } else {
      b.insert(b.end(), s_k.begin(), s_k.end());
      r += n_k - s_k.size();
    }
  }

  if (r > 0) {
    std::set<std::size_t> in_b(b.begin(), b.end());
    std::vector<std::size_t> residual;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (!in_b.count(i)) residual.push_back(i);
    }
    residual = sorted_desc(std::move(residual));
    const std::size_t half = r / 2;
    b.insert(b.end(), residual.begin(), residual.begin() + half);
    std::vector<std::size_t> remaining(residual.begin() + half, residual.end());
    shuffle(remaining, rng);
    b.insert(b.end(), remaining.begin(), remaining.begin() + (r - half));
  }
  return b;
}

// Random pool with a coarse score grid so ties actually occur.
inline CandidatePool random_selection_pool(std::size_t size, std::size_t k, Rng& rng) {
  CandidatePool pool;
  pool.inputs = Tensor({size, 2});
  pool.predicted_labels.resize(size);
  pool.disagreement.resize(size);
  for (std::size_t i = 0; i < size; ++i) {
    pool.predicted_labels[i] = static_cast<int>(rng.index(k));
    pool.disagreement[i] = static_cast<double>(rng.index(6)) / 10.0;
  }
  return pool;
}

}  // namespace dfme::test
