#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "dfme/clone_ensemble.hpp"
#include "dfme/generator_ensemble.hpp"

namespace dfme {

// Oversampled candidates scored by the clone ensemble. No victim contact.
struct CandidatePool {
  Tensor inputs;                    // [P, D]
  std::vector<int> predicted_labels;  // head indices via ensemble argmax
  std::vector<double> disagreement;   // per-sample L_D values

  std::size_t size() const { return predicted_labels.size(); }
};

struct SelectionReport {
  std::vector<std::size_t> selected;        // N distinct pool indices
  std::map<int, std::size_t> per_class_counts;  // quota-phase counts per head
  std::size_t deficit_r = 0;                // final R after shortfalls
  std::size_t deficit_by_disagreement = 0;  // floor(R/2) when R > 0
  std::size_t deficit_uniform = 0;          // R - floor(R/2)
};

// Generates pool_size candidates as whole generator batches of gen_batch
// rows (the last batch truncated), labels them by ensemble argmax and scores
// them by per-sample disagreement.
CandidatePool build_pool(GeneratorEnsemble& generators, CloneEnsemble& clones,
                         std::size_t pool_size, std::size_t gen_batch, Rng& rng);

// Class-balanced top-disagreement selection:
//   N_k = floor(N/K); per class take up to N_k candidates in descending
//   disagreement order (ties toward the lower pool index); shortfalls grow
//   the deficit R = N - K*N_k; floor(R/2) deficit slots are filled from the
//   unselected remainder by descending disagreement and the rest uniformly
//   at random (Fisher-Yates shuffle of the remainder, then a prefix).
SelectionReport select_batch(const CandidatePool& pool, std::size_t n, std::size_t k,
                             Rng& rng);

// Ablation baseline: the first n pool candidates, no scoring involved.
SelectionReport select_uniform(const CandidatePool& pool, std::size_t n, Rng& rng);

}  // namespace dfme
