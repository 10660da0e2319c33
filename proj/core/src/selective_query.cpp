#include "dfme/selective_query.hpp"

#include <algorithm>

namespace dfme {

CandidatePool build_pool(GeneratorEnsemble& generators, CloneEnsemble& clones,
                         std::size_t pool_size, std::size_t gen_batch, Rng& rng) {
  if (pool_size < gen_batch) {
    throw ConfigError("pool size " + std::to_string(pool_size) +
                      " smaller than generator batch " + std::to_string(gen_batch));
  }
  if (clones.discovered() == 0) {
    throw StateError("pool building needs at least one discovered class");
  }

  CandidatePool pool;
  pool.inputs = Tensor({pool_size, generators.output_dim()});
  std::size_t filled = 0;
  while (filled < pool_size) {
    const Tensor batch = generators.generate(gen_batch, rng);
    const std::size_t take = std::min(gen_batch, pool_size - filled);
    std::copy(batch.data.begin(),
              batch.data.begin() + take * generators.output_dim(),
              pool.inputs.data.begin() + filled * generators.output_dim());
    filled += take;
  }

  const ClonePrediction pred = clones.predict(pool.inputs);
  pool.predicted_labels = pred.labels;
  pool.disagreement = disagreement_per_sample(pred.per_clone_probs);
  return pool;
}

namespace {

// Descending disagreement, ties toward the lower pool index.
void sort_by_disagreement(std::vector<std::size_t>& indices,
                          const std::vector<double>& disagreement) {
  std::sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
    if (disagreement[a] != disagreement[b]) return disagreement[a] > disagreement[b];
    return a < b;
  });
}

}  // namespace

SelectionReport select_batch(const CandidatePool& pool, std::size_t n, std::size_t k,
                             Rng& rng) {
  if (k == 0) throw ConfigError("selection needs at least one discovered class");
  if (pool.size() < n) {
    throw ConfigError("pool of " + std::to_string(pool.size()) +
                      " cannot supply a batch of " + std::to_string(n));
  }

  SelectionReport report;
  const std::size_t per_class = n / k;
  std::size_t deficit = n - k * per_class;

  std::vector<bool> taken(pool.size(), false);

  // Per-class quota: top-disagreement candidates predicted as that class.
  for (std::size_t cls = 0; cls < k; ++cls) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (pool.predicted_labels[i] == static_cast<int>(cls)) candidates.push_back(i);
    }
    sort_by_disagreement(candidates, pool.disagreement);
    const std::size_t take = std::min(per_class, candidates.size());
    for (std::size_t i = 0; i < take; ++i) {
      report.selected.push_back(candidates[i]);
      taken[candidates[i]] = true;
    }
    report.per_class_counts[static_cast<int>(cls)] = take;
    deficit += per_class - take;
  }

  report.deficit_r = deficit;
  if (deficit > 0) {
    std::vector<std::size_t> residual;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (!taken[i]) residual.push_back(i);
    }
    sort_by_disagreement(residual, pool.disagreement);

    // Half the missing samples by disagreement regardless of class.
    const std::size_t by_disagreement = deficit / 2;
    for (std::size_t i = 0; i < by_disagreement; ++i) {
      report.selected.push_back(residual[i]);
    }
    report.deficit_by_disagreement = by_disagreement;

    // The other half uniformly from what is left.
    std::vector<std::size_t> remaining(residual.begin() + by_disagreement, residual.end());
    shuffle(remaining, rng);
    report.deficit_uniform = deficit - by_disagreement;
    for (std::size_t i = 0; i < report.deficit_uniform; ++i) {
      report.selected.push_back(remaining[i]);
    }
  }

  return report;
}

SelectionReport select_uniform(const CandidatePool& pool, std::size_t n, Rng& rng) {
  if (pool.size() < n) {
    throw ConfigError("pool of " + std::to_string(pool.size()) +
                      " cannot supply a batch of " + std::to_string(n));
  }
  std::vector<std::size_t> indices(pool.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  shuffle(indices, rng);

  SelectionReport report;
  report.selected.assign(indices.begin(), indices.begin() + n);
  for (std::size_t i : report.selected) {
    report.per_class_counts[pool.predicted_labels[i]] += 1;
  }
  return report;
}

}  // namespace dfme
