#pragma once

#include <string>
#include <vector>

#include "dfme/rng.hpp"
#include "dfme/tensor.hpp"

namespace dfme {

struct LabeledDataset {
  Tensor inputs;             // [N, D]
  std::vector<int> labels;   // ground truth, in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return inputs.rank() == 2 ? inputs.cols() : 0; }
  void validate() const;
};

struct SplitDataset {
  LabeledDataset train;
  LabeledDataset test;
};

// Deterministic shuffled split; test_fraction of samples go to test.
SplitDataset split_dataset(const LabeledDataset& full, double test_fraction, Rng& rng);

// Well-separated Gaussian blobs. Centers are drawn uniformly and re-drawn
// until every pair is at least min_separation_sigmas * sigma apart, so any
// sane classifier separates them.
struct BlobsOptions {
  int classes = 3;
  std::size_t dim = 2;
  std::size_t per_class = 200;
  double sigma = 0.08;
  double min_separation_sigmas = 8.0;
};
LabeledDataset make_blobs(const BlobsOptions& opts, Rng& rng);

// Procedural 8x8 digit images: fixed glyphs for 0..9 perturbed by +-1 pixel
// shifts, intensity jitter and Gaussian noise. Pixels live in [-1, 1].
struct DigitsOptions {
  std::size_t per_class = 500;
  double noise_sigma = 0.15;
};
LabeledDataset make_digits(const DigitsOptions& opts, Rng& rng);

// IDX (the classic big-endian image/label container, unsigned-byte payload).
// Pixels are mapped from [0, 255] to [-1, 1] on load and back on save.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const LabeledDataset& ds, std::size_t rows, std::size_t cols,
              const std::string& images_path, const std::string& labels_path);

// Plain CSV, one sample per line: label,v1,v2,...  Values are used as-is.
LabeledDataset load_csv(const std::string& path);

// Descriptor forms:
//   "blobs[:key=value,...]"   keys: classes, dim, per_class, sigma
//   "digits[:key=value,...]"  keys: per_class, noise_sigma
//   "csv:PATH"
//   "idx:IMAGES_PATH,LABELS_PATH"
LabeledDataset load_dataset(const std::string& descriptor, Rng& rng);

}  // namespace dfme
