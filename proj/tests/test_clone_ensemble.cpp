#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dfme/clone_ensemble.hpp"
#include "dfme/serialize.hpp"
#include "test_util.hpp"

using namespace dfme;
using namespace dfme::test;

namespace {

CloneConfig small_config(ResponseMode mode = ResponseMode::kHardLabel) {
  CloneConfig cfg;
  cfg.count = 2;
  cfg.input_dim = 4;
  cfg.hidden = {8};
  cfg.head_capacity = 16;
  cfg.mode = mode;
  return cfg;
}

Tensor random_batch(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (double& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("discovery: first label maps to head 0") {
  Rng rng(1);
  CloneEnsemble clones(small_config(), rng);
  CHECK(clones.discover_class(7) == 0);
  CHECK(clones.discovered() == 1);
}

TEST_CASE("discovery: idempotent re-query") {
  Rng rng(1);
  CloneEnsemble clones(small_config(), rng);
  CHECK(clones.discover_class(4) == 0);
  CHECK(clones.discover_class(4) == 0);
  CHECK(clones.discovered() == 1);
}

TEST_CASE("discovery: append-only ordering 3,1,3,9 -> 0,1,0,2") {
  Rng rng(1);
  CloneEnsemble clones(small_config(), rng);
  CHECK(clones.discover_class(3) == 0);
  CHECK(clones.discover_class(1) == 1);
  CHECK(clones.discover_class(3) == 0);
  CHECK(clones.discover_class(9) == 2);
  CHECK(clones.discovered() == 3);
  CHECK(clones.registry().victim_id(0) == 3);
  CHECK(clones.registry().victim_id(1) == 1);
  CHECK(clones.registry().victim_id(2) == 9);
}

TEST_CASE("discovery: rejected in soft-label mode") {
  Rng rng(1);
  CloneEnsemble clones(small_config(ResponseMode::kSoftLabel), rng);
  CHECK_THROWS_AS(clones.discover_class(0), ModeError);
  clones.fix_head_width(5);
  CHECK(clones.discovered() == 5);
  // Identity mapping in SL mode.
  for (std::size_t h = 0; h < 5; ++h) {
    CHECK(clones.registry().victim_id(h) == static_cast<int>(h));
  }
}

TEST_CASE("predict: before discovery is a state error") {
  Rng rng(1);
  CloneEnsemble clones(small_config(), rng);
  CHECK_THROWS_AS(clones.predict(Tensor({1, 4})), StateError);
}

TEST_CASE("predict: two symmetric clones average to uniform, tie to head 0") {
  CloneConfig cfg = small_config();
  cfg.input_dim = 1;
  cfg.hidden = {};
  cfg.head_capacity = 2;
  Rng rng(1);
  CloneEnsemble clones(cfg, rng);
  clones.discover_class(0);
  clones.discover_class(1);
  // Hand-set heads: clone0 logits [1, 0], clone1 logits [0, 1] on input 0.
  for (std::size_t m = 0; m < 2; ++m) {
    auto& layer = clones.members()[m].layers().back();
    std::fill(layer.weight.data.begin(), layer.weight.data.end(), 0.0);
    layer.bias.data[0] = m == 0 ? 1.0 : 0.0;
    layer.bias.data[1] = m == 0 ? 0.0 : 1.0;
  }
  const ClonePrediction pred = clones.predict(Tensor::from_rows({{0.0}}));
  CHECK(close(pred.ensemble_probs(0, 0), 0.5, 1e-12));
  CHECK(close(pred.ensemble_probs(0, 1), 0.5, 1e-12));
  CHECK(pred.labels[0] == 0);
}

TEST_CASE("predict: inactive head units have no influence") {
  Rng rng(5);
  CloneConfig cfg = small_config();
  CloneEnsemble clones(cfg, rng);
  clones.discover_class(2);
  clones.discover_class(5);

  Tensor batch = random_batch(6, 4, rng);
  const ClonePrediction before = clones.predict(batch);

  // Scribble over every inactive unit's parameters.
  for (auto& member : clones.members()) {
    auto& layer = member.layers().back();
    const std::size_t in = layer.weight.shape[1];
    for (std::size_t unit = 2; unit < cfg.head_capacity; ++unit) {
      for (std::size_t i = 0; i < in; ++i) layer.weight(unit, i) = rng.normal() * 100.0;
      layer.bias.data[unit] = rng.normal() * 100.0;
    }
  }
  const ClonePrediction after = clones.predict(batch);
  for (std::size_t i = 0; i < before.ensemble_probs.size(); ++i) {
    CHECK(before.ensemble_probs.data[i] == after.ensemble_probs.data[i]);
  }
  CHECK(before.labels == after.labels);
}

TEST_CASE("predict: single-member ensemble equals that clone's probs") {
  // m = 1 is below the disagreement minimum for extraction, so emulate by
  // comparing the ensemble mean of two identical members.
  Rng rng(5);
  CloneEnsemble clones(small_config(), rng);
  clones.discover_class(0);
  clones.discover_class(1);
  clones.members()[1] = clones.members()[0];

  Tensor batch = random_batch(3, 4, rng);
  const ClonePrediction pred = clones.predict(batch);
  for (std::size_t i = 0; i < pred.ensemble_probs.size(); ++i) {
    CHECK(close(pred.ensemble_probs.data[i], pred.per_clone_probs[0].data[i], 1e-15));
  }
}

TEST_CASE("predict: permuting clone order leaves the ensemble unchanged") {
  Rng rng(6);
  CloneEnsemble clones(small_config(), rng);
  clones.discover_class(0);
  clones.discover_class(1);
  clones.discover_class(2);
  Tensor batch = random_batch(5, 4, rng);
  const ClonePrediction pred = clones.predict(batch);

  std::swap(clones.members()[0], clones.members()[1]);
  const ClonePrediction swapped = clones.predict(batch);
  for (std::size_t i = 0; i < pred.ensemble_probs.size(); ++i) {
    CHECK(pred.ensemble_probs.data[i] == doctest::Approx(swapped.ensemble_probs.data[i]).epsilon(1e-15));
  }
  CHECK(pred.labels == swapped.labels);
}

TEST_CASE("hard label loss: closed forms") {
  CHECK(close(hard_label_loss(Tensor({1, 2}), {0}), std::log(2.0), 1e-12));
  CHECK(close(hard_label_loss(Tensor({1, 2}), {1}), std::log(2.0), 1e-12));

  // Confident-correct limit drives the loss to zero.
  CHECK(hard_label_loss(Tensor::from_rows({{50.0, 0.0, 0.0}}), {0}) < 1e-20);

  // Single sample, K = 3, logits [1, 0, 0], true head 0: -ln(e/(e+2)).
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(close(hard_label_loss(Tensor::from_rows({{1.0, 0.0, 0.0}}), {0}), expected, 1e-12));
  CHECK(close(expected, 0.551445, 1e-6));
}

TEST_CASE("hard label loss: brute-force log-softmax agreement at 1e-12") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 1 + rng.index(6);
    const std::size_t k = 2 + rng.index(6);
    Tensor logits({b, k});
    for (double& v : logits.data) v = rng.uniform(-30.0, 30.0);
    std::vector<int> targets(b);
    for (auto& t : targets) t = static_cast<int>(rng.index(k));

    // Independent route: direct log-sum-exp.
    double brute = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
      double mx = logits(r, 0);
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits(r, c));
      double lse = 0.0;
      for (std::size_t c = 0; c < k; ++c) lse += std::exp(logits(r, c) - mx);
      brute += -(logits(r, static_cast<std::size_t>(targets[r])) - mx - std::log(lse));
    }
    brute /= static_cast<double>(b);
    CHECK(close(hard_label_loss(logits, targets), brute, 1e-12));
  }
}

TEST_CASE("hard label loss: out-of-range target") {
  CHECK_THROWS_AS(hard_label_loss(Tensor({1, 2}), {2}), DomainError);
}

TEST_CASE("soft label loss: closed forms") {
  const Tensor zeros({1, 2});
  CHECK(soft_label_loss(zeros, zeros) == 0.0);
  CHECK(soft_label_loss(Tensor::from_rows({{1.0, 0.0}}), Tensor::from_rows({{0.0, 0.0}})) ==
        1.0);
  // Clone [0,0] against pseudo logits of softmax([1,2]) = [-0.5, 0.5].
  const Tensor target = pseudo_logits(softmax(Tensor::from_rows({{1.0, 2.0}})));
  CHECK(close(soft_label_loss(zeros, target), 0.5, 1e-12));
}

TEST_CASE("soft label loss: shape mismatch") {
  CHECK_THROWS_AS(soft_label_loss(Tensor({1, 2}), Tensor({1, 3})), DimensionError);
}

TEST_CASE("head growth: old-class probabilities only renormalize") {
  Rng rng(9);
  CloneEnsemble clones(small_config(), rng);
  clones.discover_class(0);
  clones.discover_class(1);
  // Make active heads non-trivial.
  for (auto& member : clones.members()) {
    auto& layer = member.layers().back();
    for (std::size_t unit = 0; unit < 2; ++unit) {
      for (std::size_t i = 0; i < layer.weight.shape[1]; ++i) {
        layer.weight(unit, i) = rng.normal();
      }
      layer.bias.data[unit] = rng.normal();
    }
  }

  Tensor batch = random_batch(8, 4, rng);
  const ClonePrediction before = clones.predict(batch);
  clones.discover_class(2);
  const ClonePrediction after = clones.predict(batch);

  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t r = 0; r < 8; ++r) {
      // Ratios between old classes are preserved (pure renormalization).
      const double ratio_before =
          before.per_clone_probs[m](r, 0) / before.per_clone_probs[m](r, 1);
      const double ratio_after =
          after.per_clone_probs[m](r, 0) / after.per_clone_probs[m](r, 1);
      CHECK(close_rel(ratio_before, ratio_after, 1e-12));
      // Renormalization shrinks both (new unit takes positive mass).
      CHECK(after.per_clone_probs[m](r, 0) <= before.per_clone_probs[m](r, 0));
      // Per-clone argmax over the old classes is preserved.
      const bool was_first =
          before.per_clone_probs[m](r, 0) > before.per_clone_probs[m](r, 1);
      const bool is_first =
          after.per_clone_probs[m](r, 0) > after.per_clone_probs[m](r, 1);
      CHECK(was_first == is_first);
    }
  }
}

TEST_CASE("head growth: new unit starts as the least likely prediction") {
  Rng rng(10);
  CloneEnsemble clones(small_config(), rng);
  clones.discover_class(0);
  clones.discover_class(1);
  for (auto& member : clones.members()) {
    auto& layer = member.layers().back();
    layer.bias.data[0] = 0.4;
    layer.bias.data[1] = -0.7;
    for (std::size_t i = 0; i < layer.weight.shape[1]; ++i) {
      layer.weight(0, i) = 0.0;
      layer.weight(1, i) = 0.0;
    }
  }
  clones.discover_class(5);
  for (auto& member : clones.members()) {
    const auto& layer = member.layers().back();
    CHECK(layer.bias.data[2] == -0.7);  // min active bias
    for (std::size_t i = 0; i < layer.weight.shape[1]; ++i) {
      CHECK(layer.weight(2, i) == 0.0);
    }
  }
}

TEST_CASE("train: zero iterations reports losses without touching parameters") {
  Rng rng(11);
  CloneEnsemble clones(small_config(), rng);
  clones.discover_class(0);
  clones.discover_class(1);
  const std::uint64_t before = clones.param_hash();

  Tensor batch = random_batch(6, 4, rng);
  CloneBatchTargets targets;
  targets.mode = ResponseMode::kHardLabel;
  targets.head_indices = {0, 1, 0, 1, 0, 1};
  const CloneTrainResult result = clones.train_on_batch(batch, targets, 0, 0.05);
  CHECK(clones.param_hash() == before);
  CHECK(result.per_sample_loss.size() == 6);
  CHECK(result.batch_loss > 0.0);

  // Per-sample losses average across clones and match the batch mean.
  double mean = 0.0;
  for (double v : result.per_sample_loss) mean += v;
  mean /= 6.0;
  CHECK(close_rel(mean, result.batch_loss, 1e-9));
}

TEST_CASE("train: repeated training on one batch drives the loss down") {
  Rng rng(12);
  CloneEnsemble clones(small_config(), rng);
  clones.discover_class(0);
  clones.discover_class(1);
  clones.discover_class(2);

  Tensor batch = random_batch(12, 4, rng);
  CloneBatchTargets targets;
  targets.mode = ResponseMode::kHardLabel;
  targets.head_indices.resize(12);
  for (std::size_t i = 0; i < 12; ++i) targets.head_indices[i] = static_cast<int>(i % 3);

  const double first = clones.train_on_batch(batch, targets, 0, 0.0).batch_loss;
  for (int step = 0; step < 50; ++step) clones.train_on_batch(batch, targets, 1, 0.05);
  const double last = clones.train_on_batch(batch, targets, 0, 0.0).batch_loss;
  CHECK(last < first);
  CHECK(last < 0.45);  // one calibration run gave 0.343; pinned with slack
}

TEST_CASE("train: confidently-correct sample sits below the batch mean loss") {
  Rng rng(13);
  CloneEnsemble clones(small_config(), rng);
  clones.discover_class(0);
  clones.discover_class(1);

  // Hand-build confidence: unit 0 fires on input feature 0 only, so sample 0
  // ([1,0,0,0], target head 0) is confidently correct while every other
  // sample sees flat logits.
  for (auto& member : clones.members()) {
    for (auto& layer : member.layers()) {
      std::fill(layer.weight.data.begin(), layer.weight.data.end(), 0.0);
      std::fill(layer.bias.data.begin(), layer.bias.data.end(), 0.0);
    }
    member.layers()[0].weight(0, 0) = 1.0;          // hidden 0 = relu(x0)
    member.layers().back().weight(0, 0) = 8.0;      // head 0 = 8 * hidden 0
  }

  Tensor batch({4, 4});
  batch(0, 0) = 1.0;
  CloneBatchTargets targets;
  targets.mode = ResponseMode::kHardLabel;
  targets.head_indices = {0, 0, 1, 1};

  const CloneTrainResult result = clones.train_on_batch(batch, targets, 0, 0.0);
  double mean = 0.0;
  for (double v : result.per_sample_loss) mean += v;
  mean /= 4.0;
  CHECK(result.per_sample_loss[0] < mean);
  CHECK(result.per_sample_loss[0] < 1e-3);  // -ln sigmoid-ish at logit 8
}

TEST_CASE("checkpoint: clone ensemble round trip is bit exact") {
  Rng rng(14);
  CloneEnsemble clones(small_config(), rng);
  clones.discover_class(3);
  clones.discover_class(8);

  Tensor batch = random_batch(10, 4, rng);
  CloneBatchTargets targets;
  targets.mode = ResponseMode::kHardLabel;
  targets.head_indices.assign(10, 1);
  clones.train_on_batch(batch, targets, 3, 0.02);

  const auto snapshot = clone_ensemble_to_json(clones);

  Rng rng2(999);
  CloneEnsemble restored(small_config(), rng2);
  restore_clone_ensemble(restored, snapshot);
  CHECK(restored.param_hash() == clones.param_hash());
  CHECK(restored.discovered() == clones.discovered());
  CHECK(restored.registry().victim_id(0) == 3);

  // Subsequent identical training steps stay bit-identical.
  clones.train_on_batch(batch, targets, 2, 0.02);
  restored.train_on_batch(batch, targets, 2, 0.02);
  CHECK(restored.param_hash() == clones.param_hash());

  // And the JSON text round-trips to the same text.
  CHECK(clone_ensemble_to_json(restored).dump() == clone_ensemble_to_json(clones).dump());
}
