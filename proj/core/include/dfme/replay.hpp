#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dfme/rng.hpp"
#include "dfme/tensor.hpp"

namespace dfme {

struct StoredSample {
  std::vector<double> input;
  int victim_label = 0;        // bank key: HL label or SL argmax
  std::vector<double> probs;   // SL only: victim probability row
  double last_loss = 0.0;      // most recent clone training loss
  std::uint64_t insert_age = 0;
  std::uint64_t uid = 0;       // assigned by the container
};

// Stable handle to a stored sample; refs go stale once the sample is evicted.
struct SampleRef {
  int class_id = 0;
  std::uint64_t uid = 0;
};

struct ReplayDraw {
  std::vector<SampleRef> refs;
  Tensor inputs;                  // [B, D]
  std::vector<int> victim_labels; // bank keys
  Tensor probs;                   // [B, K] when stored samples carry probs
};

class ReplayBase {
 public:
  virtual ~ReplayBase() = default;
  virtual void register_class(int class_id) = 0;
  virtual void store(std::vector<StoredSample> samples) = 0;
  virtual void update_losses(const std::vector<SampleRef>& refs,
                             const std::vector<double>& losses) = 0;
  virtual ReplayDraw sample_balanced(std::size_t batch_size, Rng& rng) = 0;
  virtual std::size_t total_size() const = 0;
  virtual bool empty() const { return total_size() == 0; }
};

// Per-class memory banks under one total capacity. Bank capacity is
// floor(total / #banks) and is recomputed on every class registration.
// Sampling returns a class-balanced batch; eviction is a weighted draw with
// weight (max loss in the candidate pool - sample loss), so easy samples go
// first and the hardest candidate is never picked while any weight is
// positive. The newly inserted sample competes for its own slot.
class ReplayContainer final : public ReplayBase {
 public:
  ReplayContainer(std::size_t total_capacity, std::uint64_t rng_seed);

  void register_class(int class_id) override;  // idempotent
  void store(std::vector<StoredSample> samples) override;
  void update_losses(const std::vector<SampleRef>& refs,
                     const std::vector<double>& losses) override;

  // floor(batch/#nonempty) per nonempty bank, uniform with replacement
  // within banks; the remainder goes one each to banks chosen uniformly
  // without replacement; the assembled batch is shuffled.
  ReplayDraw sample_balanced(std::size_t batch_size, Rng& rng) override;

  std::size_t total_size() const override;
  std::size_t total_capacity() const { return total_capacity_; }
  std::size_t bank_capacity() const;
  std::size_t class_count() const { return banks_.size(); }
  std::size_t bank_size(int class_id) const;
  std::vector<int> class_ids() const;
  const std::vector<StoredSample>& bank_samples(int class_id) const;
  std::uint64_t stale_update_count() const { return stale_updates_; }
  // Number of samples ever offered to the container (evicted or not).
  std::uint64_t offered_count() const { return age_counter_; }

  // Single-file persistence; the round-trip is exact.
  void dump(const std::string& path) const;
  static ReplayContainer load(const std::string& path);

  std::string serialize() const;
  static ReplayContainer deserialize(const std::string& text);

 private:
  struct Bank {
    std::vector<StoredSample> samples;
    std::unordered_map<std::uint64_t, std::size_t> uid_to_index;
  };

  void insert_one(StoredSample sample);
  void evict_down(Bank& bank, std::size_t capacity);
  void erase_at(Bank& bank, std::size_t index);
  static std::size_t pick_eviction_index(const std::vector<double>& losses, Rng& rng);

  std::map<int, Bank> banks_;  // ordered for deterministic iteration
  std::size_t total_capacity_ = 0;
  Rng rng_;
  std::uint64_t age_counter_ = 0;
  std::uint64_t stale_updates_ = 0;
};

// Prior-work baseline: a single circular buffer with uniform sampling; kept
// for the ablation harness. Losses and classes are ignored.
class CircularReplay final : public ReplayBase {
 public:
  explicit CircularReplay(std::size_t capacity);

  void register_class(int) override {}
  void store(std::vector<StoredSample> samples) override;
  void update_losses(const std::vector<SampleRef>&, const std::vector<double>&) override {}
  ReplayDraw sample_balanced(std::size_t batch_size, Rng& rng) override;
  std::size_t total_size() const override { return samples_.size(); }

 private:
  std::size_t capacity_ = 0;
  std::size_t next_ = 0;  // overwrite position once full
  std::vector<StoredSample> samples_;
};

}  // namespace dfme
