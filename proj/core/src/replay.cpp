#include "dfme/replay.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

namespace dfme {

using nlohmann::json;

ReplayContainer::ReplayContainer(std::size_t total_capacity, std::uint64_t rng_seed)
    : total_capacity_(total_capacity), rng_(rng_seed) {
  if (total_capacity == 0) throw ConfigError("replay capacity must be positive");
}

std::size_t ReplayContainer::bank_capacity() const {
  if (banks_.empty()) return total_capacity_;
  return total_capacity_ / banks_.size();
}

std::size_t ReplayContainer::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, bank] : banks_) n += bank.samples.size();
  return n;
}

std::size_t ReplayContainer::bank_size(int class_id) const {
  const auto it = banks_.find(class_id);
  return it == banks_.end() ? 0 : it->second.samples.size();
}

std::vector<int> ReplayContainer::class_ids() const {
  std::vector<int> ids;
  ids.reserve(banks_.size());
  for (const auto& [id, _] : banks_) ids.push_back(id);
  return ids;
}

const std::vector<StoredSample>& ReplayContainer::bank_samples(int class_id) const {
  const auto it = banks_.find(class_id);
  if (it == banks_.end()) {
    throw StateError("class " + std::to_string(class_id) + " has no bank");
  }
  return it->second.samples;
}

std::size_t ReplayContainer::pick_eviction_index(const std::vector<double>& losses,
                                                 Rng& rng) {
  double max_loss = losses.front();
  for (double loss : losses) max_loss = std::max(max_loss, loss);

  double total_weight = 0.0;
  for (double loss : losses) total_weight += max_loss - loss;
  if (total_weight <= 0.0) {
    // Degenerate: every candidate carries the same loss.
    return rng.index(losses.size());
  }

  const double r = rng.uniform() * total_weight;
  double acc = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    acc += max_loss - losses[i];
    if (r < acc) return i;
  }
  return losses.size() - 1;  // floating-point edge
}

void ReplayContainer::erase_at(Bank& bank, std::size_t index) {
  bank.uid_to_index.erase(bank.samples[index].uid);
  if (index + 1 != bank.samples.size()) {
    bank.samples[index] = std::move(bank.samples.back());
    bank.uid_to_index[bank.samples[index].uid] = index;
  }
  bank.samples.pop_back();
}

void ReplayContainer::evict_down(Bank& bank, std::size_t capacity) {
  // Iterative weighted draws; weights are recomputed after every removal
  // because the pool maximum may have changed.
  while (bank.samples.size() > capacity) {
    std::vector<double> losses(bank.samples.size());
    for (std::size_t i = 0; i < bank.samples.size(); ++i) {
      losses[i] = bank.samples[i].last_loss;
    }
    erase_at(bank, pick_eviction_index(losses, rng_));
  }
}

void ReplayContainer::register_class(int class_id) {
  if (banks_.count(class_id)) return;  // idempotent
  banks_.emplace(class_id, Bank{});
  const std::size_t capacity = bank_capacity();
  for (auto& [_, bank] : banks_) evict_down(bank, capacity);
}

void ReplayContainer::insert_one(StoredSample sample) {
  const auto it = banks_.find(sample.victim_label);
  if (it == banks_.end()) {
    throw StateError("store into unregistered class " + std::to_string(sample.victim_label));
  }
  Bank& bank = it->second;
  sample.uid = age_counter_;
  sample.insert_age = age_counter_;
  ++age_counter_;

  const std::size_t capacity = bank_capacity();
  if (bank.samples.size() < capacity) {
    bank.uid_to_index[sample.uid] = bank.samples.size();
    bank.samples.push_back(std::move(sample));
    return;
  }
  if (capacity == 0) return;  // degenerate: more banks than capacity units

  // Bank is full: the incoming sample joins the eviction pool and competes
  // for its own slot.
  std::vector<double> losses(bank.samples.size() + 1);
  for (std::size_t i = 0; i < bank.samples.size(); ++i) {
    losses[i] = bank.samples[i].last_loss;
  }
  losses.back() = sample.last_loss;

  const std::size_t victim = pick_eviction_index(losses, rng_);
  if (victim == bank.samples.size()) return;  // incoming sample evicted
  erase_at(bank, victim);
  bank.uid_to_index[sample.uid] = bank.samples.size();
  bank.samples.push_back(std::move(sample));
}

void ReplayContainer::store(std::vector<StoredSample> samples) {
  for (auto& sample : samples) insert_one(std::move(sample));
}

void ReplayContainer::update_losses(const std::vector<SampleRef>& refs,
                                    const std::vector<double>& losses) {
  if (refs.size() != losses.size()) {
    throw DimensionError("update_losses: refs and losses differ in length");
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto bank_it = banks_.find(refs[i].class_id);
    if (bank_it == banks_.end()) {
      ++stale_updates_;
      continue;
    }
    auto& bank = bank_it->second;
    const auto idx_it = bank.uid_to_index.find(refs[i].uid);
    if (idx_it == bank.uid_to_index.end()) {
      ++stale_updates_;  // evicted since it was drawn
      continue;
    }
    bank.samples[idx_it->second].last_loss = losses[i];
  }
}

ReplayDraw ReplayContainer::sample_balanced(std::size_t batch_size, Rng& rng) {
  std::vector<int> nonempty;
  for (const auto& [id, bank] : banks_) {
    if (!bank.samples.empty()) nonempty.push_back(id);
  }
  if (nonempty.empty()) throw StateError("sample_balanced on an empty replay");

  const std::size_t base = batch_size / nonempty.size();
  const std::size_t remainder = batch_size % nonempty.size();

  std::vector<std::size_t> counts(nonempty.size(), base);
  if (remainder > 0) {
    // One extra draw each for `remainder` banks chosen uniformly without
    // replacement.
    std::vector<std::size_t> order(nonempty.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    for (std::size_t i = 0; i < remainder; ++i) counts[order[i]] += 1;
  }

  std::vector<const StoredSample*> picked;
  std::vector<SampleRef> refs;
  picked.reserve(batch_size);
  refs.reserve(batch_size);
  for (std::size_t bi = 0; bi < nonempty.size(); ++bi) {
    const Bank& bank = banks_.at(nonempty[bi]);
    for (std::size_t c = 0; c < counts[bi]; ++c) {
      const std::size_t idx = rng.index(bank.samples.size());
      picked.push_back(&bank.samples[idx]);
      refs.push_back(SampleRef{nonempty[bi], bank.samples[idx].uid});
    }
  }

  std::vector<std::size_t> order(picked.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);

  ReplayDraw draw;
  const std::size_t d = picked.empty() ? 0 : picked.front()->input.size();
  const std::size_t k = picked.empty() ? 0 : picked.front()->probs.size();
  draw.inputs = Tensor({picked.size(), d});
  if (k > 0) draw.probs = Tensor({picked.size(), k});
  draw.victim_labels.resize(picked.size());
  draw.refs.resize(picked.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const StoredSample* s = picked[order[i]];
    std::copy(s->input.begin(), s->input.end(), draw.inputs.row(i).begin());
    if (k > 0) {
      if (s->probs.size() != k) throw DimensionError("stored probability widths differ");
      std::copy(s->probs.begin(), s->probs.end(), draw.probs.row(i).begin());
    }
    draw.victim_labels[i] = s->victim_label;
    draw.refs[i] = refs[order[i]];
  }
  return draw;
}

std::string ReplayContainer::serialize() const {
  json j;
  j["total_capacity"] = total_capacity_;
  j["rng"] = rng_.serialize();
  j["age_counter"] = age_counter_;
  j["stale_updates"] = stale_updates_;
  json banks = json::array();
  for (const auto& [id, bank] : banks_) {
    json jb;
    jb["class_id"] = id;
    json samples = json::array();
    for (const auto& s : bank.samples) {
      json js;
      js["input"] = s.input;
      js["label"] = s.victim_label;
      if (!s.probs.empty()) js["probs"] = s.probs;
      js["loss"] = s.last_loss;
      js["age"] = s.insert_age;
      js["uid"] = s.uid;
      samples.push_back(std::move(js));
    }
    jb["samples"] = std::move(samples);
    banks.push_back(std::move(jb));
  }
  j["banks"] = std::move(banks);
  return j.dump();
}

ReplayContainer ReplayContainer::deserialize(const std::string& text) {
  json j = json::parse(text);
  ReplayContainer container(j.at("total_capacity").get<std::size_t>(), 0);
  container.rng_ = Rng::deserialize(j.at("rng").get<std::string>());
  container.age_counter_ = j.at("age_counter").get<std::uint64_t>();
  container.stale_updates_ = j.at("stale_updates").get<std::uint64_t>();
  for (const auto& jb : j.at("banks")) {
    Bank bank;
    for (const auto& js : jb.at("samples")) {
      StoredSample s;
      s.input = js.at("input").get<std::vector<double>>();
      s.victim_label = js.at("label").get<int>();
      if (js.contains("probs")) s.probs = js.at("probs").get<std::vector<double>>();
      s.last_loss = js.at("loss").get<double>();
      s.insert_age = js.at("age").get<std::uint64_t>();
      s.uid = js.at("uid").get<std::uint64_t>();
      bank.uid_to_index[s.uid] = bank.samples.size();
      bank.samples.push_back(std::move(s));
    }
    container.banks_.emplace(jb.at("class_id").get<int>(), std::move(bank));
  }
  return container;
}

void ReplayContainer::dump(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write replay file " + path);
  out << serialize();
  if (!out) throw IoError("failed writing replay file " + path);
}

ReplayContainer ReplayContainer::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open replay file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(text);
}

CircularReplay::CircularReplay(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
}

void CircularReplay::store(std::vector<StoredSample> samples) {
  for (auto& sample : samples) {
    if (samples_.size() < capacity_) {
      samples_.push_back(std::move(sample));
    } else {
      samples_[next_] = std::move(sample);
      next_ = (next_ + 1) % capacity_;
    }
  }
}

ReplayDraw CircularReplay::sample_balanced(std::size_t batch_size, Rng& rng) {
  if (samples_.empty()) throw StateError("sample from an empty circular replay");
  ReplayDraw draw;
  const std::size_t d = samples_.front().input.size();
  const std::size_t k = samples_.front().probs.size();
  draw.inputs = Tensor({batch_size, d});
  if (k > 0) draw.probs = Tensor({batch_size, k});
  draw.victim_labels.resize(batch_size);
  draw.refs.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t idx = rng.index(samples_.size());
    const StoredSample& s = samples_[idx];
    std::copy(s.input.begin(), s.input.end(), draw.inputs.row(i).begin());
    if (k > 0) std::copy(s.probs.begin(), s.probs.end(), draw.probs.row(i).begin());
    draw.victim_labels[i] = s.victim_label;
    draw.refs[i] = SampleRef{s.victim_label, s.uid};
  }
  return draw;
}

}  // namespace dfme
