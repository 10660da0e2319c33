#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "dfme/clone_ensemble.hpp"
#include "dfme/dataset.hpp"
#include "dfme/generator_ensemble.hpp"
#include "dfme/network.hpp"
#include "dfme/optimizer.hpp"
#include "dfme/victim.hpp"

namespace dfme {

// JSON snapshots. nlohmann serializes doubles with shortest-exact decimal,
// so every round-trip below is bit-exact for finite values.

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

nlohmann::json network_to_json(const DenseNetwork& net);
DenseNetwork network_from_json(const nlohmann::json& j);

nlohmann::json optimizer_to_json(const Optimizer& opt);
void restore_optimizer(Optimizer& opt, const nlohmann::json& j);

nlohmann::json registry_to_json(const ClassRegistry& registry);
void restore_registry(ClassRegistry& registry, const nlohmann::json& j);

nlohmann::json clone_ensemble_to_json(const CloneEnsemble& clones);
// Restores parameters, optimizer state and registry into an ensemble built
// from the same configuration.
void restore_clone_ensemble(CloneEnsemble& clones, const nlohmann::json& j);

nlohmann::json generator_ensemble_to_json(const GeneratorEnsemble& generators);
void restore_generator_ensemble(GeneratorEnsemble& generators, const nlohmann::json& j);

// Victim file: trained network plus its held-out evaluation split, so
// extraction runs always evaluate against the split the victim was scored on.
struct VictimFile {
  DenseNetwork net;
  std::string dataset_descriptor;
  std::string arch;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t seed = 0;
  LabeledDataset eval_split;
};

void save_victim_file(const std::string& path, const VictimFile& vf);
VictimFile load_victim_file(const std::string& path);

}  // namespace dfme
