#include "dfme/serialize.hpp"

#include <fstream>

namespace dfme {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape;
  j["data"] = t.data;
  return j;
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(),
                j.at("data").get<std::vector<double>>());
}

json network_to_json(const DenseNetwork& net) {
  json layers = json::array();
  for (const auto& layer : net.layers()) {
    json jl;
    jl["weight"] = tensor_to_json(layer.weight);
    jl["bias"] = tensor_to_json(layer.bias);
    jl["act"] = to_string(layer.act);
    layers.push_back(std::move(jl));
  }
  json j;
  j["layers"] = std::move(layers);
  return j;
}

DenseNetwork network_from_json(const json& j) {
  const auto& jlayers = j.at("layers");
  std::vector<std::size_t> dims;
  std::vector<Activation> acts;
  for (const auto& jl : jlayers) {
    const auto shape = jl.at("weight").at("shape").get<std::vector<std::size_t>>();
    if (dims.empty()) dims.push_back(shape[1]);
    dims.push_back(shape[0]);
    acts.push_back(activation_from_string(jl.at("act").get<std::string>()));
  }
  DenseNetwork net(dims, acts);
  std::size_t t = 0;
  for (const auto& jl : jlayers) {
    net.layers()[t].weight = tensor_from_json(jl.at("weight"));
    net.layers()[t].bias = tensor_from_json(jl.at("bias"));
    ++t;
  }
  return net;
}

json optimizer_to_json(const Optimizer& opt) {
  json j;
  j["kind"] = to_string(opt.config().kind);
  j["learning_rate"] = opt.config().learning_rate;
  j["slot1"] = opt.slot1();
  j["slot2"] = opt.slot2();
  j["step_count"] = opt.step_count();
  return j;
}

void restore_optimizer(Optimizer& opt, const json& j) {
  if (j.at("kind").get<std::string>() != to_string(opt.config().kind)) {
    throw ConfigError("optimizer kind mismatch in snapshot");
  }
  opt.set_learning_rate(j.at("learning_rate").get<double>());
  opt.slot1() = j.at("slot1").get<std::vector<std::vector<double>>>();
  opt.slot2() = j.at("slot2").get<std::vector<std::vector<double>>>();
  opt.set_step_count(j.at("step_count").get<std::int64_t>());
}

json registry_to_json(const ClassRegistry& registry) {
  json events = json::array();
  for (const auto& event : registry.log()) {
    events.push_back({{"victim_id", event.victim_id}, {"spent_at", event.spent_at}});
  }
  json j;
  j["events"] = std::move(events);
  return j;
}

void restore_registry(ClassRegistry& registry, const json& j) {
  if (registry.size() != 0) throw StateError("restoring into a non-empty registry");
  for (const auto& je : j.at("events")) {
    registry.discover(je.at("victim_id").get<int>(), je.at("spent_at").get<std::int64_t>());
  }
}

json clone_ensemble_to_json(const CloneEnsemble& clones) {
  json members = json::array();
  for (const auto& member : clones.members()) members.push_back(network_to_json(member));
  json optims = json::array();
  for (const auto& opt : clones.optimizers()) optims.push_back(optimizer_to_json(opt));
  json j;
  j["members"] = std::move(members);
  j["optimizers"] = std::move(optims);
  j["registry"] = registry_to_json(clones.registry());
  j["head_fixed"] = clones.head_fixed();
  return j;
}

void restore_clone_ensemble(CloneEnsemble& clones, const json& j) {
  const auto& jmembers = j.at("members");
  if (jmembers.size() != clones.members().size()) {
    throw ConfigError("clone member count mismatch in snapshot");
  }
  for (std::size_t m = 0; m < clones.members().size(); ++m) {
    clones.members()[m] = network_from_json(jmembers[m]);
  }
  const auto& joptims = j.at("optimizers");
  for (std::size_t m = 0; m < clones.optimizers().size(); ++m) {
    restore_optimizer(clones.optimizers()[m], joptims[m]);
  }
  ClassRegistry fresh;
  restore_registry(fresh, j.at("registry"));
  clones.registry() = fresh;
  clones.set_head_fixed(j.at("head_fixed").get<bool>());
}

json generator_ensemble_to_json(const GeneratorEnsemble& generators) {
  json members = json::array();
  for (const auto& member : generators.members()) members.push_back(network_to_json(member));
  json optims = json::array();
  for (const auto& opt : generators.optimizers()) optims.push_back(optimizer_to_json(opt));
  json j;
  j["members"] = std::move(members);
  j["optimizers"] = std::move(optims);
  return j;
}

void restore_generator_ensemble(GeneratorEnsemble& generators, const json& j) {
  const auto& jmembers = j.at("members");
  if (jmembers.size() != generators.members().size()) {
    throw ConfigError("generator member count mismatch in snapshot");
  }
  for (std::size_t m = 0; m < generators.members().size(); ++m) {
    generators.members()[m] = network_from_json(jmembers[m]);
  }
  const auto& joptims = j.at("optimizers");
  for (std::size_t m = 0; m < generators.optimizers().size(); ++m) {
    restore_optimizer(generators.optimizers()[m], joptims[m]);
  }
}

void save_victim_file(const std::string& path, const VictimFile& vf) {
  json j;
  j["format"] = "dfme-victim-v1";
  j["net"] = network_to_json(vf.net);
  j["dataset"] = vf.dataset_descriptor;
  j["arch"] = vf.arch;
  j["train_accuracy"] = vf.train_accuracy;
  j["test_accuracy"] = vf.test_accuracy;
  j["seed"] = vf.seed;
  j["num_classes"] = vf.eval_split.num_classes;
  j["eval_inputs"] = tensor_to_json(vf.eval_split.inputs);
  j["eval_labels"] = vf.eval_split.labels;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write victim file " + path);
  out << j.dump();
  if (!out) throw IoError("failed writing victim file " + path);
}

VictimFile load_victim_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open victim file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("victim file " + path + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "dfme-victim-v1") {
    throw IoError("victim file " + path + " has an unknown format tag");
  }
  VictimFile vf;
  vf.net = network_from_json(j.at("net"));
  vf.dataset_descriptor = j.value("dataset", "");
  vf.arch = j.value("arch", "");
  vf.train_accuracy = j.at("train_accuracy").get<double>();
  vf.test_accuracy = j.at("test_accuracy").get<double>();
  vf.seed = j.at("seed").get<std::uint64_t>();
  vf.eval_split.inputs = tensor_from_json(j.at("eval_inputs"));
  vf.eval_split.labels = j.at("eval_labels").get<std::vector<int>>();
  vf.eval_split.num_classes = j.at("num_classes").get<int>();
  return vf;
}

}  // namespace dfme
