#include <benchmark/benchmark.h>

#include "dfme/clone_ensemble.hpp"
#include "dfme/generator_ensemble.hpp"
#include "dfme/replay.hpp"
#include "dfme/selective_query.hpp"

using namespace dfme;

namespace {

DenseNetwork make_net(std::size_t in, std::size_t hidden, std::size_t out,
                      std::uint64_t seed) {
  Rng rng(seed);
  DenseNetwork net = DenseNetwork::mlp(in, {hidden}, out, Activation::kLinear);
  net.init_params(rng);
  return net;
}

}  // namespace

static void BM_DenseForward(benchmark::State& state) {
  DenseNetwork net = make_net(64, 128, 64, 1);
  Rng rng(2);
  Tensor batch({static_cast<std::size_t>(state.range(0)), 64});
  for (double& v : batch.data) v = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.forward(batch));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DenseForward)->Arg(25)->Arg(250);

static void BM_DenseForwardBackward(benchmark::State& state) {
  DenseNetwork net = make_net(64, 128, 64, 1);
  Rng rng(2);
  Tensor batch({static_cast<std::size_t>(state.range(0)), 64});
  for (double& v : batch.data) v = rng.normal();
  Tensor grad({static_cast<std::size_t>(state.range(0)), 64});
  for (double& v : grad.data) v = rng.normal();
  for (auto _ : state) {
    net.forward(batch);
    benchmark::DoNotOptimize(net.backward(grad));
    net.zero_grads();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DenseForwardBackward)->Arg(250);

// Generator-phase cost across ensemble sizes. The per-batch work should not
// depend on the member count at fixed batch size and architecture.
static void BM_GeneratorPhase(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  GeneratorConfig gcfg;
  gcfg.count = n;
  gcfg.noise_dim = 100;
  gcfg.hidden = {128};
  gcfg.output_dim = 64;
  GeneratorEnsemble generators(gcfg, rng);

  CloneConfig ccfg;
  ccfg.count = 2;
  ccfg.input_dim = 64;
  ccfg.hidden = {64, 48};
  ccfg.head_capacity = 64;
  ccfg.mode = ResponseMode::kSoftLabel;
  CloneEnsemble clones(ccfg, rng);
  clones.fix_head_width(10);

  Rng run_rng(4);
  for (auto _ : state) {
    train_generators(generators, clones, 1, 250, 10, 0.002, run_rng);
  }
  state.SetItemsProcessed(state.iterations() * 250);
}
BENCHMARK(BM_GeneratorPhase)->Arg(1)->Arg(4)->Arg(8);

static void BM_ReplayStore(benchmark::State& state) {
  Rng rng(5);
  ReplayContainer replay(10000, 6);
  for (int k = 0; k < 10; ++k) replay.register_class(k);
  for (auto _ : state) {
    std::vector<StoredSample> batch(250);
    for (auto& s : batch) {
      s.input.assign(64, rng.normal());
      s.victim_label = static_cast<int>(rng.index(10));
      s.last_loss = rng.uniform();
    }
    replay.store(std::move(batch));
  }
  state.SetItemsProcessed(state.iterations() * 250);
}
BENCHMARK(BM_ReplayStore);

static void BM_ReplaySampleBalanced(benchmark::State& state) {
  Rng rng(7);
  ReplayContainer replay(10000, 8);
  for (int k = 0; k < 10; ++k) {
    replay.register_class(k);
    std::vector<StoredSample> batch(500);
    for (auto& s : batch) {
      s.input.assign(64, rng.normal());
      s.victim_label = k;
      s.last_loss = rng.uniform();
    }
    replay.store(std::move(batch));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(replay.sample_balanced(250, rng));
  }
  state.SetItemsProcessed(state.iterations() * 250);
}
BENCHMARK(BM_ReplaySampleBalanced);

static void BM_SelectBatch(benchmark::State& state) {
  Rng rng(9);
  CandidatePool pool;
  pool.inputs = Tensor({1000, 64});
  pool.predicted_labels.resize(1000);
  pool.disagreement.resize(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    pool.predicted_labels[i] = static_cast<int>(rng.index(10));
    pool.disagreement[i] = rng.uniform();
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(select_batch(pool, 250, 10, rng));
  }
}
BENCHMARK(BM_SelectBatch);

BENCHMARK_MAIN();
