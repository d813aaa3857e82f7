#include <benchmark/benchmark.h>

#include "tssl/nn.hpp"

using namespace tssl;

static void BM_DenseForward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Matrix x(128, width);
  Matrix w(width, width);
  std::vector<double> bias(width, 0.1);
  for (double& v : x.values) v = rng.normal();
  for (double& v : w.values) v = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::dense_forward(x, w, bias));
  }
  state.SetItemsProcessed(state.iterations() * 128 * width * width);
}
BENCHMARK(BM_DenseForward)->Arg(256)->Arg(512)->Arg(1024);

static void BM_MlpTrainStep(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  nn::MlpSpec spec{512, {width, width, width, width}, true,
                   nn::Activation::relu, false};
  Rng rng(2);
  nn::ParamStore params = nn::init_params(spec, rng);
  nn::AdamState opt = nn::make_adam(params, 1e-3);
  Matrix x(128, 512);
  for (double& v : x.values) v = rng.normal();
  Matrix probe(128, width);
  for (double& v : probe.values) v = rng.normal();
  for (auto _ : state) {
    nn::ForwardCache cache;
    nn::mlp_forward(spec, params, x, nn::RunMode::train, &cache);
    auto back = nn::mlp_backward(spec, params, cache, probe);
    nn::adam_step(params, back.grads, opt);
  }
}
BENCHMARK(BM_MlpTrainStep)->Arg(256);

BENCHMARK_MAIN();
