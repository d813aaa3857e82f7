#include <benchmark/benchmark.h>

#include "tssl/eval.hpp"
#include "tssl/pretext.hpp"

using namespace tssl;

namespace {

data::DataTable corpus(std::size_t n, std::size_t d) {
  data::SyntheticSpec spec;
  spec.n_classes = 4;
  spec.n_features = d;
  spec.n_redundant_groups = d / 8;
  spec.samples_per_class = n / 4;
  spec.seed = 3;
  return data::synthetic_corpus(spec);
}

}  // namespace

static void BM_InfoNce(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  Matrix q(n, 256), qt(n, 256);
  for (double& v : q.values) v = rng.normal();
  for (double& v : qt.values) v = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(pretext::info_nce_with_grads(
        q, qt, 1.0, pretext::InfoNceVariant::standard_infonce));
  }
}
BENCHMARK(BM_InfoNce)->Arg(128)->Arg(256);

static void BM_ScarfStep(benchmark::State& state) {
  const auto table = corpus(256, 512);
  const auto pools = data::marginals(table);
  Rng rng(5);
  nn::MlpSpec spec{512, {256, 256, 256, 256}, true, nn::Activation::relu, false};
  pretext::ScarfModel model =
      pretext::make_scarf(spec, rng, 1.0, pretext::InfoNceVariant::standard_infonce);
  nn::AdamState enc_opt = nn::make_adam(model.encoder.params, 1e-3);
  nn::AdamState proj_opt = nn::make_adam(model.projector.params, 1e-3);
  Matrix batch(128, 512);
  for (std::size_t r = 0; r < 128; ++r)
    std::copy_n(table.features.row_ptr(r), 512, batch.row_ptr(r));
  for (auto _ : state) {
    pretext::scarf_step(model, batch, pools, 0.3, rng, enc_opt, proj_opt);
  }
}
BENCHMARK(BM_ScarfStep);

static void BM_VimeStep(benchmark::State& state) {
  const auto table = corpus(256, 512);
  const auto pools = data::marginals(table);
  Rng rng(6);
  nn::MlpSpec spec{512, {256, 256, 256, 256}, true, nn::Activation::relu, false};
  pretext::VimeModel model = pretext::make_vime(spec, 512, rng, 1.0, false);
  nn::AdamState a = nn::make_adam(model.encoder.params, 1e-3);
  nn::AdamState b = nn::make_adam(model.feature_decoder.params, 1e-3);
  nn::AdamState c = nn::make_adam(model.mask_decoder.params, 1e-3);
  Matrix batch(128, 512);
  for (std::size_t r = 0; r < 128; ++r)
    std::copy_n(table.features.row_ptr(r), 512, batch.row_ptr(r));
  for (auto _ : state) {
    pretext::vime_step(model, batch, pools, 0.3, rng, a, b, c);
  }
}
BENCHMARK(BM_VimeStep);

static void BM_ByolStep(benchmark::State& state) {
  const auto table = corpus(256, 512);
  const auto pools = data::marginals(table);
  Rng rng(7);
  nn::MlpSpec spec{512, {256, 256, 256, 256}, true, nn::Activation::relu, false};
  pretext::ByolModel model = pretext::make_byol(spec, rng, 0.99, false, false);
  nn::AdamState a = nn::make_adam(model.online_encoder.params, 1e-3);
  nn::AdamState b = nn::make_adam(model.online_projector.params, 1e-3);
  nn::AdamState c = nn::make_adam(model.predictor.params, 1e-3);
  Matrix batch(128, 512);
  for (std::size_t r = 0; r < 128; ++r)
    std::copy_n(table.features.row_ptr(r), 512, batch.row_ptr(r));
  for (auto _ : state) {
    pretext::byol_step(model, batch, pools, 0.3, rng, a, b, c);
  }
}
BENCHMARK(BM_ByolStep);

static void BM_SingularSpectrum(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(8);
  Matrix z(2000, d);
  for (double& v : z.values) v = rng.normal();
  const Matrix cov = eval::embedding_covariance(z);
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::singular_spectrum(cov));
  }
}
BENCHMARK(BM_SingularSpectrum)->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
