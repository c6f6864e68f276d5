// Serial reference vs chunked serial vs OpenMP for the forecaster gradient
// kernel, and serial vs OpenMP per-server training.
//
//   ./build/bench/vtmig_bench --benchmark_min_time=0.5

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "vtmig/data.hpp"
#include "vtmig/forecast/kernels.hpp"

using namespace vtmig::forecast;

namespace {

std::vector<Sample> make_samples(int n, int window) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<Sample> out(static_cast<std::size_t>(n));
  for (auto& s : out) {
    s.inputs.resize(static_cast<std::size_t>(window));
    for (auto& x : s.inputs) x = d(rng);
    s.target = d(rng);
  }
  return out;
}

ForecastConfig bench_config() {
  ForecastConfig c;
  c.window = 6;
  c.lstm_hidden = 32;
  c.attn_dim = 64;
  c.heads = 4;
  return c;
}

template <int Mode>
void BM_BatchGradient(benchmark::State& state) {
  const auto cfg = bench_config();
  ForecastModel model(ModelKind::LstmTransformer, cfg, 1);
  const auto samples = make_samples(static_cast<int>(state.range(0)), cfg.window);
  std::vector<const Sample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  std::vector<double> grad(model.params().size());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double sse = 0.0;
    if constexpr (Mode == 0) sse = batch_gradient_reference(model, batch, grad);
    if constexpr (Mode == 1) sse = batch_gradient(model, batch, grad, Exec::Serial);
    if constexpr (Mode == 2) sse = batch_gradient(model, batch, grad, Exec::OpenMP);
    benchmark::DoNotOptimize(sse);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <Exec E>
void BM_TrainPerServer(benchmark::State& state) {
  auto cfg = bench_config();
  cfg.epochs = 2;
  cfg.per_server = true;
  vtmig::data::SynthFlowParams p;
  p.n_servers = static_cast<int>(state.range(0));
  p.n_slots = 400;
  p.noise_std = 4.0;
  const auto series = vtmig::data::synth_flow(p);
  for (auto _ : state) {
    auto r = train_model(ModelKind::Lstm, series, cfg, 7, E);
    benchmark::DoNotOptimize(r.bundle.models.data());
  }
}

}  // namespace

BENCHMARK(BM_BatchGradient<0>)->Name("batch_gradient/reference")->Arg(32)->Arg(256);
BENCHMARK(BM_BatchGradient<1>)->Name("batch_gradient/serial")->Arg(32)->Arg(256);
BENCHMARK(BM_BatchGradient<2>)->Name("batch_gradient/openmp")->Arg(32)->Arg(256);
BENCHMARK(BM_TrainPerServer<Exec::Serial>)->Name("train_per_server/serial")->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainPerServer<Exec::OpenMP>)->Name("train_per_server/openmp")->Arg(8)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
