#include <benchmark/benchmark.h>

#include "imgconf/confounder.hpp"
#include "imgconf/estimators.hpp"
#include "imgconf/propensity.hpp"
#include "imgconf/raster.hpp"
#include "imgconf/salience.hpp"

using namespace imgconf;

namespace {

std::vector<Raster> scenes(std::size_t n, std::size_t size, std::size_t channels = 1) {
  SynthParams p;
  p.height = p.width = size;
  p.channels = channels;
  std::vector<Raster> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_scene(p, i));
  return out;
}

void BM_SynthScene(benchmark::State& state) {
  SynthParams p;
  p.height = p.width = static_cast<std::size_t>(state.range(0));
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(synth_scene(p, i++));
}
BENCHMARK(BM_SynthScene)->Arg(32)->Arg(56);

void BM_ConvolveValid(benchmark::State& state) {
  const auto r = scenes(1, static_cast<std::size_t>(state.range(0)))[0];
  const KernelFilter f = KernelFilter::diagonal(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(convolve_valid(r, f));
  const double outs = double(r.height() - f.width() + 1) * double(r.width() - f.width() + 1);
  state.counters["MAC/s"] = benchmark::Counter(outs * double(f.width() * f.width()),
                                               benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_ConvolveValid)->Args({32, 9})->Args({56, 9})->Args({56, 13});

void BM_Downsample(benchmark::State& state) {
  const auto r = scenes(1, 56)[0];
  for (auto _ : state) benchmark::DoNotOptimize(downsample(r, 0.12));
}
BENCHMARK(BM_Downsample);

void BM_ForwardSimulation(benchmark::State& state) {
  const std::size_t size = static_cast<std::size_t>(state.range(0));
  const auto r = scenes(1, size)[0];
  const auto m = PropensityModel::initialized(ConvNetSpec::simulation(9), {size, size, 1}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, r));
}
BENCHMARK(BM_ForwardSimulation)->Arg(32)->Arg(56);

void BM_ForwardApplication(benchmark::State& state) {
  const auto r = scenes(1, 32, 3)[0];
  const auto m = PropensityModel::initialized(ConvNetSpec::application(3), {32, 32, 3}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, r));
}
BENCHMARK(BM_ForwardApplication);

void BM_SalienceApplication(benchmark::State& state) {
  const auto r = scenes(1, 32, 3)[0];
  const auto m = PropensityModel::initialized(ConvNetSpec::application(3), {32, 32, 3}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(salience_map(m, r));
}
BENCHMARK(BM_SalienceApplication);

// One epoch over 500 scenes: the unit of work in every grid cell.
void BM_TrainEpoch(benchmark::State& state) {
  const std::size_t size = static_cast<std::size_t>(state.range(0));
  const auto imgs = scenes(500, size);
  std::vector<int> t(imgs.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<int>(i % 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.base_lr = 0.2;
  for (auto _ : state) benchmark::DoNotOptimize(train(imgs, t, ConvNetSpec::simulation(9), cfg));
}
BENCHMARK(BM_TrainEpoch)->Arg(32)->Arg(56)->Unit(benchmark::kMillisecond);

void BM_Hajek(benchmark::State& state) {
  const std::size_t n = 500;
  std::vector<int> t(n);
  std::vector<double> y(n), pi(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = static_cast<int>(i % 2);
    y[i] = double(i % 7);
    pi[i] = 0.1 + 0.8 * double(i % 11) / 10.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(ipw_hajek(t, y, pi));
}
BENCHMARK(BM_Hajek);

}  // namespace
BENCHMARK_MAIN();
