#include <benchmark/benchmark.h>

#include "vskel/distance.hpp"
#include "vskel/metrics.hpp"
#include "vskel/skeleton.hpp"
#include "vskel/synthgen.hpp"

using namespace vskel;

namespace {

const synth::Phantom& phantom() {
  static const auto p = synth::generate_phantom({}, {128, 128, 16}, kDefaultSpacing, 11);
  return p;
}

void BM_DistanceTransform(benchmark::State& state) {
  const auto& m = phantom().mask;
  for (auto _ : state) benchmark::DoNotOptimize(distance_transform(m, true));
  state.SetItemsProcessed(state.iterations() * std::int64_t(m.size()));
}
BENCHMARK(BM_DistanceTransform)->Unit(benchmark::kMillisecond);

void BM_Thin(benchmark::State& state) {
  const auto& m = phantom().mask;
  for (auto _ : state) benchmark::DoNotOptimize(thin(m));
  state.SetItemsProcessed(state.iterations() * std::int64_t(m.size()));
}
BENCHMARK(BM_Thin)->Unit(benchmark::kMillisecond);

void BM_GeneratePhantom(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(synth::generate_phantom({}, {128, 128, 16}, kDefaultSpacing, ++seed));
}
BENCHMARK(BM_GeneratePhantom)->Unit(benchmark::kMillisecond);

void BM_SkeletonError(benchmark::State& state) {
  const auto a = metrics::points_of(phantom().skeleton);
  const auto b = metrics::points_of(thin(phantom().mask));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::mhd(a, b));
}
BENCHMARK(BM_SkeletonError)->Unit(benchmark::kMicrosecond);

}  // namespace
