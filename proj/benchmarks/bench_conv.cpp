#include <benchmark/benchmark.h>

#include "vskel/architectures.hpp"
#include "vskel/layers.hpp"
#include "vskel/random.hpp"

using namespace vskel;

namespace {

Tensor random_tensor(const Shape& s, Rng& rng) {
  std::vector<double> v(numel(s));
  for (double& x : v) x = uniform(rng, -1.0, 1.0);
  return Tensor::from(s, std::move(v));
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = std::size_t(state.range(0));
  Rng rng = stream(1, "bench");
  auto p = nn::make_conv(c, c, 3, 2, rng);
  auto x = random_tensor({4, c, 64, 64}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, p));
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Conv3dForward(benchmark::State& state) {
  const auto c = std::size_t(state.range(0));
  Rng rng = stream(2, "bench");
  auto p = nn::make_conv(c, c, 3, 3, rng);
  auto x = random_tensor({1, c, 16, 32, 32}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv3d(x, p));
}
BENCHMARK(BM_Conv3dForward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  Rng rng = stream(3, "bench");
  auto p = nn::make_conv(16, 16, 3, 2, rng);
  p.kernel.set_requires_grad(true);
  auto x = random_tensor({4, 16, 64, 64}, rng);
  for (auto _ : state) {
    auto loss = sum(nn::conv2d(x, p));
    backward(loss);
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Unit(benchmark::kMillisecond);

void BM_U2dForward(benchmark::State& state) {
  arch::NetworkSpec spec;
  spec.kind = arch::Kind::U2D;
  spec.channels = {8, 16, 32};
  arch::Network net(spec);
  Rng rng = stream(4, "bench");
  auto x = random_tensor({1, 1, 16, 64, 64}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, nn::Mode::Train));
}
BENCHMARK(BM_U2dForward)->Unit(benchmark::kMillisecond);

}  // namespace
