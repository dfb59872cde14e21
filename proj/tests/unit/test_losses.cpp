#include <cmath>
#include <cstring>

#include "doctest.h"
#include "oracles.hpp"
#include "vskel/layers.hpp"
#include "vskel/losses.hpp"
#include "vskel/random.hpp"

using namespace vskel;
using namespace vskel::loss;

namespace {

Tensor probs(Shape s, unsigned seed) {
  auto v = oracle::random_vector(numel(s), seed, 0.01, 0.99);
  return Tensor::from(std::move(s), std::move(v), true);
}

Tensor labels(Shape s, unsigned seed, double p = 0.3) {
  auto v = oracle::random_vector(numel(s), seed, 0.0, 1.0);
  for (double& x : v) x = x < p ? 1.0 : 0.0;
  return Tensor::from(std::move(s), std::move(v));
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("bce anchors and oracle") {
  CHECK(bce(Tensor::from({2}, {0.5, 0.5}), Tensor::from({2}, {0, 1})).item() ==
        doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));
  CHECK(bce(Tensor::from({3}, {1, 0, 1}), Tensor::from({3}, {1, 0, 1})).item() ==
        doctest::Approx(0.0).epsilon(1e-10));
  auto x = probs({50}, 1);
  auto y = labels({50}, 2);
  double ref = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    ref -= y.at(i) * std::log(x.at(i)) + (1 - y.at(i)) * std::log(1 - x.at(i));
  }
  CHECK(std::abs(bce(x, y).item() - ref) < 1e-12);
  CHECK_THROWS_AS(bce(x, Tensor::zeros({49})), TensorError);
}

TEST_CASE("weighted bce reductions") {
  auto x = probs({4, 8}, 3);
  auto y = labels({4, 8}, 4);
  const double plain = bce(x, y).item();
  CHECK(bit_equal(weighted_bce(x, y, Tensor::full({4, 8}, 1.0)).item(), plain));

  auto y0 = Tensor::zeros({4, 8});
  const double beta = 0.07;
  CHECK(weighted_bce(x, y0, Tensor::full({4, 8}, beta)).item() ==
        doctest::Approx(beta * bce(x, y0).item()).epsilon(1e-14));

  auto w = Tensor::from({4, 8}, oracle::random_vector(32, 5, 0.1, 1.0));
  double ref = 0.0;
  for (std::size_t i = 0; i < 32; ++i) {
    ref -= w.at(i) * (y.at(i) * std::log(x.at(i)) + (1 - y.at(i)) * std::log(1 - x.at(i)));
  }
  CHECK(std::abs(weighted_bce(x, y, w).item() - ref) < 1e-12);
}

TEST_CASE("dice loss literal values") {
  auto ones = Tensor::full({4}, 1.0);
  CHECK(dice(ones, ones).item() == doctest::Approx(-1.0 / 9.0).epsilon(1e-15));
  auto zeros = Tensor::zeros({4});
  CHECK(dice(zeros, zeros).item() == -1.0);
  std::vector<double> a(20, 0.0), b(20, 0.0);
  for (int i = 0; i < 10; ++i) a[i] = b[10 + i] = 1.0;
  CHECK(dice(Tensor::from({20}, a), Tensor::from({20}, b)).item() ==
        doctest::Approx(1.0 - 2.0 / 21.0).epsilon(1e-15));
}

TEST_CASE("loss gradients match finite differences") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    auto x = probs({4, 4}, 10 + seed);
    auto y = labels({4, 4}, 20 + seed);
    auto w = Tensor::from({4, 4}, oracle::random_vector(16, 30 + seed, 0.1, 1.0));
    INFO("seed " << seed);
    CHECK(grad_check([&](const Tensor& t) { return dice(t, y); }, x, 1e-5, 1e-6).passed);
    CHECK(grad_check([&](const Tensor& t) { return bce(t, y); }, x, 1e-5, 1e-5).passed);
    CHECK(grad_check([&](const Tensor& t) { return weighted_bce(t, y, w); }, x, 1e-5, 1e-5).passed);
  }
}

TEST_CASE("weight map") {
  Volume sk({21, 21, 9}, kDefaultSpacing, VolumeKind::Skeleton);
  auto w0 = weight_map(sk, 0.1);
  for (double v : w0.data) CHECK(v == doctest::Approx(0.1).epsilon(1e-15));
  CHECK_THROWS_AS(weight_map(sk, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(weight_map(sk, 1.0), std::invalid_argument);

  sk.at(10, 10, 4) = 1.0;
  const double beta = 0.05, sigma = 2.0;
  auto w = weight_map(sk, beta, sigma);
  CHECK(w.at(10, 10, 4) == doctest::Approx(1.0).epsilon(1e-15));
  for (double v : w.data) {
    CHECK(v >= beta);
    CHECK(v <= 1.0);
  }
  // brute-force kernel sum at a voxel ~3 sigma away in-plane
  const std::size_t px = 10 + static_cast<std::size_t>(std::ceil(3 * sigma / 0.83));
  double field = 0.0;
  for (std::size_t z = 0; z < 9; ++z)
    for (std::size_t y = 0; y < 21; ++y)
      for (std::size_t x = 0; x < 21; ++x) {
        if (sk.at(x, y, z) == 0.0) continue;
        const double dx = (double(x) - double(px)) * 0.83, dy = (double(y) - 10.0) * 0.83,
                     dz = (double(z) - 4.0) * 5.0;
        field += std::exp(-(dx * dx + dy * dy + dz * dz) / (2 * sigma * sigma));
      }
  CHECK(w.at(px, 10, 4) == doctest::Approx(beta + (1 - beta) * field).epsilon(1e-12));
  CHECK(w.at(px, 10, 4) <= beta + (1 - beta) * 0.012);

  // translation of an isolated point translates the map (away from borders)
  Volume sk2({21, 21, 9}, kDefaultSpacing, VolumeKind::Skeleton);
  sk2.at(12, 9, 5) = 1.0;
  auto w2 = weight_map(sk2, beta, sigma);
  for (std::size_t z = 0; z < 8; ++z)
    for (std::size_t y = 1; y < 21; ++y)
      for (std::size_t x = 0; x < 19; ++x)
        CHECK(w2.at(x + 2, y - 1, z + 1) == doctest::Approx(w.at(x, y, z)).epsilon(1e-12));

  // along a line the kernel tails add up: W on the line is the full kernel sum
  Volume line({41, 21, 9}, kDefaultSpacing, VolumeKind::Skeleton);
  for (std::size_t x = 0; x < 41; ++x) line.at(x, 10, 4) = 1.0;
  auto wl = weight_map(line, beta, sigma);
  double on_line = 0.0;
  for (std::size_t x = 0; x < 41; ++x) {
    const double dx = (double(x) - 20.0) * 0.83;
    if (std::abs(dx) <= 4 * sigma) on_line += std::exp(-dx * dx / (2 * sigma * sigma));
  }
  CHECK(wl.at(20, 10, 4) == doctest::Approx(beta + (1 - beta) * on_line).epsilon(1e-12));
  CHECK(wl.at(20, 10, 4) > 5.0);
}

TEST_CASE("class balance clamps") {
  Volume a({10, 10, 1}, kDefaultSpacing, VolumeKind::Skeleton);
  CHECK(class_balance({&a}) == kBetaMin);
  for (std::size_t i = 0; i < 10; ++i) a.data[i] = 1.0;
  CHECK(class_balance({&a}) == doctest::Approx(0.1));
  for (double& v : a.data) v = 1.0;
  CHECK(class_balance({&a}) == kBetaMax);
}

TEST_CASE("adam") {
  auto p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  Adam opt({{"p", p}});
  auto g = autograd::grad_buffer(p);
  for (double& v : g) v = 1.0;
  opt.step();
  CHECK(p.at(0) == doctest::Approx(1.0 - 1e-4).epsilon(1e-10));
  CHECK(p.at(1) == doctest::Approx(-2.0 - 1e-4).epsilon(1e-10));
  CHECK(opt.t() == 1);

  const double before = p.at(2);
  autograd::grad_buffer(p);  // zero gradient
  Adam fresh({{"p", p}});
  fresh.step();
  CHECK(p.at(2) == before);
  CHECK(fresh.t() == 1);

  // scalar quadratic f = (w - 3)^2 against a hand-rolled sequence
  auto w = Tensor::from({1}, {0.0}, true);
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam q({{"w", w}}, cfg);
  double wr = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    auto d = w - Tensor::from({1}, {3.0});
    backward(sum(d * d));
    q.step();
    const double gr = 2 * (wr - 3);
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    wr -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(std::abs(w.at(0) - wr) < 1e-12);
  }

  auto bad = Tensor::from({1}, {0.0}, true);
  autograd::grad_buffer(bad)[0] = std::nan("");
  Adam b({{"layer.kernel", bad}});
  CHECK_THROWS_WITH(b.step(), doctest::Contains("layer.kernel"));
}

TEST_CASE("losses decrease while overfitting one tile") {
  using namespace vskel::nn;
  const Shape s{1, 1, 8, 32, 32};
  auto target = labels(s, 99, 0.05);
  auto input = Tensor::from(s, oracle::random_vector(numel(s), 98, 0.0, 1.0));
  Volume tv({32, 32, 8}, kDefaultSpacing, VolumeKind::Skeleton);
  for (std::size_t i = 0; i < tv.size(); ++i) tv.data[i] = target.at(i);
  auto wm = weight_map(tv, class_balance({&tv}));
  auto wt = Tensor::from(s, wm.data);
  for (LossKind kind : {LossKind::Bce, LossKind::Wbce, LossKind::Dice}) {
    Rng rng(7);
    auto conv = make_conv(1, 1, 3, 2, rng);
    AdamConfig cfg;
    cfg.lr = 1e-2;
    Adam opt({{"k", conv.kernel}, {"b", conv.bias}}, cfg);
    double prev = 1e300;
    bool monotone = true;
    for (int step = 0; step < 50; ++step) {
      auto x = reshape(input, {8, 1, 32, 32});
      auto pred = reshape(sigmoid(conv2d(x, conv)), s);
      Tensor l = kind == LossKind::Bce    ? bce(pred, target)
                 : kind == LossKind::Wbce ? weighted_bce(pred, target, wt)
                                          : dice(pred, target);
      const double v = l.item();
      if (v >= prev) monotone = false;
      prev = v;
      backward(l);
      opt.step();
    }
    INFO(loss_name(kind));
    CHECK(monotone);
  }
}
