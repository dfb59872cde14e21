#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vskel/tensor.hpp"

using namespace vskel;

namespace {

Tensor random_tensor(Shape s, unsigned seed, bool grad = true) {
  auto v = oracle::random_vector(numel(s), seed);
  return Tensor::from(std::move(s), std::move(v), grad);
}

}  // namespace

TEST_CASE("elementwise arithmetic") {
  auto a = Tensor::from({2}, {1, 2});
  auto b = Tensor::from({2}, {3, 4});
  auto c = a + b;
  CHECK(c.at(0) == 4);
  CHECK(c.at(1) == 6);

  auto x = Tensor::from({2}, {0.5, 2.0});
  auto y = log(exp(x));
  CHECK(std::abs(y.at(0) - 0.5) < 1e-12);
  CHECK(std::abs(y.at(1) - 2.0) < 1e-12);

  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), TensorError);
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
  } catch (const TensorError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("log and div clamp at the numeric epsilon") {
  auto z = Tensor::from({1}, {0.0});
  CHECK(log(z).at(0) == doctest::Approx(std::log(kNumericEps)));
  auto q = div(Tensor::from({1}, {1.0}), z);
  CHECK(std::isfinite(q.at(0)));
  CHECK(q.at(0) == doctest::Approx(1.0 / kNumericEps));
}

TEST_CASE("product rule gradient") {
  auto a = Tensor::from({1}, {2.0}, true);
  auto b = Tensor::from({1}, {3.0}, true);
  backward(sum(a * b));
  CHECK(a.grad()[0] == 3.0);
  CHECK(b.grad()[0] == 2.0);
}

TEST_CASE("reductions") {
  CHECK(sum(Tensor::from({3}, {1, 2, 3})).item() == 6);
  auto m = Tensor::from({3}, {1, 5, 2}, true);
  auto mx = max(m);
  CHECK(mx.item() == 5);
  backward(mx);
  CHECK(m.grad()[0] == 0);
  CHECK(m.grad()[1] == 1);
  CHECK(m.grad()[2] == 0);
  CHECK(mean(Tensor::full({4, 4}, 1.0)).item() == 1.0);

  auto t = Tensor::from({3}, {7, 7, 7}, true);
  backward(max(t));
  CHECK(t.grad()[0] == 1);
  CHECK(t.grad()[1] == 0);

  auto r = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto s0 = sum(r, {0});
  CHECK(s0.shape() == Shape{3});
  CHECK(s0.at(2) == 9);
  auto s1 = sum(r, {1});
  CHECK(s1.at(1) == 15);
  CHECK_THROWS_AS(sum(r, {2}), TensorError);
}

TEST_CASE("backward basics") {
  auto x = Tensor::from({2}, {1, 2}, true);
  backward(sum(x * x));
  CHECK(x.grad()[0] == 2);
  CHECK(x.grad()[1] == 4);

  auto w = Tensor::from({1}, {0.0}, true);
  auto one = Tensor::from({1}, {1.0});
  auto prod = w * one;
  auto sig = div(Tensor::full({1}, 1.0), add(exp(neg(prod)), 1.0));
  backward(sum(sig));
  CHECK(w.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));

  CHECK_THROWS_AS(backward(Tensor::from({2}, {1, 2}, true) * 2.0), TensorError);

  auto y = Tensor::from({2}, {1, 2}, true);
  auto loss = sum(y * y);
  backward(loss);
  CHECK_THROWS_AS(backward(loss), TensorError);
}

TEST_CASE("backward applies each recorded rule exactly once") {
  auto x = Tensor::from({3}, {0.1, 0.2, 0.3}, true);
  auto a = x * 2.0;        // 1
  auto b = exp(a);         // 2
  auto c = a + b;          // 3  (a reused)
  auto d = log(c);         // 4
  auto loss = sum(d * d);  // 5, 6
  auto report = backward(loss);
  CHECK(report.rules_applied == 6);
}

TEST_CASE("composite gradients match central differences on 20 seeds") {
  for (unsigned seed = 0; seed < 20; ++seed) {
    auto x = random_tensor({2, 3}, seed);
    auto w = random_tensor({2, 3}, 100 + seed, false);
    auto f = [&](const Tensor& t) {
      auto h1 = exp(t * w) + t;
      auto h2 = log(h1 * h1 + 1.0) - clamp(t, -0.5, 0.5);
      auto h3 = concat({slice(h2, 1, 0, 2), reshape(max(h2, {1}), {2, 1})}, 1);
      return sum(h3 / (h3 * h3 + 1.0)) + mean(h3) * sum(h1);
    };
    auto rep = grad_check(f, x, 1e-5, 1e-5);
    INFO("seed " << seed << " err " << rep.max_rel_error);
    CHECK(rep.passed);
  }
}

TEST_CASE("grad_check of sum is exact") {
  auto x = random_tensor({5}, 3);
  auto rep = grad_check([](const Tensor& t) { return sum(t); }, x, 1e-5, 1e-12);
  CHECK(rep.max_rel_error < 1e-9);
}

TEST_CASE("grad_check reports non-finite coordinates") {
  auto x = Tensor::from({2}, {1.0, 1e308}, true);
  CHECK_THROWS_WITH_AS(grad_check([](const Tensor& t) { return sum(t * t); }, x, 1e-5, 1e-5),
                       doctest::Contains("coordinate"), TensorError);
}

TEST_CASE("forward evaluation is bit-identical across runs") {
  auto run = [] {
    auto x = random_tensor({4, 4}, 11, false);
    return sum(log(exp(x) * x + 2.0), {1});
  };
  auto a = run(), b = run();
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("structural ops") {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  auto b = Tensor::from({2, 1}, {5, 6}, true);
  auto c = concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.at(2) == 5);
  CHECK(c.at(5) == 6);
  auto s = slice(c, 1, 1, 3);
  CHECK(s.at(0) == 2);
  CHECK(s.at(1) == 5);
  backward(sum(s * 3.0));
  CHECK(a.grad()[0] == 0);
  CHECK(a.grad()[1] == 3);
  CHECK(b.grad()[1] == 3);
  CHECK_THROWS_AS(reshape(a, {3}), TensorError);
  CHECK_THROWS_AS(slice(a, 1, 1, 3), TensorError);
}

TEST_CASE("no-grad guard suppresses recording") {
  auto x = Tensor::from({1}, {2.0}, true);
  NoGradGuard g;
  auto y = x * x;
  CHECK(y.is_leaf());
  CHECK_FALSE(y.requires_grad());
}
