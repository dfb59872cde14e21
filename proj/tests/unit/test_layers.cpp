#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "vskel/layers.hpp"
#include "vskel/random.hpp"

using namespace vskel;
using namespace vskel::nn;

namespace {

Tensor rnd(Shape s, unsigned seed, bool grad = false, double lo = -1.0, double hi = 1.0) {
  auto v = oracle::random_vector(numel(s), seed, lo, hi);
  return Tensor::from(std::move(s), std::move(v), grad);
}

ConvParams conv_from(Shape ks, std::vector<double> k, std::vector<double> b,
                     Padding pad = Padding::Same) {
  ConvParams p;
  const std::size_t o = ks[0];
  p.kernel = Tensor::from(std::move(ks), std::move(k), true);
  p.bias = Tensor::from({o}, std::move(b), true);
  p.padding = pad;
  return p;
}

double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv2d anchors") {
  auto x = Tensor::full({1, 3, 3}, 1.0);
  auto p = conv_from({1, 1, 3, 3}, std::vector<double>(9, 1.0), {0.0});
  auto y = conv2d(x, p);
  CHECK(y.shape() == Shape{1, 3, 3});
  CHECK(y.at(4) == 9.0);

  std::vector<double> delta(9, 0.0);
  delta[4] = 1.0;
  auto in = rnd({1, 6, 5}, 1);
  auto id = conv2d(in, conv_from({1, 1, 3, 3}, delta, {0.0}));
  for (std::size_t i = 0; i < in.numel(); ++i) CHECK(id.at(i) == in.at(i));
}

TEST_CASE("conv2d and conv3d match the nested-loop oracle") {
  for (auto pad : {Padding::Same, Padding::Valid}) {
    const long pp = pad == Padding::Same ? 1 : 0;
    auto x = rnd({1, 5, 5}, 2);
    auto k = oracle::random_vector(2 * 9, 3);
    auto b = oracle::random_vector(2, 4);
    auto y = conv2d(x, conv_from({2, 1, 3, 3}, k, b, pad));
    std::size_t od, oh, ow;
    auto ref = oracle::conv3d({x.data().begin(), x.data().end()}, 1, 1, 5, 5, k, 2, 1, 3, 3, b,
                              0, pp, pp, od, oh, ow);
    CHECK(y.shape() == Shape{2, oh, ow});
    CHECK(max_abs_diff(y.data(), ref) < 1e-12);

    auto x3 = rnd({2, 4, 6, 5}, 5);
    auto k3 = oracle::random_vector(3 * 2 * 27, 6);
    auto b3 = oracle::random_vector(3, 7);
    auto y3 = conv3d(x3, conv_from({3, 2, 3, 3, 3}, k3, b3, pad));
    auto ref3 = oracle::conv3d({x3.data().begin(), x3.data().end()}, 2, 4, 6, 5, k3, 3, 3, 3, 3,
                               b3, pp, pp, pp, od, oh, ow);
    CHECK(y3.shape() == Shape{3, od, oh, ow});
    CHECK(max_abs_diff(y3.data(), ref3) < 1e-12);
  }
  auto ones = Tensor::full({1, 3, 3, 3}, 1.0);
  auto v = conv3d(ones, conv_from({1, 1, 3, 3, 3}, std::vector<double>(27, 1.0), {0.0},
                                  Padding::Valid));
  CHECK(v.numel() == 1);
  CHECK(v.item() == 27.0);
}

TEST_CASE("conv errors and shape preservation") {
  Rng rng(1);
  auto p = make_conv(2, 3, 3, 2, rng, Padding::Valid);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 2, 2}), p), TensorError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({3, 5, 5}), p), TensorError);
  for (std::size_t h : {1u, 2u, 7u, 16u}) {
    auto q = make_conv(2, 3, 3, 2, rng);
    CHECK(conv2d(Tensor::zeros({2, h, h + 1}), q).shape() == Shape{3, h, h + 1});
    auto q3 = make_conv(2, 3, 3, 3, rng);
    CHECK(conv3d(Tensor::zeros({2, h, 3, h}), q3).shape() == Shape{3, h, 3, h});
  }
}

TEST_CASE("glorot initialisation bounds") {
  Rng rng(9);
  auto p = make_conv(4, 8, 3, 2, rng);
  const double bound = std::sqrt(6.0 / (4 * 9 + 8 * 9));
  CHECK(glorot_bound(4, 8, 9) == doctest::Approx(bound));
  double mx = 0.0;
  for (double v : p.kernel.data()) mx = std::max(mx, std::abs(v));
  CHECK(mx <= bound);
  CHECK(mx > 0.8 * bound);
  for (double v : p.bias.data()) CHECK(v == 0.0);
}

TEST_CASE("maxpool and upsample") {
  auto x = Tensor::from({1, 2, 2}, {1, 2, 3, 4}, true);
  auto m = maxpool(x, 2, 2);
  CHECK(m.item() == 4);
  backward(sum(m));
  CHECK(x.grad()[3] == 1);
  CHECK(x.grad()[0] == 0);

  auto c = Tensor::full({2, 4, 4, 4}, 3.0);
  auto mc = maxpool(c, 2, 3);
  CHECK(mc.shape() == Shape{2, 2, 2, 2});
  for (double v : mc.data()) CHECK(v == 3.0);
  auto back = upsample(maxpool(c, 2, 3), 2, 3);
  CHECK(back.shape() == c.shape());
  for (double v : back.data()) CHECK(v == 3.0);

  CHECK_THROWS_WITH_AS(maxpool(Tensor::zeros({1, 3, 4}), 2, 2), doctest::Contains("pad"),
                       TensorError);

  auto r = rnd({8, 8}, 12);
  auto mr = maxpool(r, 2, 2);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t xx = 0; xx < 4; ++xx) {
      double best = -1e300;
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) best = std::max(best, r.at((2 * y + a) * 8 + 2 * xx + b));
      CHECK(mr.at(y * 4 + xx) == best);
    }

  auto tie = Tensor::from({2, 2}, {5, 5, 5, 5}, true);
  backward(sum(maxpool(tie, 2, 2)));
  CHECK(tie.grad()[0] == 1);
  CHECK(tie.grad()[1] == 0);

  auto u = upsample(Tensor::from({2, 2}, {1, 2, 3, 4}), 2, 2);
  const double want[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(u.at(i) == want[i]);

  auto g = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  backward(sum(upsample(g, 2, 2)));
  for (double v : g.grad()) CHECK(v == 4.0);
}

TEST_CASE("batchnorm") {
  auto bn = BatchNormParams::make(2);
  CHECK_THROWS_AS(batchnorm(Tensor::zeros({2, 2, 3}), bn, Mode::Eval), TensorError);

  auto x = rnd({3, 2, 4, 4}, 21, false, -3.0, 5.0);
  auto y = batchnorm(x, bn, Mode::Train);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 16; ++i) {
        const double v = y.at((n * 2 + c) * 16 + i);
        s += v;
        s2 += v * v;
      }
    CHECK(std::abs(s / 48) < 1e-12);
    CHECK(s2 / 48 == doctest::Approx(1.0).epsilon(1e-4));
  }
  CHECK(bn.batches_tracked == 1);
  CHECK_NOTHROW(batchnorm(x, bn, Mode::Eval));

  // pre-standardised input passes through unchanged
  std::vector<double> z(32);
  for (std::size_t i = 0; i < 32; ++i) z[i] = (i % 2 ? 1.0 : -1.0);
  auto bn2 = BatchNormParams::make(1);
  auto zt = batchnorm(Tensor::from({1, 1, 32}, z), bn2, Mode::Train);
  for (std::size_t i = 0; i < 32; ++i) CHECK(std::abs(zt.at(i) - z[i]) < 1e-5);
  CHECK(bn2.running_var[0] == doctest::Approx(0.9 + 0.1 * 32.0 / 31.0));
}

TEST_CASE("activations") {
  CHECK(leaky_relu(Tensor::from({1}, {2.0})).item() == 2.0);
  CHECK(leaky_relu(Tensor::from({1}, {-1.0})).item() == doctest::Approx(-0.01));
  auto x = Tensor::from({2}, {-5.0, 0.0}, true);
  backward(sum(leaky_relu(x)));
  CHECK(x.grad()[0] == doctest::Approx(0.01));
  CHECK(x.grad()[1] == 1.0);
  CHECK_THROWS_AS(leaky_relu(x, 1.5), TensorError);

  CHECK(sigmoid(Tensor::from({1}, {0.0})).item() == 0.5);
  auto s = sigmoid(Tensor::from({2}, {3.0, -3.0}));
  CHECK(s.at(0) + s.at(1) == doctest::Approx(1.0).epsilon(1e-15));
  auto z = Tensor::from({1}, {0.0}, true);
  backward(sum(sigmoid(z)));
  CHECK(z.grad()[0] == 0.25);
  auto big = sigmoid(Tensor::from({2}, {800.0, -800.0}));
  CHECK(big.at(0) == 1.0);
  CHECK(big.at(1) >= 0.0);
}

TEST_CASE("layer gradients match finite differences on 10 seeds") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto p2 = make_conv(2, 3, 3, 2, rng);
    auto p3 = make_conv(2, 2, 3, 3, rng);
    auto proj = rnd({1, 3, 4, 6}, 900 + seed);
    auto proj3 = rnd({1, 2, 2, 4, 4}, 950 + seed);
    INFO("seed " << seed);

    auto x2 = rnd({1, 2, 4, 6}, seed, true);
    CHECK(grad_check([&](const Tensor& t) { return sum(conv2d(t, p2) * proj); }, x2, 1e-5, 1e-5)
              .passed);
    CHECK(grad_check([&](const Tensor& k) {
            ConvParams q = p2;
            q.kernel = k;
            return sum(conv2d(x2, q) * proj);
          },
          p2.kernel, 1e-5, 1e-5)
              .passed);
    CHECK(grad_check([&](const Tensor& b) {
            ConvParams q = p2;
            q.bias = b;
            return sum(conv2d(x2, q) * proj);
          },
          p2.bias, 1e-5, 1e-5)
              .passed);
    auto x3 = rnd({1, 2, 2, 4, 4}, 50 + seed, true);
    CHECK(grad_check([&](const Tensor& t) { return sum(conv3d(t, p3) * proj3); }, x3, 1e-5, 1e-5)
              .passed);
    CHECK(grad_check([&](const Tensor& k) {
            ConvParams q = p3;
            q.kernel = k;
            return sum(conv3d(x3, q) * proj3);
          },
          p3.kernel, 1e-5, 1e-5)
              .passed);

    auto xp = rnd({2, 4, 4}, 70 + seed, true);
    auto pw = rnd({2, 2, 2}, 71 + seed);
    CHECK(grad_check([&](const Tensor& t) { return sum(maxpool(t, 2, 2) * pw); }, xp, 1e-5, 1e-5)
              .passed);
    auto uw = rnd({2, 8, 8}, 72 + seed);
    CHECK(grad_check([&](const Tensor& t) { return sum(upsample(t, 2, 2) * uw); }, xp, 1e-5, 1e-5)
              .passed);

    auto bn = BatchNormParams::make(3);
    bn.gamma = rnd({3}, 80 + seed, true, 0.5, 1.5);
    bn.beta = rnd({3}, 81 + seed, true);
    auto xb = rnd({2, 3, 3, 3}, 82 + seed, true);
    auto bw = rnd({2, 3, 3, 3}, 83 + seed);
    CHECK(grad_check([&](const Tensor& t) { return sum(batchnorm(t, bn, Mode::Train) * bw); }, xb,
                     1e-5, 1e-5)
              .passed);
    CHECK(grad_check([&](const Tensor& g) {
            auto q = bn;
            q.gamma = g;
            return sum(batchnorm(xb, q, Mode::Train) * bw);
          },
          bn.gamma, 1e-5, 1e-5)
              .passed);
    CHECK(grad_check([&](const Tensor& t) { return sum(batchnorm(t, bn, Mode::Eval) * bw); }, xb,
                     1e-5, 1e-5)
              .passed);

    auto xa = rnd({12}, 90 + seed, true, -2.0, 2.0);
    auto aw = rnd({12}, 91 + seed);
    CHECK(grad_check([&](const Tensor& t) { return sum(leaky_relu(t) * aw); }, xa, 1e-5, 1e-5)
              .passed);
    CHECK(grad_check([&](const Tensor& t) { return sum(sigmoid(t) * aw); }, xa, 1e-5, 1e-5)
              .passed);
    CHECK(grad_check([&](const Tensor& t) { return sum(tanh(t) * aw); }, xa, 1e-5, 1e-5).passed);
  }
}

TEST_CASE("convlstm step with zero input and state stays at zero") {
  ConvLstmWeights w;
  w.input_channels = 1;
  w.filters = 2;
  w.gates = conv_from({8, 3, 3, 3}, std::vector<double>(8 * 27, 0.0), std::vector<double>(8, 0.0));
  auto st = ConvLstmState::zeros(1, 2, 4, 4);
  auto out = convlstm_step(Tensor::zeros({1, 1, 4, 4}), st, w);
  for (double v : out.h.data()) CHECK(v == 0.0);
  for (double v : out.state.c.data()) CHECK(v == 0.0);

  Rng rng(4);
  auto rw = ConvLstmWeights::make(1, 2, rng);
  auto o2 = convlstm_step(Tensor::zeros({1, 1, 4, 4}), st, rw);
  for (double v : o2.h.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(convlstm_step(Tensor::zeros({1, 1, 4, 5}), st, rw), TensorError);
}

TEST_CASE("1x1 convlstm matches a scalar LSTM over three steps") {
  // single input channel, single filter, 1x1 spatial: the 3x3 'same' kernel
  // only ever sees its centre tap
  std::vector<double> k(4 * 2 * 9, 0.0);
  const double wx[4] = {0.5, -0.3, 0.8, 0.2}, wh[4] = {0.1, 0.4, -0.6, 0.9},
               b[4] = {0.05, 1.0, -0.1, 0.3};
  for (int g = 0; g < 4; ++g) {
    k[(g * 2 + 0) * 9 + 4] = wx[g];
    k[(g * 2 + 1) * 9 + 4] = wh[g];
  }
  ConvLstmWeights w;
  w.input_channels = 1;
  w.filters = 1;
  w.gates = conv_from({4, 2, 3, 3}, k, {b[0], b[1], b[2], b[3]});
  const double xs[3] = {0.7, -1.2, 0.4};
  auto st = ConvLstmState::zeros(1, 1, 1, 1);
  double h = 0.0, c = 0.0;
  for (double xv : xs) {
    auto step = convlstm_step(Tensor::from({1, 1, 1, 1}, {xv}), st, w);
    st = step.state;
    const double i = oracle::sigmoid(wx[0] * xv + wh[0] * h + b[0]);
    const double f = oracle::sigmoid(wx[1] * xv + wh[1] * h + b[1]);
    const double o = oracle::sigmoid(wx[2] * xv + wh[2] * h + b[2]);
    const double g = std::tanh(wx[3] * xv + wh[3] * h + b[3]);
    c = f * c + i * g;
    h = o * std::tanh(c);
    CHECK(std::abs(step.h.item() - h) < 1e-12);
    CHECK(std::abs(st.c.item() - c) < 1e-12);
  }
}

TEST_CASE("convlstm gradients through unrolled steps") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto w = ConvLstmWeights::make(1, 2, rng);
    auto proj = rnd({1, 2, 4, 4}, 300 + seed);
    auto x0 = rnd({1, 1, 4, 4}, 310 + seed, true);
    auto x1 = rnd({1, 1, 4, 4}, 320 + seed);
    auto f = [&](const Tensor& t) {
      auto st = ConvLstmState::zeros(1, 2, 4, 4);
      auto s1 = convlstm_step(t, st, w);
      auto s2 = convlstm_step(x1, s1.state, w);
      return sum(s2.h * proj) + sum(s2.state.c * proj);
    };
    INFO("seed " << seed);
    CHECK(grad_check(f, x0, 1e-5, 1e-5).passed);
    CHECK(grad_check([&](const Tensor& k) {
            auto q = w;
            q.gates.kernel = k;
            auto st = ConvLstmState::zeros(1, 2, 4, 4);
            auto s1 = convlstm_step(x0, st, q);
            auto s2 = convlstm_step(x1, s1.state, q);
            return sum(s2.h * proj);
          },
          w.gates.kernel, 1e-5, 1e-5)
              .passed);
  }
}

TEST_CASE("bidirectional convlstm") {
  Rng rng(17);
  auto w = BiConvLstmWeights::make(1, 2, 1, true, rng);
  CHECK_THROWS_AS(bidirectional_convlstm({}, w), TensorError);

  std::vector<Tensor> one{rnd({1, 1, 4, 4}, 1)};
  auto single = bidirectional_convlstm(one, w);
  CHECK(single.size() == 1);
  CHECK(single[0].shape() == Shape{1, 1, 4, 4});

  std::vector<Tensor> seq;
  for (unsigned t = 0; t < 4; ++t) seq.push_back(rnd({1, 1, 4, 4}, 40 + t));
  auto out = bidirectional_convlstm(seq, w);
  auto f = convlstm_sequence(seq, w.forward, false);
  std::vector<Tensor> rev(seq.rbegin(), seq.rend());
  auto b = convlstm_sequence(rev, *w.backward, false);
  for (std::size_t t = 0; t < 4; ++t) {
    auto manual = conv2d(concat({f[t], b[3 - t]}, 1), w.compress);
    for (std::size_t i = 0; i < manual.numel(); ++i) CHECK(manual.at(i) == out[t].at(i));
  }

  // palindrome with tied directions and a compression symmetric in the halves
  auto tied = w;
  tied.backward = tied.forward;
  auto ck = tied.compress.kernel.data();
  std::vector<double> sym(ck.begin(), ck.end());
  sym[2] = sym[0];
  sym[3] = sym[1];
  tied.compress.kernel = Tensor::from(tied.compress.kernel.shape(), sym);
  std::vector<Tensor> pal{seq[0], seq[1], seq[1], seq[0]};
  auto po = bidirectional_convlstm(pal, tied);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < po[t].numel(); ++i) CHECK(po[t].at(i) == doctest::Approx(po[3 - t].at(i)).epsilon(1e-13));

  // reversal equivariance with exchanged directions and swapped compression halves
  auto swapped = w;
  swapped.forward = *w.backward;
  swapped.backward = w.forward;
  auto wk = w.compress.kernel.data();
  std::vector<double> sw{wk[2], wk[3], wk[0], wk[1]};
  swapped.compress.kernel = Tensor::from(w.compress.kernel.shape(), sw);
  auto ro = bidirectional_convlstm(rev, swapped);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < ro[t].numel(); ++i)
      CHECK(ro[t].at(i) == doctest::Approx(out[3 - t].at(i)).epsilon(1e-13));

  auto x0 = rnd({1, 1, 4, 4}, 77, true);
  auto proj = rnd({1, 1, 4, 4}, 78);
  CHECK(grad_check([&](const Tensor& t) {
          std::vector<Tensor> s{t, seq[1], seq[2]};
          auto o = bidirectional_convlstm(s, w);
          return sum(o[0] * proj) + sum(o[2] * proj);
        },
        x0, 1e-5, 1e-5)
            .passed);
}
