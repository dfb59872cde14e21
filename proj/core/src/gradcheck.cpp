#include "vskel/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "vskel/layers.hpp"
#include "vskel/losses.hpp"
#include "vskel/random.hpp"

namespace vskel {

namespace {

Tensor rnd(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(s));
  for (double& x : v) x = uniform(rng, lo, hi);
  return Tensor::from(s, std::move(v));
}

Tensor binary(const Shape& s, Rng& rng, double p) {
  std::vector<double> v(numel(s));
  for (double& x : v) x = uniform(rng, 0.0, 1.0) < p ? 1.0 : 0.0;
  return Tensor::from(s, std::move(v));
}

using Fn = std::function<Tensor(const Tensor&)>;

// Splits [T, N, C, H, W] into T slices of [N, C, H, W] (differentiable).
std::vector<Tensor> unstack(const Tensor& t) {
  std::vector<Tensor> out;
  Shape s(t.shape().begin() + 1, t.shape().end());
  for (std::size_t i = 0; i < t.dim(0); ++i) out.push_back(reshape(slice(t, 0, i, i + 1), s));
  return out;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(unsigned seeds, double tolerance, double step) {
  using namespace nn;
  std::vector<GradCheckResult> results;
  for (unsigned seed = 0; seed < seeds; ++seed) {
    Rng rng = stream(seed, "gradcheck");
    auto run = [&](const std::string& name, const Fn& f, const Tensor& at) {
      const auto r = grad_check(f, at, step, tolerance);
      results.push_back({name, seed, r.max_rel_error, r.passed});
    };

    // convolutions, every input of the op
    auto c2 = make_conv(2, 3, 3, 2, rng);
    c2.bias = rnd({3}, rng);
    auto x2 = rnd({2, 2, 4, 5}, rng);
    auto p2 = rnd({2, 3, 4, 5}, rng);
    run("conv2d/input", [&](const Tensor& t) { return sum(conv2d(t, c2) * p2); }, x2);
    run("conv2d/kernel", [&](const Tensor& k) { auto q = c2; q.kernel = k; return sum(conv2d(x2, q) * p2); }, c2.kernel);
    run("conv2d/bias", [&](const Tensor& b) { auto q = c2; q.bias = b; return sum(conv2d(x2, q) * p2); }, c2.bias);

    auto c3 = make_conv(2, 2, 3, 3, rng);
    c3.bias = rnd({2}, rng);
    auto x3 = rnd({1, 2, 3, 4, 4}, rng);
    auto p3 = rnd({1, 2, 3, 4, 4}, rng);
    run("conv3d/input", [&](const Tensor& t) { return sum(conv3d(t, c3) * p3); }, x3);
    run("conv3d/kernel", [&](const Tensor& k) { auto q = c3; q.kernel = k; return sum(conv3d(x3, q) * p3); }, c3.kernel);
    run("conv3d/bias", [&](const Tensor& b) { auto q = c3; q.bias = b; return sum(conv3d(x3, q) * p3); }, c3.bias);

    // pooling and upsampling
    auto xp2 = rnd({2, 2, 4, 4}, rng);
    auto pp2 = rnd({2, 2, 2, 2}, rng);
    run("maxpool2d", [&](const Tensor& t) { return sum(maxpool(t, 2, 2) * pp2); }, xp2);
    auto xp3 = rnd({1, 2, 4, 4, 4}, rng);
    auto pp3 = rnd({1, 2, 2, 2, 2}, rng);
    run("maxpool3d", [&](const Tensor& t) { return sum(maxpool(t, 2, 3) * pp3); }, xp3);
    auto pu2 = rnd({2, 2, 8, 8}, rng);
    run("upsample2d", [&](const Tensor& t) { return sum(upsample(t, 2, 2) * pu2); }, xp2);
    auto xu3 = rnd({1, 2, 2, 2, 2}, rng);
    auto pu3 = rnd({1, 2, 4, 4, 4}, rng);
    run("upsample3d", [&](const Tensor& t) { return sum(upsample(t, 2, 3) * pu3); }, xu3);

    // batch normalisation
    auto bn = BatchNormParams::make(3);
    bn.gamma = rnd({3}, rng, 0.5, 1.5);
    bn.beta = rnd({3}, rng);
    auto xb = rnd({2, 3, 3, 3}, rng, -2.0, 2.0);
    auto pb = rnd({2, 3, 3, 3}, rng);
    run("batchnorm/input", [&](const Tensor& t) { return sum(batchnorm(t, bn, Mode::Train) * pb); }, xb);
    run("batchnorm/gamma", [&](const Tensor& g) { auto q = bn; q.gamma = g; return sum(batchnorm(xb, q, Mode::Train) * pb); }, bn.gamma);
    run("batchnorm/beta", [&](const Tensor& b) { auto q = bn; q.beta = b; return sum(batchnorm(xb, q, Mode::Train) * pb); }, bn.beta);
    for (auto& m : bn.running_mean) m = uniform(rng, -0.5, 0.5);
    for (auto& v : bn.running_var) v = uniform(rng, 0.5, 1.5);
    run("batchnorm_eval/input", [&](const Tensor& t) { return sum(batchnorm(t, bn, Mode::Eval) * pb); }, xb);

    // activations; keep leaky_relu inputs off the kink
    auto xa = rnd({3, 5}, rng, -2.0, 2.0);
    {
      auto d = xa.mutable_data();
      for (double& v : d)
        if (std::abs(v) < 1e-3) v = 0.5;
    }
    auto pa = rnd({3, 5}, rng);
    run("leaky_relu", [&](const Tensor& t) { return sum(leaky_relu(t) * pa); }, xa);
    run("sigmoid", [&](const Tensor& t) { return sum(sigmoid(t) * pa); }, xa);
    run("tanh", [&](const Tensor& t) { return sum(tanh(t) * pa); }, xa);

    // ConvLSTM step, unrolled twice so the recurrent path is exercised
    auto lw = ConvLstmWeights::make(2, 2, rng);
    lw.gates.bias = rnd({8}, rng);
    auto lx0 = rnd({1, 2, 4, 4}, rng);
    auto lx1 = rnd({1, 2, 4, 4}, rng);
    auto lh = rnd({1, 2, 4, 4}, rng);
    auto lc = rnd({1, 2, 4, 4}, rng);
    auto lp = rnd({1, 2, 4, 4}, rng);
    auto two_steps = [&](const Tensor& x0, const Tensor& h, const Tensor& c, const ConvLstmWeights& w) {
      auto s1 = convlstm_step(x0, ConvLstmState{h, c}, w);
      auto s2 = convlstm_step(lx1, s1.state, w);
      return sum(s2.h * lp) + sum(s2.state.c * lp);
    };
    run("convlstm_step/input", [&](const Tensor& t) { return two_steps(t, lh, lc, lw); }, lx0);
    run("convlstm_step/hidden", [&](const Tensor& t) { return two_steps(lx0, t, lc, lw); }, lh);
    run("convlstm_step/cell", [&](const Tensor& t) { return two_steps(lx0, lh, t, lw); }, lc);
    run("convlstm_step/kernel", [&](const Tensor& k) { auto q = lw; q.gates.kernel = k; return two_steps(lx0, lh, lc, q); }, lw.gates.kernel);
    run("convlstm_step/bias", [&](const Tensor& b) { auto q = lw; q.gates.bias = b; return two_steps(lx0, lh, lc, q); }, lw.gates.bias);

    // bidirectional stack with 1x1 compression over a 3-slice sequence
    auto bw = BiConvLstmWeights::make(1, 2, 2, true, rng);
    auto bx = rnd({3, 1, 1, 3, 3}, rng);
    auto bp = rnd({3, 1, 2, 3, 3}, rng);
    auto stack_loss = [&](const Tensor& x, const BiConvLstmWeights& w) {
      auto out = bidirectional_convlstm(unstack(x), w);
      Tensor acc = sum(out[0] * reshape(slice(bp, 0, 0, 1), out[0].shape()));
      for (std::size_t t = 1; t < out.size(); ++t)
        acc = acc + sum(out[t] * reshape(slice(bp, 0, t, t + 1), out[t].shape()));
      return acc;
    };
    run("bidirectional/input", [&](const Tensor& t) { return stack_loss(t, bw); }, bx);
    run("bidirectional/forward_kernel", [&](const Tensor& k) { auto q = bw; q.forward.gates.kernel = k; return stack_loss(bx, q); }, bw.forward.gates.kernel);
    run("bidirectional/backward_kernel", [&](const Tensor& k) { auto q = bw; q.backward->gates.kernel = k; return stack_loss(bx, q); }, bw.backward->gates.kernel);
    run("bidirectional/compress", [&](const Tensor& k) { auto q = bw; q.compress.kernel = k; return stack_loss(bx, q); }, bw.compress.kernel);

    // losses on probabilities away from the clamps
    auto lxp = rnd({2, 1, 4, 4}, rng, 0.02, 0.98);
    auto ly = binary({2, 1, 4, 4}, rng, 0.3);
    auto lwm = rnd({2, 1, 4, 4}, rng, 0.1, 2.0);
    run("bce", [&](const Tensor& t) { return loss::bce(t, ly); }, lxp);
    run("weighted_bce", [&](const Tensor& t) { return loss::weighted_bce(t, ly, lwm); }, lxp);
    run("dice", [&](const Tensor& t) { return loss::dice(t, ly, 1.0); }, lxp);
    run("dice_delta0", [&](const Tensor& t) { return loss::dice(t, ly, 0.0); }, lxp);
  }
  return results;
}

std::vector<GradCheckLine> summarize(const std::vector<GradCheckResult>& results) {
  std::vector<GradCheckLine> lines;
  for (const auto& r : results) {
    auto it = std::find_if(lines.begin(), lines.end(), [&](const GradCheckLine& l) { return l.check == r.check; });
    if (it == lines.end()) {
      lines.push_back({r.check, r.max_rel_error, r.seed, 0});
      it = lines.end() - 1;
    } else if (r.max_rel_error > it->worst_rel_error) {
      it->worst_rel_error = r.max_rel_error;
      it->worst_seed = r.seed;
    }
    if (!r.passed) ++it->failures;
  }
  return lines;
}

}  // namespace vskel
