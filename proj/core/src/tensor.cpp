#include "vskel/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace vskel {

namespace detail {
struct Node {
  const char* op = "";
  std::vector<Tensor> inputs;
  autograd::BackwardFn backward;
  bool consumed = false;
};
}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

struct FaultInjection {
  std::string op;
  double factor = 1.0;
};
FaultInjection g_fault;  // set by tooling before any graph is built

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, std::vector<double> data, bool rg) {
  if (numel(shape) != data.size()) {
    throw TensorError("tensor data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = rg;
  impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return impl;
}

const detail::TensorImpl& checked(const Tensor& t) {
  if (!t.defined()) throw TensorError("use of an undefined tensor");
  return *t.impl();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(vskel::numel(shape), value);
  return Tensor(new_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(new_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_impl({}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return checked(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw TensorError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(*this).data.size(); }
std::uint64_t Tensor::id() const { return checked(*this).id; }
std::span<const double> Tensor::data() const { return checked(*this).data; }
std::span<double> Tensor::mutable_data() {
  checked(*this);
  return impl_->data;
}

double Tensor::item() const {
  const auto& impl = checked(*this);
  if (impl.data.size() != 1) {
    throw TensorError("item() on tensor of shape " + shape_str(impl.shape));
  }
  return impl.data[0];
}

bool Tensor::requires_grad() const { return checked(*this).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  checked(*this);
  if (impl_->creator) throw TensorError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = on;
}

bool Tensor::has_grad() const { return !checked(*this).grad.empty(); }
std::span<const double> Tensor::grad() const { return checked(*this).grad; }

void Tensor::zero_grad() {
  checked(*this);
  impl_->grad.clear();
}

bool Tensor::is_leaf() const { return checked(*this).creator == nullptr; }

Tensor Tensor::detach() const {
  const auto& impl = checked(*this);
  return Tensor(new_impl(impl.shape, impl.data, false));
}

Tensor Tensor::clone() const {
  const auto& impl = checked(*this);
  return Tensor(new_impl(impl.shape, impl.data, impl.requires_grad));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---- autograd plumbing ------------------------------------------------------

namespace autograd {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!t_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

bool should_record(std::span<const Tensor> inputs) {
  if (!t_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> data, const char* op_name,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  const bool record = should_record(std::span<const Tensor>(inputs));
  auto impl = new_impl(std::move(shape), std::move(data), record);
  if (record) {
    auto node = std::make_shared<detail::Node>();
    node->op = op_name;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    impl->creator = std::move(node);
  }
  return Tensor(std::move(impl));
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

std::span<double> grad_buffer(const Tensor& t) {
  auto& impl = *t.impl();
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

void set_fault_injection(const std::string& op_name, double factor) {
  g_fault.op = op_name;
  g_fault.factor = factor;
}

}  // namespace autograd

BackwardReport backward(const Tensor& loss) {
  const auto& root = checked(loss);
  if (root.data.size() != 1) {
    throw TensorError("backward requires a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.creator) throw TensorError("backward called on a tensor with no recorded graph");
  if (root.creator->consumed) throw TensorError("backward called twice on the same graph");

  // Iterative post-order DFS; reverse of the post-order is a valid reverse
  // topological order.
  // Owning references: releasing a node's inputs below may drop the last
  // other reference to an intermediate that is still waiting in `order`.
  std::vector<std::shared_ptr<detail::TensorImpl>> order;
  std::unordered_set<const detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->creator.get();
    if (node && node->consumed) {
      throw TensorError(std::string("graph node '") + node->op +
                        "' already consumed by an earlier backward pass");
    }
    if (node && next < node->inputs.size()) {
      const Tensor& in = node->inputs[next++];
      if (in.requires_grad() && visited.insert(in.impl().get()).second) {
        stack.emplace_back(in.impl().get(), 0);
      }
      continue;
    }
    order.push_back(impl->shared_from_this());
    stack.pop_back();
  }

  auto& root_mut = *loss.impl();
  root_mut.grad.assign(1, 1.0);

  BackwardReport report;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = it->get();
    if (!impl->creator) continue;
    auto& node = *impl->creator;
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
    if (!g_fault.op.empty() && g_fault.op == node.op) {
      for (double& g : impl->grad) g *= g_fault.factor;
    }
    node.backward(impl->grad, impl->data);
    ++report.rules_applied;
    node.consumed = true;
    node.backward = nullptr;
    node.inputs.clear();
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
  return report;
}

// ---- elementwise -------------------------------------------------------------

namespace {

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
  const auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return autograd::make_result(a.shape(), std::move(out), name, {a},
                               [a, deriv](std::span<const double> g, std::span<const double> y) {
                                 auto ga = autograd::grad_buffer(a);
                                 const auto x = a.data();
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   ga[i] += g[i] * deriv(x[i], y[i]);
                                 }
                               });
}

double clamp_away_from_zero(double v) {
  if (std::abs(v) >= kNumericEps) return v;
  return v < 0.0 ? -kNumericEps : kNumericEps;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return autograd::make_result(a.shape(), std::move(out), "add", {a, b},
                               [a, b](std::span<const double> g, std::span<const double>) {
                                 for (const Tensor* t : {&a, &b}) {
                                   if (!autograd::wants_grad(*t)) continue;
                                   auto gt = autograd::grad_buffer(*t);
                                   for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
                                 }
                               });
}

Tensor add(const Tensor& a, double b) {
  return unary(a, "add", [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return autograd::make_result(a.shape(), std::move(out), "sub", {a, b},
                               [a, b](std::span<const double> g, std::span<const double>) {
                                 if (autograd::wants_grad(a)) {
                                   auto ga = autograd::grad_buffer(a);
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                 }
                                 if (autograd::wants_grad(b)) {
                                   auto gb = autograd::grad_buffer(b);
                                   for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                 }
                               });
}

Tensor sub(const Tensor& a, double b) { return add(a, -b); }

Tensor rsub(double a, const Tensor& b) {
  return unary(b, "sub", [a](double x) { return a - x; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return autograd::make_result(a.shape(), std::move(out), "mul", {a, b},
                               [a, b](std::span<const double> g, std::span<const double>) {
                                 if (autograd::wants_grad(a)) {
                                   auto ga = autograd::grad_buffer(a);
                                   const auto y = b.data();
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                                 }
                                 if (autograd::wants_grad(b)) {
                                   auto gb = autograd::grad_buffer(b);
                                   const auto x = a.data();
                                   for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                                 }
                               });
}

Tensor mul(const Tensor& a, double b) {
  return unary(a, "mul", [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / clamp_away_from_zero(y[i]);
  return autograd::make_result(
      a.shape(), std::move(out), "div", {a, b},
      [a, b](std::span<const double> g, std::span<const double> q) {
        const auto y = b.data();
        if (autograd::wants_grad(a)) {
          auto ga = autograd::grad_buffer(a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / clamp_away_from_zero(y[i]);
        }
        if (autograd::wants_grad(b)) {
          auto gb = autograd::grad_buffer(b);
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (std::abs(y[i]) < kNumericEps) continue;  // clamped: locally constant
            gb[i] -= g[i] * q[i] / y[i];
          }
        }
      });
}

Tensor div(const Tensor& a, double b) {
  const double d = clamp_away_from_zero(b);
  return unary(a, "div", [d](double x) { return x / d; }, [d](double, double) { return 1.0 / d; });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](double x) { return std::log(std::max(x, kNumericEps)); },
               [](double x, double) { return x < kNumericEps ? 0.0 : 1.0 / x; });
}

Tensor neg(const Tensor& a) {
  return unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw TensorError("clamp: lower bound exceeds upper bound");
  return unary(a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

// ---- reductions --------------------------------------------------------------

namespace {

struct ReducePlan {
  Shape out_shape;
  std::vector<std::size_t> out_index;  // per input element
  std::size_t group = 1;               // elements folded into each output
};

ReducePlan plan_reduce(const Shape& shape, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (auto ax : axes) {
    if (ax >= shape.size()) {
      throw TensorError("reduce: invalid axis " + std::to_string(ax) + " for shape " +
                        shape_str(shape));
    }
  }
  ReducePlan plan;
  const std::size_t n = numel(shape);
  if (axes.empty() || axes.size() == shape.size()) {
    plan.out_index.assign(n, 0);
    plan.group = n;
    return plan;
  }
  std::vector<bool> reduced(shape.size(), false);
  for (auto ax : axes) reduced[ax] = true;
  std::vector<std::size_t> out_stride(shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    if (reduced[d]) {
      plan.group *= shape[d];
    } else {
      out_stride[d] = stride;
      stride *= shape[d];
    }
  }
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (!reduced[d]) plan.out_shape.push_back(shape[d]);
  }
  plan.out_index.resize(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  std::size_t o = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan.out_index[i] = o;
    for (std::size_t d = shape.size(); d-- > 0;) {
      ++idx[d];
      o += out_stride[d];
      if (idx[d] < shape[d]) break;
      o -= out_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

Tensor reduce_sum(const Tensor& a, std::vector<std::size_t> axes, double scale, const char* name) {
  auto plan = std::make_shared<ReducePlan>(plan_reduce(a.shape(), std::move(axes)));
  const auto x = a.data();
  std::vector<double> out(numel(plan->out_shape), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) out[plan->out_index[i]] += x[i];
  if (scale != 1.0) {
    for (double& v : out) v *= scale;
  }
  return autograd::make_result(plan->out_shape, std::move(out), name, {a},
                               [a, plan, scale](std::span<const double> g, std::span<const double>) {
                                 auto ga = autograd::grad_buffer(a);
                                 for (std::size_t i = 0; i < ga.size(); ++i) {
                                   ga[i] += g[plan->out_index[i]] * scale;
                                 }
                               });
}

}  // namespace

Tensor sum(const Tensor& a, std::vector<std::size_t> axes) {
  return reduce_sum(a, std::move(axes), 1.0, "sum");
}

Tensor mean(const Tensor& a, std::vector<std::size_t> axes) {
  const auto plan = plan_reduce(a.shape(), axes);
  return reduce_sum(a, std::move(axes), 1.0 / static_cast<double>(plan.group), "mean");
}

Tensor max(const Tensor& a, std::vector<std::size_t> axes) {
  const auto plan = plan_reduce(a.shape(), std::move(axes));
  const auto x = a.data();
  const std::size_t m = numel(plan.out_shape);
  std::vector<double> out(m, -std::numeric_limits<double>::infinity());
  auto arg = std::make_shared<std::vector<std::size_t>>(m, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t o = plan.out_index[i];
    if ((*arg)[o] == std::numeric_limits<std::size_t>::max() || x[i] > out[o]) {
      out[o] = x[i];
      (*arg)[o] = i;
    }
  }
  return autograd::make_result(plan.out_shape, std::move(out), "max", {a},
                               [a, arg](std::span<const double> g, std::span<const double>) {
                                 auto ga = autograd::grad_buffer(a);
                                 for (std::size_t o = 0; o < g.size(); ++o) ga[(*arg)[o]] += g[o];
                               });
}

// ---- structural --------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw TensorError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return autograd::make_result(std::move(shape), std::move(out), "reshape", {a},
                               [a](std::span<const double> g, std::span<const double>) {
                                 auto ga = autograd::grad_buffer(a);
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw TensorError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw TensorError("concat: invalid axis " + std::to_string(axis));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw TensorError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t row = p.dim(axis) * inner;
    const auto x = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.begin() + o * row, row, out.begin() + o * out_row + offset);
    }
    offset += row;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return autograd::make_result(
      std::move(out_shape), std::move(out), "concat", inputs,
      [inputs, axis, outer, inner, out_row](std::span<const double> g, std::span<const double>) {
        std::size_t off = 0;
        for (const auto& p : inputs) {
          const std::size_t row = p.dim(axis) * inner;
          if (autograd::wants_grad(p)) {
            auto gp = autograd::grad_buffer(p);
            for (std::size_t o = 0; o < outer; ++o) {
              for (std::size_t i = 0; i < row; ++i) gp[o * row + i] += g[o * out_row + off + i];
            }
          }
          off += row;
        }
      });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw TensorError("slice: invalid axis " + std::to_string(axis));
  if (begin >= end || end > s[axis]) {
    throw TensorError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") invalid for extent " + std::to_string(s[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t in_row = s[axis] * inner;
  const std::size_t out_row = (end - begin) * inner;
  const std::size_t off = begin * inner;
  const auto x = a.data();
  std::vector<double> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.begin() + o * in_row + off, out_row, out.begin() + o * out_row);
  }
  return autograd::make_result(
      std::move(out_shape), std::move(out), "slice", {a},
      [a, outer, in_row, out_row, off](std::span<const double> g, std::span<const double>) {
        auto ga = autograd::grad_buffer(a);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < out_row; ++i) ga[o * in_row + off + i] += g[o * out_row + i];
        }
      });
}

// ---- gradient checking -------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step, double tolerance) {
  if (!(step > 0.0)) throw TensorError("grad_check: step must be positive");
  Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  Tensor y = f(leaf);
  if (y.numel() != 1) throw TensorError("grad_check: function must be scalar-valued");
  backward(y);
  const std::vector<double> analytic = leaf.has_grad()
                                           ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                                           : std::vector<double>(leaf.numel(), 0.0);

  std::vector<double> numeric(analytic.size());
  {
    NoGradGuard guard;
    std::vector<double> probe(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const double saved = probe[i];
      probe[i] = saved + step;
      const double fp = f(Tensor::from(x.shape(), probe)).item();
      probe[i] = saved - step;
      const double fm = f(Tensor::from(x.shape(), probe)).item();
      probe[i] = saved;
      numeric[i] = (fp - fm) / (2.0 * step);
      if (!std::isfinite(numeric[i]) || !std::isfinite(analytic[i])) {
        throw TensorError("grad_check: non-finite value at coordinate " + std::to_string(i));
      }
    }
  }

  double max_abs = 0.0;
  for (double a : analytic) max_abs = std::max(max_abs, std::abs(a));
  const double floor = std::max(1e-8, 1e-3 * max_abs);
  GradCheckReport report;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    const double rel = std::abs(analytic[i] - numeric[i]) / denom;
    if (rel > report.max_rel_error || i == 0) {
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_index = i;
        report.analytic_at_worst = analytic[i];
        report.numeric_at_worst = numeric[i];
      }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace vskel
