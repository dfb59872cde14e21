#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vskel {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for shape mismatches, invalid axes and misuse of the autodiff graph.
class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct Node;
struct TensorImpl : std::enable_shared_from_this<TensorImpl> {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something writes a gradient
  bool requires_grad = false;
  std::shared_ptr<Node> creator;  // null for leaves
  std::uint64_t id = 0;
};
}  // namespace detail

/// Dense row-major N-d array of doubles with an optional position in a
/// define-by-run differentiation graph.
///
/// Copies share storage (handle semantics). A scalar has an empty shape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::uint64_t id() const;

  std::span<const double> data() const;
  /// Writable view of the values. Only sensible on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  bool is_leaf() const;
  /// Fresh leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;
  /// Leaf sharing nothing with this tensor, same values and requires_grad flag.
  Tensor clone() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace autograd {

/// Receives d(loss)/d(output) and the output values, and accumulates into the
/// inputs it captured.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const double> out)>;

/// True if an op over `inputs` should be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(std::span<const Tensor> inputs);

/// Builds the output tensor of an op and, when recording, attaches a node
/// carrying `backward`. `backward` must only touch inputs that wants_grad().
Tensor make_result(Shape shape, std::vector<double> data, const char* op_name,
                   std::vector<Tensor> inputs, BackwardFn backward);

bool wants_grad(const Tensor& t);
/// Gradient accumulator of `t`, zero-allocated on first use.
std::span<double> grad_buffer(const Tensor& t);

/// Scales the incoming gradient of every backward rule named `op_name` by
/// `factor`. Fault injection for the gradient-check tooling; empty name clears.
void set_fault_injection(const std::string& op_name, double factor);

}  // namespace autograd

struct BackwardReport {
  std::size_t rules_applied = 0;
};

/// Reverse-mode sweep from a scalar loss. Every reachable node is applied
/// exactly once in reverse topological order, then the graph is released;
/// a second call on the same graph throws.
BackwardReport backward(const Tensor& loss);

// ---- elementwise ---------------------------------------------------------

inline constexpr double kNumericEps = 1e-12;

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, double b);
Tensor rsub(double a, const Tensor& b);  // a - b
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor div(const Tensor& a, const Tensor& b);  // b clamped away from 0 by kNumericEps
Tensor div(const Tensor& a, double b);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // input clamped below at kNumericEps
Tensor neg(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(double a, const Tensor& b) { return rsub(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- reductions ----------------------------------------------------------

/// Empty `axes` reduces over everything and yields a scalar. Reduced axes are
/// dropped from the result shape.
Tensor sum(const Tensor& a, std::vector<std::size_t> axes = {});
Tensor mean(const Tensor& a, std::vector<std::size_t> axes = {});
/// Gradient routes to the first maximal element in scan order.
Tensor max(const Tensor& a, std::vector<std::size_t> axes = {});

// ---- structural ----------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

// ---- gradient checking ---------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool passed = false;
};

/// Compares backward() against central differences of a scalar function.
///
/// The relative error of coordinate i is |a_i - n_i| / max(|a_i|, |n_i|, floor)
/// with floor = max(1e-8, 1e-3 * max_j |a_j|), so coordinates whose gradient is
/// negligible against the largest one are judged on an absolute scale.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step, double tolerance);

}  // namespace vskel
