#ifndef COEVO_AUTODIFF_HPP_
#define COEVO_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace coevo {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Raised when an operation receives operands of incompatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles.
///
/// Rank is arbitrary, but most operations treat an array as a matrix of
/// rows() x cols(), where cols() is the extent of the last axis.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v) { return Array({1}, {v}); }
  static Array vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Array({n}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const double& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  /// Returns a copy with a new shape of equal element count.
  Array reshaped(Shape shape) const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape);

/// Exact bit-level equality of shape and payload.
bool bitwise_equal(const Array& a, const Array& b);

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is topologically sorted by construction.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Named differentiable leaf.
  Var input(const std::string& name, Array value);
  /// Leaf that never receives a gradient.
  Var constant(Array value);

  /// Appends an operation node. `fn` is dropped when no input needs a grad.
  Var push(std::string_view op, Array value, std::vector<std::size_t> inputs,
           BackwardFn fn);

  /// Seeds d(output)/d(output) = 1 and propagates to every leaf.
  void backward(Var output);

  const Array& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const {
    return nodes_[id].inputs;
  }
  std::string_view op_of(std::size_t id) const { return nodes_[id].op; }

  /// Gradient accumulator for a node, allocated as zeros on first use.
  Array& grad_ref(std::size_t id);
  /// Gradient of a node after backward(); zeros if it was never reached.
  Array grad(Var v) const;

  /// Gradients for every named input, keyed by name.
  std::map<std::string, Array> input_gradients() const;
  const std::map<std::string, std::size_t>& named_inputs() const {
    return names_;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Array value;
    Array grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> names_;
  bool backward_done_ = false;
};

using ArrayMap = std::map<std::string, Array>;
using VarMap = std::map<std::string, Var>;

/// A differentiable computation expressed as a graph-building function.
using GraphFn = std::function<Var(Tape&, const VarMap&)>;

namespace ad {

// Element-wise binary operations. Operands must have identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var minimum(Var a, Var b);

Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var neg(Var a);

// Element-wise unary operations.
Var tanh(Var a);
Var sigmoid(Var a);
/// Subgradient at exactly zero is zero.
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
/// log(1 + exp(a)), evaluated without overflow.
Var softplus(Var a);
/// Forward clamps into [lo, hi]; gradient passes only strictly inside.
Var clamp(Var a, double lo, double hi);

/// (n x k) * (k x m).
Var matmul(Var a, Var b);
/// Adds a length-m vector to every row of an (n x m) matrix.
Var add_row(Var a, Var row);
/// Row-wise softmax over the last axis with max subtraction.
Var softmax(Var a);
Var log_softmax(Var a);

/// Embedding lookup: rows of `table` selected by `indices`.
Var gather_rows(Var table, std::span<const int> indices);
/// out[i] = a[i, indices[i]] for an (n x m) matrix; result has length n.
Var pick(Var a, std::span<const int> indices);
/// out[i] = a[source[i]]; backward scatter-adds.
Var permute(Var a, std::span<const std::size_t> source, Shape out_shape);
Var reshape(Var a, Shape shape);
/// Stacks matrices with equal column counts vertically.
Var concat_rows(const std::vector<Var>& parts);

Var sum(Var a);
Var mean(Var a);
/// Reduces the last axis: (n x m) -> (n).
Var sum_rows(Var a);
Var mean_rows(Var a);
/// Σ|a|, subgradient zero at zero.
Var l1_norm(Var a);
/// sqrt(Σ a²).
Var l2_norm(Var a);

/// Identity forward, zero backward.
Var stop_gradient(Var a);

}  // namespace ad

/// Evaluates a graph on fresh inputs and returns the output value.
Array forward(const GraphFn& graph, const ArrayMap& inputs);

/// Gradient of a scalar-valued graph w.r.t. every input. Inputs the output
/// does not depend on receive a zero array.
ArrayMap backward(const GraphFn& graph, const ArrayMap& inputs);

/// Largest |analytic - central FD| / max(1, |central FD|) over all
/// coordinates of all inputs.
double grad_check(const GraphFn& graph, const ArrayMap& point, double step);

}  // namespace coevo

#endif  // COEVO_AUTODIFF_HPP_
