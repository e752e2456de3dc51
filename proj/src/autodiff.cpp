#include "coevo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace coevo {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Array::Array(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("Array: shape " + shape_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw ShapeError("reshape: cannot view " + shape_string(shape_) + " as " +
                     shape_string(shape));
  }
  return Array(std::move(shape), data_);
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

bool bitwise_equal(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data().data(), b.data().data(),
                     a.size() * sizeof(double)) == 0;
}

const Array& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::input(const std::string& name, Array value) {
  if (names_.count(name)) {
    throw std::invalid_argument("Tape::input: duplicate input name '" + name +
                                "'");
  }
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  names_[name] = nodes_.size() - 1;
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Array value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(std::string_view op, Array value,
               std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](auto id) {
    return nodes_[id].requires_grad;
  });
  if (n.requires_grad) n.backward = std::move(fn);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Array& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape()) n.grad = Array(n.value.shape());
  return n.grad;
}

Array Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.shape() != n.value.shape()) return Array(n.value.shape());
  return n.grad;
}

void Tape::backward(Var output) {
  if (output.value().size() != 1) {
    throw ShapeError("backward: output must be scalar, got shape " +
                     shape_string(output.shape()));
  }
  if (backward_done_) {
    for (auto& n : nodes_) n.grad = Array();
  }
  backward_done_ = true;
  grad_ref(output.id())[0] = 1.0;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    if (n.grad.shape() != n.value.shape()) continue;  // not reached
    n.backward(*this, i);
  }
}

std::map<std::string, Array> Tape::input_gradients() const {
  std::map<std::string, Array> out;
  for (const auto& [name, id] : names_) out[name] = grad(Var(nullptr, id));
  return out;
}

namespace ad {
namespace {

void require_same(std::string_view op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": expected equal shapes, got " +
                     shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
}

void require_matrix(std::string_view op, Var a) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 array, got " +
                     shape_string(a.shape()));
  }
}

// Element-wise unary op given f(x) and f'(x, y) where y = f(x).
template <typename F, typename DF>
Var unary(std::string_view op, Var a, F f, DF df) {
  const Array& x = a.value();
  Array y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().push(op, std::move(y), {ia}, [ia, df](Tape& t, std::size_t self) {
    const Array& x = t.value(ia);
    const Array& y = t.value(self);
    const Array& g = t.grad_ref(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  require_same("add", a, b);
  Array y = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("add", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    for (std::size_t id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      Array& gx = t.grad_ref(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same("sub", a, b);
  Array y = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("sub", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    if (t.requires_grad(ia)) {
      Array& gx = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Array& gx = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same("mul", a, b);
  Array y = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("mul", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    const Array& av = t.value(ia);
    const Array& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Array& gx = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Array& gx = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * av[i];
    }
  });
}

Var div(Var a, Var b) {
  require_same("div", a, b);
  Array y = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("div", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    const Array& bv = t.value(ib);
    const Array& y = t.value(self);
    if (t.requires_grad(ia)) {
      Array& gx = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / bv[i];
    }
    if (t.requires_grad(ib)) {
      Array& gx = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i] * y[i] / bv[i];
    }
  });
}

Var minimum(Var a, Var b) {
  require_same("minimum", a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  Array y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(av[i], bv[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("minimum", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    const Array& av = t.value(ia);
    const Array& bv = t.value(ib);
    // Ties route the gradient to the first operand.
    if (t.requires_grad(ia)) {
      Array& gx = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] <= bv[i]) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Array& gx = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] > bv[i]) gx[i] += g[i];
    }
  });
}

Var scale(Var a, double k) {
  return unary("scale", a, [k](double x) { return k * x; },
               [k](double, double) { return k; });
}

Var add_scalar(Var a, double k) {
  return unary("add_scalar", a, [k](double x) { return x + k; },
               [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var softplus(Var a) {
  return unary(
      "softplus", a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var clamp(Var a, double lo, double hi) {
  return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var matmul(Var a, Var b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const Array& av = a.value();
  const Array& bv = b.value();
  const std::size_t n = av.shape()[0], k = av.shape()[1], m = bv.shape()[1];
  if (bv.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ, got " +
                     shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Array y({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* yr = &y[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* br = &bv[p * m];
      for (std::size_t j = 0; j < m; ++j) yr[j] += aip * br[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("matmul", std::move(y), {ia, ib}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    const Array& av = t.value(ia);
    const Array& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      // dA = G * B^T
      Array& ga = t.grad_ref(ia);
      for (std::size_t i = 0; i < n; ++i) {
        const double* gr = &g[i * m];
        for (std::size_t p = 0; p < k; ++p) {
          const double* br = &bv[p * m];
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += gr[j] * br[j];
          ga[i * k + p] += s;
        }
      }
    }
    if (t.requires_grad(ib)) {
      // dB = A^T * G
      Array& gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < n; ++i) {
        const double* gr = &g[i * m];
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          double* gbr = &gb[p * m];
          for (std::size_t j = 0; j < m; ++j) gbr[j] += aip * gr[j];
        }
      }
    }
  });
}

Var add_row(Var a, Var row) {
  const Array& av = a.value();
  const Array& rv = row.value();
  if (rv.size() != av.cols()) {
    throw ShapeError("add_row: row of shape " + shape_string(rv.shape()) +
                     " does not match last axis of " + shape_string(av.shape()));
  }
  Array y = av;
  const std::size_t m = av.cols();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += rv[i % m];
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().push("add_row", std::move(y), {ia, ir}, [ia, ir, m](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    if (t.requires_grad(ia)) {
      Array& ga = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ir)) {
      Array& gr = t.grad_ref(ir);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i % m] += g[i];
    }
  });
}

namespace {

Array softmax_rows(const Array& x) {
  Array y(x.shape());
  const std::size_t m = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = &x[r * m];
    double* yr = &y[r * m];
    const double mx = *std::max_element(xr, xr + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < m; ++j) yr[j] /= z;
  }
  return y;
}

}  // namespace

Var softmax(Var a) {
  Array y = softmax_rows(a.value());
  const std::size_t ia = a.id();
  return a.tape().push("softmax", std::move(y), {ia}, [ia](Tape& t, std::size_t self) {
    const Array& y = t.value(self);
    const Array& g = t.grad_ref(self);
    Array& ga = t.grad_ref(ia);
    const std::size_t m = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[r * m + j] * y[r * m + j];
      for (std::size_t j = 0; j < m; ++j)
        ga[r * m + j] += y[r * m + j] * (g[r * m + j] - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Array& x = a.value();
  Array y(x.shape());
  const std::size_t m = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = &x[r * m];
    const double mx = *std::max_element(xr, xr + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(xr[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) y[r * m + j] = xr[j] - lz;
  }
  const std::size_t ia = a.id();
  return a.tape().push("log_softmax", std::move(y), {ia}, [ia](Tape& t, std::size_t self) {
    const Array& y = t.value(self);
    const Array& g = t.grad_ref(self);
    Array& ga = t.grad_ref(ia);
    const std::size_t m = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < m; ++j) gs += g[r * m + j];
      for (std::size_t j = 0; j < m; ++j)
        ga[r * m + j] += g[r * m + j] - std::exp(y[r * m + j]) * gs;
    }
  });
}

Var gather_rows(Var table, std::span<const int> indices) {
  require_matrix("gather_rows", table);
  const Array& tv = table.value();
  const std::size_t v = tv.shape()[0], d = tv.shape()[1];
  std::vector<int> idx(indices.begin(), indices.end());
  Array y({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) +
                              " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(&tv[idx[i] * d], d, &y[i * d]);
  }
  const std::size_t it = table.id();
  return table.tape().push("gather_rows", std::move(y), {it},
                           [it, d, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    Array& gt = t.grad_ref(it);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += g[i * d + j];
  });
}

Var pick(Var a, std::span<const int> indices) {
  require_matrix("pick", a);
  const Array& av = a.value();
  const std::size_t n = av.shape()[0], m = av.shape()[1];
  if (indices.size() != n) {
    throw ShapeError("pick: " + std::to_string(indices.size()) +
                     " indices for matrix of shape " + shape_string(av.shape()));
  }
  std::vector<int> idx(indices.begin(), indices.end());
  Array y({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= m) {
      throw std::out_of_range("pick: index " + std::to_string(idx[i]) +
                              " outside row of " + std::to_string(m));
    }
    y[i] = av[i * m + idx[i]];
  }
  const std::size_t ia = a.id();
  return a.tape().push("pick", std::move(y), {ia}, [ia, m, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) ga[i * m + idx[i]] += g[i];
  });
}

Var permute(Var a, std::span<const std::size_t> source, Shape out_shape) {
  const Array& av = a.value();
  if (shape_size(out_shape) != source.size()) {
    throw ShapeError("permute: " + std::to_string(source.size()) +
                     " sources for output shape " + shape_string(out_shape));
  }
  std::vector<std::size_t> src(source.begin(), source.end());
  Array y(std::move(out_shape));
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] >= av.size()) throw std::out_of_range("permute: source index out of range");
    y[i] = av[src[i]];
  }
  const std::size_t ia = a.id();
  return a.tape().push("permute", std::move(y), {ia}, [ia, src = std::move(src)](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += g[i];
  });
}

Var reshape(Var a, Shape shape) {
  Array y = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().push("reshape", std::move(y), {ia}, [ia](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t m = parts.front().value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.value().cols() != m) {
      throw ShapeError("concat_rows: column mismatch, " + shape_string(parts.front().shape()) +
                       " vs " + shape_string(p.shape()));
    }
    rows += p.value().rows();
    ids.push_back(p.id());
  }
  Array y({rows, m});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), y.data().begin() + off);
    off += p.value().size();
  }
  return parts.front().tape().push("concat_rows", std::move(y), ids, [ids](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.requires_grad(id)) {
        Array& gx = t.grad_ref(id);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var sum(Var a) {
  const Array& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().push("sum", Array::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self)[0];
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty array");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var a) {
  const Array& av = a.value();
  const std::size_t m = av.cols(), n = av.rows();
  Shape out = av.shape();
  out.pop_back();
  if (out.empty()) out = {1};
  Array y(out);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += av[r * m + j];
    y[r] = s;
  }
  const std::size_t ia = a.id();
  return a.tape().push("sum_rows", std::move(y), {ia}, [ia, m](Tape& t, std::size_t self) {
    const Array& g = t.grad_ref(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i / m];
  });
}

Var mean_rows(Var a) {
  const std::size_t m = a.value().cols();
  return scale(sum_rows(a), 1.0 / static_cast<double>(m));
}

Var l1_norm(Var a) {
  const Array& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += std::abs(v);
  const std::size_t ia = a.id();
  return a.tape().push("l1_norm", Array::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self)[0];
    const Array& x = t.value(ia);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] += x[i] > 0 ? g : (x[i] < 0 ? -g : 0.0);
  });
}

Var l2_norm(Var a) {
  const Array& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v * v;
  const std::size_t ia = a.id();
  return a.tape().push("l2_norm", Array::scalar(std::sqrt(s)), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self)[0];
    const double norm = t.value(self)[0];
    if (norm == 0.0) return;
    const Array& x = t.value(ia);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * x[i] / norm;
  });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

}  // namespace ad

namespace {

Var build(Tape& tape, const GraphFn& graph, const ArrayMap& inputs) {
  VarMap vars;
  for (const auto& [name, value] : inputs) vars[name] = tape.input(name, value);
  return graph(tape, vars);
}

double scalar_output(const GraphFn& graph, const ArrayMap& inputs) {
  Tape tape;
  Var out = build(tape, graph, inputs);
  if (out.value().size() != 1) {
    throw ShapeError("grad_check: graph output must be scalar, got " +
                     shape_string(out.shape()));
  }
  return out.value()[0];
}

}  // namespace

Array forward(const GraphFn& graph, const ArrayMap& inputs) {
  Tape tape;
  return build(tape, graph, inputs).value();
}

ArrayMap backward(const GraphFn& graph, const ArrayMap& inputs) {
  Tape tape;
  Var out = build(tape, graph, inputs);
  tape.backward(out);
  return tape.input_gradients();
}

double grad_check(const GraphFn& graph, const ArrayMap& point, double step) {
  if (!(step > 0)) throw std::invalid_argument("grad_check: step must be > 0");
  const ArrayMap analytic = backward(graph, point);
  ArrayMap probe = point;
  double worst = 0.0;
  for (auto& [name, arr] : probe) {
    const Array& g = analytic.at(name);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const double x0 = arr[i];
      arr[i] = x0 + step;
      const double up = scalar_output(graph, probe);
      arr[i] = x0 - step;
      const double down = scalar_output(graph, probe);
      arr[i] = x0;
      const double fd = (up - down) / (2.0 * step);
      worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace coevo
