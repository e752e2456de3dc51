#ifndef COEVO_PARAMS_HPP_
#define COEVO_PARAMS_HPP_

#include <map>
#include <string>

#include "coevo/autodiff.hpp"

namespace coevo {

/// Named collection of weight arrays for one trainable model.
///
/// Iteration order is the lexicographic order of names, which fixes the
/// order of every reduction over parameters.
class ParamBundle {
 public:
  ParamBundle() = default;

  void set(const std::string& name, Array value) { arrays_[name] = std::move(value); }
  const Array& get(const std::string& name) const;
  Array& get(const std::string& name);
  bool contains(const std::string& name) const { return arrays_.count(name) > 0; }

  std::size_t size() const { return arrays_.size(); }
  std::size_t num_values() const;
  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }
  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }
  const std::map<std::string, Array>& arrays() const { return arrays_; }

  /// Registers every array as a named tape input, each name prefixed.
  VarMap bind(Tape& tape, const std::string& prefix) const;
  /// Registers every array as a tape constant (no gradient).
  VarMap bind_constant(Tape& tape) const;
  /// Extracts gradients for this bundle from a tape bound with `prefix`.
  ParamBundle gradients(const Tape& tape, const std::string& prefix) const;

  bool same_shapes(const ParamBundle& other) const;
  bool all_finite() const;

 private:
  std::map<std::string, Array> arrays_;
};

bool bitwise_equal(const ParamBundle& a, const ParamBundle& b);

/// shadow <- decay * shadow + (1 - decay) * live, element-wise.
void ema_update(ParamBundle& shadow, const ParamBundle& live, double decay);

/// Squared L2 norm over all arrays.
double squared_norm(const ParamBundle& bundle);

}  // namespace coevo

#endif  // COEVO_PARAMS_HPP_
