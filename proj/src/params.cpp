#include "coevo/params.hpp"

#include <stdexcept>

namespace coevo {

const Array& ParamBundle::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw std::out_of_range("ParamBundle: no array named '" + name + "'");
  return it->second;
}

Array& ParamBundle::get(const std::string& name) {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw std::out_of_range("ParamBundle: no array named '" + name + "'");
  return it->second;
}

std::size_t ParamBundle::num_values() const {
  std::size_t n = 0;
  for (const auto& [_, a] : arrays_) n += a.size();
  return n;
}

VarMap ParamBundle::bind(Tape& tape, const std::string& prefix) const {
  VarMap vars;
  for (const auto& [name, a] : arrays_) vars[name] = tape.input(prefix + name, a);
  return vars;
}

VarMap ParamBundle::bind_constant(Tape& tape) const {
  VarMap vars;
  for (const auto& [name, a] : arrays_) vars[name] = tape.constant(a);
  return vars;
}

ParamBundle ParamBundle::gradients(const Tape& tape, const std::string& prefix) const {
  ParamBundle out;
  const auto& names = tape.named_inputs();
  for (const auto& [name, a] : arrays_) {
    auto it = names.find(prefix + name);
    if (it == names.end()) {
      out.set(name, Array(a.shape()));
    } else {
      out.set(name, tape.grad(Var(nullptr, it->second)));
    }
  }
  return out;
}

bool ParamBundle::same_shapes(const ParamBundle& other) const {
  if (arrays_.size() != other.arrays_.size()) return false;
  auto it = other.arrays_.begin();
  for (const auto& [name, a] : arrays_) {
    if (it->first != name || it->second.shape() != a.shape()) return false;
    ++it;
  }
  return true;
}

bool ParamBundle::all_finite() const {
  for (const auto& [_, a] : arrays_)
    if (!a.all_finite()) return false;
  return true;
}

bool bitwise_equal(const ParamBundle& a, const ParamBundle& b) {
  if (!a.same_shapes(b)) return false;
  auto it = b.begin();
  for (const auto& [_, arr] : a) {
    if (!bitwise_equal(arr, it->second)) return false;
    ++it;
  }
  return true;
}

void ema_update(ParamBundle& shadow, const ParamBundle& live, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) {
    throw std::invalid_argument("ema_update: decay must be in [0,1), got " +
                                std::to_string(decay));
  }
  if (!shadow.same_shapes(live)) {
    throw ShapeError("ema_update: shadow and live bundles differ in names or shapes");
  }
  const double keep = 1.0 - decay;
  auto it = live.begin();
  for (auto& [_, s] : shadow) {
    const Array& l = it->second;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = decay * s[i] + keep * l[i];
    ++it;
  }
}

double squared_norm(const ParamBundle& bundle) {
  double s = 0.0;
  for (const auto& [_, a] : bundle)
    for (double v : a.data()) s += v * v;
  return s;
}

}  // namespace coevo
