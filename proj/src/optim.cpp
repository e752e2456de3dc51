#include "coevo/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace coevo {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adamw") return OptimizerKind::kAdamW;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd|adamw)");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adamw";
}

void Optimizer::step(ParamBundle& params, const ParamBundle& grads) {
  if (!params.same_shapes(grads)) {
    throw ShapeError("Optimizer::step: gradient bundle does not match parameters");
  }
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) {
      throw std::runtime_error("Optimizer::step: non-finite gradient in '" + name + "'");
    }
  }
  ++t_;
  const double lr = config_.lr;
  if (config_.kind == OptimizerKind::kSgd) {
    auto git = grads.begin();
    for (auto& [_, p] : params) {
      const Array& g = git->second;
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
      ++git;
    }
    return;
  }

  if (m_.size() == 0) {
    for (const auto& [name, p] : params) {
      m_.set(name, Array(p.shape()));
      v_.set(name, Array(p.shape()));
    }
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  auto git = grads.begin();
  auto mit = m_.begin();
  auto vit = v_.begin();
  for (auto& [_, p] : params) {
    const Array& g = git->second;
    Array& m = mit->second;
    Array& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      p[i] -= lr * (update + config_.weight_decay * p[i]);
    }
    ++git;
    ++mit;
    ++vit;
  }
}

}  // namespace coevo
