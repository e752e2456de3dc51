#ifndef COEVO_OPTIM_HPP_
#define COEVO_OPTIM_HPP_

#include <string>

#include "coevo/params.hpp"

namespace coevo {

enum class OptimizerKind { kSgd, kAdamW };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First-order optimizer over one ParamBundle. Plain gradient descent keeps no
/// state; AdamW keeps first and second moments keyed like the bundle.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  /// Applies one update in place. Throws if any gradient is non-finite.
  void step(ParamBundle& params, const ParamBundle& grads);

  const OptimizerConfig& config() const { return config_; }
  long steps() const { return t_; }

 private:
  OptimizerConfig config_;
  ParamBundle m_;
  ParamBundle v_;
  long t_ = 0;
};

}  // namespace coevo

#endif  // COEVO_OPTIM_HPP_
