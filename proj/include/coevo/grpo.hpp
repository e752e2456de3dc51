#ifndef COEVO_GRPO_HPP_
#define COEVO_GRPO_HPP_

#include <span>
#include <string>
#include <vector>

#include "coevo/optim.hpp"
#include "coevo/policy.hpp"

namespace coevo {

enum class AdvantageNorm { kStd, kMeanOnly };
enum class Surrogate { kClipped, kReinforce };

AdvantageNorm parse_advantage_norm(const std::string& name);
std::string to_string(AdvantageNorm norm);
Surrogate parse_surrogate(const std::string& name);
std::string to_string(Surrogate surrogate);

struct GrpoConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.05;
  double sigma_floor = 1e-6;
  AdvantageNorm advantage_norm = AdvantageNorm::kStd;
  Surrogate surrogate = Surrogate::kClipped;
  OptimizerConfig optimizer{OptimizerKind::kSgd, 1e-3, 0.9, 0.999, 1e-8, 0.01};
};

/// A_i = (r_i - mean) / max(sigma, floor) with the population sigma; all
/// zeros when sigma <= floor. kMeanOnly returns r_i - mean.
std::vector<double> group_advantages(std::span<const double> rewards, double sigma_floor,
                                     AdvantageNorm norm = AdvantageNorm::kStd);

/// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A).
double clipped_surrogate(double ratio, double advantage, double eps);

/// G rollouts of one prompt with their rewards and advantages. Old
/// log-probabilities are the ones recorded at sampling time.
struct RolloutGroup {
  Prompt prompt;
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
  std::vector<double> advantages;

  std::size_t size() const { return rollouts.size(); }
};

/// Fills advantages from rewards.
void assign_advantages(RolloutGroup& group, const GrpoConfig& config);

struct PolicyLossTerms {
  Var loss;
  double surrogate = 0.0;     // mean clipped (or REINFORCE) term
  double kl = 0.0;            // mean analytic sequence KL
  double clip_fraction = 0.0; // share of samples whose ratio left [1-eps, 1+eps]
  double mean_ratio = 0.0;
};

/// -[ mean_i surrogate_i - beta * KL(pi || ref) ] over every rollout of every
/// group. Advantages and old log-probabilities are constants.
PolicyLossTerms policy_loss(const VarMap& policy, std::span<const RolloutGroup> groups,
                            const ParamBundle& reference, const GrpoConfig& config);

/// Value of -policy_loss (the objective stage 1 ascends), tape-free.
double policy_objective(const ParamBundle& policy, std::span<const RolloutGroup> groups,
                        const ParamBundle& reference, const GrpoConfig& config);

struct PolicyStepStats {
  double loss = 0.0;
  double surrogate = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

/// One optimizer step on the policy. Touches nothing but `policy` and the
/// optimizer state. Throws std::runtime_error listing offending arrays when
/// a gradient is non-finite.
PolicyStepStats policy_step(std::span<const RolloutGroup> groups, ParamBundle& policy,
                            const ParamBundle& reference, const GrpoConfig& config,
                            Optimizer& optimizer);

}  // namespace coevo

#endif  // COEVO_GRPO_HPP_
