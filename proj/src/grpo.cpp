#include "coevo/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace coevo {

AdvantageNorm parse_advantage_norm(const std::string& name) {
  if (name == "std") return AdvantageNorm::kStd;
  if (name == "mean_only") return AdvantageNorm::kMeanOnly;
  throw std::invalid_argument("unknown advantage_norm '" + name + "' (expected std|mean_only)");
}

std::string to_string(AdvantageNorm norm) {
  return norm == AdvantageNorm::kStd ? "std" : "mean_only";
}

Surrogate parse_surrogate(const std::string& name) {
  if (name == "clipped") return Surrogate::kClipped;
  if (name == "reinforce") return Surrogate::kReinforce;
  throw std::invalid_argument("unknown surrogate '" + name + "' (expected clipped|reinforce)");
}

std::string to_string(Surrogate surrogate) {
  return surrogate == Surrogate::kClipped ? "clipped" : "reinforce";
}

std::vector<double> group_advantages(std::span<const double> rewards, double sigma_floor,
                                     AdvantageNorm norm) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages: need at least 2 rewards");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw std::invalid_argument("group_advantages: non-finite reward");
  }
  const double n = static_cast<double>(rewards.size());
  double mu = 0.0;
  for (double r : rewards) mu += r;
  mu /= n;
  std::vector<double> out(rewards.size());
  if (norm == AdvantageNorm::kMeanOnly) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rewards[i] - mu;
    return out;
  }
  double var = 0.0;
  for (double r : rewards) var += (r - mu) * (r - mu);
  const double sigma = std::sqrt(var / n);
  if (sigma <= sigma_floor) return std::vector<double>(rewards.size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (rewards[i] - mu) / sigma;
  return out;
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

void assign_advantages(RolloutGroup& group, const GrpoConfig& config) {
  group.advantages = group_advantages(group.rewards, config.sigma_floor, config.advantage_norm);
}

PolicyLossTerms policy_loss(const VarMap& policy, std::span<const RolloutGroup> groups,
                            const ParamBundle& reference, const GrpoConfig& config) {
  Tape& tape = policy.at("w_o").tape();
  std::vector<int> ids, flat;
  std::vector<double> adv, old;
  for (const RolloutGroup& g : groups) {
    if (g.advantages.size() != g.size()) {
      throw std::invalid_argument("policy_loss: group advantages not assigned");
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      ids.push_back(g.prompt.id);
      flat.insert(flat.end(), g.rollouts[i].tokens.begin(), g.rollouts[i].tokens.end());
      adv.push_back(g.advantages[i]);
      old.push_back(g.rollouts[i].log_prob);
    }
  }
  if (ids.empty()) throw std::invalid_argument("policy_loss: no rollouts");
  const std::size_t n = ids.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  Var lp = sequence_log_probs(policy, ids, flat);
  Var a = tape.constant(Array::vector(adv));
  PolicyLossTerms terms;
  Var surrogate;
  if (config.surrogate == Surrogate::kClipped) {
    Var ratio = ad::exp(ad::sub(lp, tape.constant(Array::vector(old))));
    Var unclipped = ad::mul(ratio, a);
    Var clipped = ad::mul(ad::clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps), a);
    surrogate = ad::scale(ad::sum(ad::minimum(unclipped, clipped)), inv_n);
    double outside = 0.0, rsum = 0.0;
    for (double r : ratio.value().data()) {
      rsum += r;
      if (r < 1.0 - config.clip_eps || r > 1.0 + config.clip_eps) outside += 1.0;
    }
    terms.clip_fraction = outside * inv_n;
    terms.mean_ratio = rsum * inv_n;
  } else {
    surrogate = ad::scale(ad::sum(ad::mul(lp, a)), inv_n);
    terms.mean_ratio = 1.0;
  }
  Var kl = sequence_kl(policy, reference, ids, flat);
  terms.loss = ad::neg(ad::sub(surrogate, ad::scale(kl, config.kl_beta)));
  terms.surrogate = surrogate.value()[0];
  terms.kl = kl.value()[0];
  return terms;
}

double policy_objective(const ParamBundle& policy, std::span<const RolloutGroup> groups,
                        const ParamBundle& reference, const GrpoConfig& config) {
  Tape tape;
  return -policy_loss(policy.bind_constant(tape), groups, reference, config).loss.value()[0];
}

PolicyStepStats policy_step(std::span<const RolloutGroup> groups, ParamBundle& policy,
                            const ParamBundle& reference, const GrpoConfig& config,
                            Optimizer& optimizer) {
  Tape tape;
  VarMap pv = policy.bind(tape, "");
  PolicyLossTerms terms = policy_loss(pv, groups, reference, config);
  tape.backward(terms.loss);
  ParamBundle grads = policy.gradients(tape, "");
  if (!grads.all_finite()) {
    std::ostringstream msg;
    msg << "policy_step: non-finite gradient (loss=" << terms.loss.value()[0]
        << ", kl=" << terms.kl << ") in:";
    for (const auto& [name, g] : grads)
      if (!g.all_finite()) msg << ' ' << name;
    throw std::runtime_error(msg.str());
  }
  PolicyStepStats stats;
  stats.loss = terms.loss.value()[0];
  stats.surrogate = terms.surrogate;
  stats.kl = terms.kl;
  stats.clip_fraction = terms.clip_fraction;
  stats.grad_norm = std::sqrt(squared_norm(grads));
  optimizer.step(policy, grads);
  return stats;
}

}  // namespace coevo
