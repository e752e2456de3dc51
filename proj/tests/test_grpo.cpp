#include <cmath>
#include <limits>

#include "coevo/grpo.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coevo;
using namespace coevo::testing;

namespace {

PolicyConfig toy_config() {
  PolicyConfig c;
  c.codebook_size = 5;
  c.embed_dim = 3;
  c.hidden_dim = 4;
  return c;
}

std::vector<RolloutGroup> make_groups(const ParamBundle& sampler, const GrpoConfig& config,
                                      Rng& rng) {
  std::vector<RolloutGroup> groups;
  for (int id : {2, 90}) {
    RolloutGroup g;
    g.prompt = Prompt::from_id(id);
    g.rollouts = sample_rollouts(g.prompt, 4, sampler, SamplingConfig{}, rng);
    for (std::size_t i = 0; i < g.size(); ++i) g.rewards.push_back(uniform01(rng) * 10);
    assign_advantages(g, config);
    groups.push_back(std::move(g));
  }
  return groups;
}

}  // namespace

TEST_CASE("group advantages examples") {
  const std::vector<double> flat{1, 1, 1};
  for (double a : group_advantages(flat, 1e-6)) CHECK(a == 0.0);

  const std::vector<double> two{0, 2};
  const auto a = group_advantages(two, 1e-6);
  CHECK(a[0] == -1.0);
  CHECK(a[1] == 1.0);

  const std::vector<double> low{1, 2, 3}, high{11, 12, 13};
  CHECK(group_advantages(low, 1e-6) == group_advantages(high, 1e-6));

  const auto mean_only = group_advantages(low, 1e-6, AdvantageNorm::kMeanOnly);
  CHECK(mean_only == std::vector<double>{-1.0, 0.0, 1.0});
}

TEST_CASE("group advantages reject bad input") {
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(group_advantages(one, 1e-6), std::invalid_argument);
  const std::vector<double> nan{1.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(group_advantages(nan, 1e-6), std::invalid_argument);
  CHECK_THROWS_AS(parse_advantage_norm("median"), std::invalid_argument);
  CHECK(parse_surrogate(to_string(Surrogate::kReinforce)) == Surrogate::kReinforce);
}

TEST_CASE("clipped surrogate examples") {
  CHECK(clipped_surrogate(1.5, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  CHECK(clipped_surrogate(1.1, 3.0, 0.2) == 1.1 * 3.0);
  CHECK(clipped_surrogate(0.9, -2.0, 0.2) == 0.9 * -2.0);
}

TEST_CASE("policy loss vanishes at the identity configuration") {
  Rng rng(21);
  const ParamBundle p = init_policy(toy_config(), rng);
  GrpoConfig config;
  const auto groups = make_groups(p, config, rng);
  Tape t;
  const PolicyLossTerms terms = policy_loss(p.bind(t, ""), groups, p, config);
  CHECK(std::abs(terms.loss.value()[0]) <= 1e-12);
  CHECK(terms.kl == 0.0);
  CHECK(terms.clip_fraction == 0.0);
}

TEST_CASE("zero advantages and zero beta give zero loss and gradient") {
  Rng rng(22);
  const ParamBundle p = init_policy(toy_config(), rng);
  const ParamBundle ref = init_policy(toy_config(), rng);
  GrpoConfig config;
  config.kl_beta = 0.0;
  auto groups = make_groups(p, config, rng);
  for (auto& g : groups) std::fill(g.advantages.begin(), g.advantages.end(), 0.0);
  Tape t;
  const PolicyLossTerms terms = policy_loss(p.bind(t, ""), groups, ref, config);
  CHECK(terms.loss.value()[0] == 0.0);
  t.backward(terms.loss);
  for (const auto& [name, g] : p.gradients(t, "")) {
    for (double v : g.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("policy_step with zero learning rate leaves the policy unchanged") {
  Rng rng(23);
  const ParamBundle p = init_policy(toy_config(), rng);
  GrpoConfig config;
  config.optimizer.lr = 0.0;
  const auto groups = make_groups(p, config, rng);
  ParamBundle updated = p;
  Optimizer opt(config.optimizer);
  policy_step(groups, updated, p, config, opt);
  CHECK(bitwise_equal(updated, p));
}

TEST_CASE("policy_step is deterministic and ascends the objective") {
  Rng rng(24);
  const ParamBundle p = init_policy(toy_config(), rng);
  GrpoConfig config;
  config.optimizer.lr = 1e-4;
  const auto groups = make_groups(p, config, rng);
  ParamBundle a = p, b = p;
  Optimizer oa(config.optimizer), ob(config.optimizer);
  const PolicyStepStats sa = policy_step(groups, a, p, config, oa);
  policy_step(groups, b, p, config, ob);
  CHECK(bitwise_equal(a, b));
  CHECK(!bitwise_equal(a, p));
  CHECK(sa.grad_norm > 0.0);
  CHECK(policy_objective(a, groups, p, config) >= policy_objective(p, groups, p, config) - 1e-8);
}

TEST_CASE("non-finite gradients abort the step with the array names") {
  Rng rng(25);
  ParamBundle p = init_policy(toy_config(), rng);
  GrpoConfig config;
  const auto groups = make_groups(p, config, rng);
  const ParamBundle ref = p;
  p.get("w_o")[0] = std::numeric_limits<double>::quiet_NaN();
  Optimizer opt(config.optimizer);
  CHECK_THROWS_WITH_AS(policy_step(groups, p, ref, config, opt),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("reinforce surrogate uses log-probs times advantages") {
  Rng rng(26);
  const ParamBundle p = init_policy(toy_config(), rng);
  GrpoConfig config;
  config.surrogate = Surrogate::kReinforce;
  config.kl_beta = 0.0;
  const auto groups = make_groups(p, config, rng);
  double expected = 0.0, n = 0.0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      expected += g.advantages[i] * g.rollouts[i].log_prob;
      n += 1;
    }
  }
  CHECK(policy_objective(p, groups, p, config) == doctest::Approx(expected / n).epsilon(1e-10));
}
