#include <cmath>
#include <numeric>

#include "coevo/policy.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coevo;
using namespace coevo::testing;

namespace {

PolicyConfig small_config(int k) {
  PolicyConfig c;
  c.codebook_size = k;
  c.embed_dim = 4;
  c.hidden_dim = 8;
  return c;
}

SamplingConfig plain_sampling() { return {1.0, 1.0}; }

}  // namespace

TEST_CASE("zero policy gives zero logits") {
  const ParamBundle p = zero_policy(small_config(6));
  const StepOutput out = step_logits(Array({8}), bos_token(p), 3, p);
  for (double v : out.logits.data()) CHECK(v == 0.0);
  CHECK(bos_token(p) == 6);
}

TEST_CASE("step_logits is deterministic and validates tokens") {
  Rng rng(1);
  const ParamBundle p = init_policy(small_config(6), rng);
  const Array h = random_array({8}, rng, 0.5);
  CHECK(bitwise_equal(step_logits(h, 2, 5, p).logits, step_logits(h, 2, 5, p).logits));
  CHECK_NOTHROW(step_logits(h, 6, 5, p));
  CHECK_THROWS_AS(step_logits(h, 7, 5, p), std::out_of_range);
  CHECK_THROWS_AS(step_logits(h, -1, 5, p), std::out_of_range);
  CHECK_THROWS_AS(step_logits(h, 0, kNumPrompts, p), std::out_of_range);
}

TEST_CASE("plain sampling matches softmax frequencies within 3 sigma") {
  ParamBundle p = zero_policy(small_config(4));
  const std::vector<double> logits{0.5, -1.0, 0.0, 1.2};
  p.set("b_o", Array::vector(logits));
  std::vector<double> probs(4);
  double z = 0;
  for (double l : logits) z += std::exp(l);
  for (int i = 0; i < 4; ++i) probs[i] = std::exp(logits[i]) / z;

  const int n = 50000 / kTokensPerImage + 1;
  std::vector<int> ids(n, 0);
  std::vector<std::uint64_t> seeds(n);
  std::iota(seeds.begin(), seeds.end(), 100);
  std::vector<double> counts(4);
  double draws = 0;
  for (const Rollout& r : sample_sequences(ids, seeds, p, plain_sampling())) {
    for (int t : r.tokens) {
      counts[t] += 1;
      draws += 1;
    }
  }
  CHECK(draws >= 50000);
  for (int i = 0; i < 4; ++i) {
    const double sigma = std::sqrt(draws * probs[i] * (1 - probs[i]));
    CHECK(std::abs(counts[i] - draws * probs[i]) <= 3 * sigma);
  }
}

TEST_CASE("a saturated logit is always sampled and has log-prob zero") {
  ParamBundle p = zero_policy(small_config(4));
  p.set("b_o", Array::vector({0.0, 1e9, 0.0, 0.0}));
  Rng rng(3);
  const auto rolls = sample_rollouts(Prompt::from_id(7), 8, p, SamplingConfig{}, rng);
  for (const Rollout& r : rolls) {
    for (int t : r.tokens) CHECK(t == 1);
    CHECK(r.log_prob == 0.0);
    CHECK(log_prob(r.tokens, 7, p) == 0.0);
  }
}

TEST_CASE("sample_rollouts is seeded, sized, and needs two members") {
  Rng init(4);
  const ParamBundle p = init_policy(small_config(6), init);
  const Prompt prompt = Prompt::from_id(42);
  const auto a = sample_rollouts(prompt, 5, p, SamplingConfig{}, 99);
  const auto b = sample_rollouts(prompt, 5, p, SamplingConfig{}, 99);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens.size() == static_cast<std::size_t>(kTokensPerImage));
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].seed == b[i].seed);
    CHECK(std::isfinite(a[i].log_prob));
    CHECK(a[i].log_prob <= 0.0);
  }
  CHECK_THROWS_AS(sample_rollouts(prompt, 1, p, SamplingConfig{}, 99), std::invalid_argument);
}

TEST_CASE("log_prob of a uniform policy over four tokens") {
  const ParamBundle p = zero_policy(small_config(4));
  const TokenSequence seq{0, 1, 2, 3, 3, 2, 1, 0, 0, 0, 1, 1, 2, 2, 3, 3};
  CHECK(log_prob(seq, 11, p) == doctest::Approx(-22.1807097779).epsilon(1e-10));
}

TEST_CASE("recorded log-probs match log_prob without truncation") {
  Rng rng(5);
  const ParamBundle p = init_policy(small_config(8), rng);
  const auto rolls = sample_rollouts(Prompt::from_id(17), 6, p, plain_sampling(), rng);
  for (const Rollout& r : rolls) {
    const double direct = log_prob(r.tokens, 17, p);
    CHECK(std::abs(r.log_prob - direct) <= 1e-12 * std::max(1.0, std::abs(direct)));
    const double sum = std::accumulate(r.token_log_probs.begin(), r.token_log_probs.end(), 0.0);
    CHECK(std::abs(sum - direct) <= 1e-12 * std::max(1.0, std::abs(direct)));
  }
}

TEST_CASE("sequence log-probs on the tape agree with the plain evaluation") {
  Rng rng(6);
  const ParamBundle p = init_policy(small_config(5), rng);
  const auto rolls = sample_rollouts(Prompt::from_id(3), 3, p, SamplingConfig{}, rng);
  std::vector<int> ids, flat;
  for (const Rollout& r : rolls) {
    ids.push_back(3);
    flat.insert(flat.end(), r.tokens.begin(), r.tokens.end());
  }
  Tape t;
  const Var lp = sequence_log_probs(p.bind(t, "p/"), ids, flat);
  for (std::size_t i = 0; i < rolls.size(); ++i) {
    CHECK(lp.value()[i] == doctest::Approx(rolls[i].log_prob).epsilon(1e-12));
  }
}

TEST_CASE("categorical_kl of two binary distributions") {
  const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
  CHECK(categorical_kl(p, q) == doctest::Approx(0.1438410362).epsilon(1e-9));
  CHECK(categorical_kl(p, p) == 0.0);
}

TEST_CASE("kl_estimate is zero for equal policies and non-negative otherwise") {
  Rng rng(7);
  const std::vector<Prompt> prompts{Prompt::from_id(0), Prompt::from_id(150)};
  const ParamBundle p = init_policy(small_config(6), rng);
  CHECK(kl_estimate(p, p, prompts, 3, SamplingConfig{}, rng) == 0.0);
  for (int i = 0; i < 100; ++i) {
    const ParamBundle a = init_policy(small_config(6), rng);
    const ParamBundle b = init_policy(small_config(6), rng);
    CHECK(kl_estimate(a, b, prompts, 1, SamplingConfig{}, rng) >= 0.0);
  }
}

TEST_CASE("ema_update arithmetic") {
  ParamBundle shadow, live;
  shadow.set("w", Array({3}));
  live.set("w", Array::vector({1, 1, 1}));
  ParamBundle copy = shadow;
  ema_update(copy, live, 0.0);
  CHECK(bitwise_equal(copy, live));
  ema_update(shadow, live, 0.999);
  CHECK(shadow.get("w")[0] == doctest::Approx(0.001).epsilon(1e-12));

  ParamBundle wrong;
  wrong.set("w", Array({4}));
  CHECK_THROWS(ema_update(shadow, wrong, 0.5));
}

TEST_CASE("nucleus truncation") {
  const std::vector<double> probs{0.1, 0.5, 0.3, 0.1};
  CHECK(nucleus(probs, 1.0) == probs);
  const auto top = nucleus(probs, 0.7);
  CHECK(top[1] == doctest::Approx(0.625));
  CHECK(top[2] == doctest::Approx(0.375));
  CHECK(top[0] == 0.0);
  CHECK(top[3] == 0.0);
  const auto tie = nucleus(probs, 0.85);
  CHECK(tie[0] > 0.0);
  CHECK(tie[3] == 0.0);
  CHECK_THROWS_AS(nucleus(probs, 0.0), std::invalid_argument);
}

TEST_CASE("zero-initialized policy has cross-entropy ln K per token") {
  const ParamBundle p = zero_policy(PolicyConfig{});
  const std::vector<int> ids{0, 5};
  const std::vector<TokenSequence> targets{TokenSequence(16, 3), TokenSequence(16, 60)};
  CHECK(per_token_cross_entropy(p, ids, targets) == doctest::Approx(std::log(64.0)).epsilon(1e-12));
  CHECK(16 * per_token_cross_entropy(p, ids, targets) == doctest::Approx(66.542).epsilon(1e-4));
}

TEST_CASE("sft with zero steps returns the input policy") {
  Rng rng(8);
  const ParamBundle p = init_policy(small_config(6), rng);
  SftConfig c;
  c.steps = 0;
  const std::vector<int> ids{1};
  const std::vector<TokenSequence> targets{TokenSequence(16, 2)};
  CHECK(bitwise_equal(sft_pretrain(p, ids, targets, c, rng), p));
}

TEST_CASE("sft fits a single prompt") {
  Rng rng(9);
  const ParamBundle p = init_policy(PolicyConfig{}, rng);
  SftConfig c;
  c.steps = 300;
  c.batch = 1;
  const std::vector<int> ids{77};
  const std::vector<TokenSequence> targets{{5, 9, 9, 12, 40, 41, 0, 63, 5, 5, 5, 7, 2, 19, 33, 8}};
  const ParamBundle fitted = sft_pretrain(p, ids, targets, c, rng);
  CHECK(per_token_cross_entropy(fitted, ids, targets) <= 0.2);
}
