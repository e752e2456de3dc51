#include <algorithm>
#include <cmath>

#include "coevo/diagnostics.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coevo;
using namespace coevo::testing;

namespace {

// Prompt i < 4 emits token kOracleTokens[i] at every position with probability 1.
constexpr int kOracleTokens[4] = {3, 3, 17, 40};

ParamBundle oracle_policy() {
  PolicyConfig c;
  c.embed_dim = 4;
  c.hidden_dim = 4;
  ParamBundle p = zero_policy(c);
  for (std::size_t i = 0; i < 4; ++i) {
    p.get("prompt_emb")[i * 4 + i] = 1.0;
    p.get("w_p")[i * 4 + i] = 10.0;
    p.get("w_o")[i * 64 + static_cast<std::size_t>(kOracleTokens[i])] = 1000.0;
  }
  return p;
}

TokenHistogram oracle_gt_histogram() {
  std::vector<TokenSequence> seqs;
  for (int t : kOracleTokens) seqs.emplace_back(kTokensPerImage, t);
  return token_histogram(seqs, 64);
}

}  // namespace

TEST_CASE("token histogram counting") {
  const std::vector<TokenSequence> none;
  const TokenHistogram empty = token_histogram(none, 4);
  CHECK(empty.total == 0);
  CHECK(empty.counts == std::vector<std::int64_t>(4, 0));

  const std::vector<TokenSequence> one{{0, 0, 1}};
  const TokenHistogram h = token_histogram(one, 2);
  CHECK(h.counts == std::vector<std::int64_t>{2, 1});
  CHECK(h.total == 3);

  const std::vector<TokenSequence> a{{1, 2, 2}}, b{{0, 3}, {3, 3}};
  const std::vector<TokenSequence> ab{{1, 2, 2}, {0, 3}, {3, 3}};
  TokenHistogram sum = token_histogram(a, 4);
  sum += token_histogram(b, 4);
  CHECK(sum.counts == token_histogram(ab, 4).counts);
  CHECK(sum.total == 7);

  const std::vector<TokenSequence> bad{{0, 4}};
  CHECK_THROWS(token_histogram(bad, 4));
}

TEST_CASE("lcs_kl examples") {
  TokenHistogram p{{2, 2}, 4}, q{{1, 3}, 4};
  CHECK(lcs_kl(p, q, 0.0) == doctest::Approx(0.1438410362).epsilon(1e-9));
  CHECK(lcs_kl(p, p, 0.0) == 0.0);
  CHECK(lcs_kl(q, q, 0.3) == 0.0);
  CHECK(lcs_kl(p, q, 0.3) > 0.0);
  TokenHistogram empty{{0, 0}, 0};
  CHECK_THROWS(lcs_kl(empty, q, 0.1));
  CHECK_THROWS(lcs_kl(p, empty, 0.1));
}

TEST_CASE("codebook entropy examples") {
  TokenHistogram uniform{std::vector<std::int64_t>(64, 5), 320};
  CHECK(codebook_entropy(uniform, 0.0) == doctest::Approx(6.0).epsilon(1e-14));
  TokenHistogram single{std::vector<std::int64_t>(64, 0), 9};
  single.counts[12] = 9;
  CHECK(codebook_entropy(single, 0.0) == 0.0);
  CHECK(codebook_entropy(single, default_smoothing(64)) > 0.0);
  CHECK(codebook_entropy(single, default_smoothing(64)) <= 6.0);
  TokenHistogram empty{std::vector<std::int64_t>(64, 0), 0};
  CHECK_THROWS(codebook_entropy(empty, 0.1));
}

TEST_CASE("frechet distance is zero on itself and symmetric") {
  Rng rng(41);
  const Array a = random_array({200, 16}, rng);
  const Array b = random_array({150, 16}, rng, 1.3);
  CHECK(std::abs(frechet_distance(a, a)) <= 1e-8);
  CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) <= 1e-9);
  CHECK(frechet_distance(a, b) > 0.0);
  CHECK_THROWS(frechet_distance(random_array({16, 16}, rng), a));
}

TEST_CASE("shift probe of a ground-truth replay oracle has zero shift") {
  const ParamBundle p = oracle_policy();
  const TokenHistogram gt = oracle_gt_histogram();
  const std::vector<int> ids{0, 1, 2, 3};
  ProbeConfig pc;
  pc.samples = 2048;
  pc.smoothing = 0.0;
  const std::uint64_t before = decode_call_count();
  const ShiftReport r = shift_probe(p, gt, ids, SamplingConfig{}, pc, 5);
  CHECK(decode_call_count() == before);
  CHECK(std::abs(r.kl_nats) <= 1e-12);
  CHECK(r.entropy_bits == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("shift probe of a single-token policy has zero entropy") {
  const ParamBundle p = oracle_policy();
  const std::vector<int> ids{2};
  ProbeConfig pc;
  pc.samples = 64;
  pc.smoothing = 0.0;
  const ShiftReport r = shift_probe(p, oracle_gt_histogram(), ids, SamplingConfig{}, pc, 1);
  CHECK(r.entropy_bits == 0.0);
  CHECK(r.kl_nats > 0.0);
}

TEST_CASE("shift probe is deterministic for a fixed seed") {
  Rng rng(42);
  const ParamBundle p = init_policy(PolicyConfig{}, rng);
  const std::vector<int> ids{0, 9, 100};
  ProbeConfig pc;
  pc.samples = 96;
  const ShiftReport a = shift_probe(p, oracle_gt_histogram(), ids, SamplingConfig{}, pc, 77);
  const ShiftReport b = shift_probe(p, oracle_gt_histogram(), ids, SamplingConfig{}, pc, 77);
  CHECK(a.kl_nats == b.kl_nats);
  CHECK(a.entropy_bits == b.entropy_bits);
  CHECK(a.kl_nats >= 0.0);
}

TEST_CASE("real baseline") {
  const auto all = exhaustive_dataset();
  Rng tok_rng(44);
  const Tokenizer tok = init_tokenizer(TokenizerConfig{}, all, tok_rng);
  const double s = default_smoothing(64);

  const std::vector<Example> half(all.begin(), all.begin() + 50);
  CHECK(real_baseline(half, half, tok, s) == 0.0);
  CHECK(real_baseline(all, tok, 3, s) >= 0.0);
  CHECK_THROWS(real_baseline(std::span(all).first(1), tok, 3, s));

  std::vector<double> small, large;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng data_rng(seed);
    small.push_back(real_baseline(dataset(128, data_rng), tok, seed, s));
    large.push_back(real_baseline(dataset(2048, data_rng), tok, seed, s));
  }
  std::sort(small.begin(), small.end());
  std::sort(large.begin(), large.end());
  CHECK(large[2] <= small[2]);
}
