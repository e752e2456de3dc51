#include <cmath>

#include "coevo/decoder_stage.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coevo;
using namespace coevo::testing;

namespace {

constexpr std::size_t kPix = kPixelValues;

struct Fixture {
  Rng rng{31};
  FeatureExtractor fx{3};
  RewardModel clip{RewardChannel::kClipLike, fx};
  RewardModel blackbox{RewardChannel::kBlackBox, fx};
  ParamBundle decoder = random_decoder(4, 6, rng);
  ParamBundle teacher = decoder;
  ParamBundle disc = init_discriminator(8, rng);
  Array codebook = random_array({6, 4}, rng);
  DecoderBatch batch;

  Fixture() {
    for (auto& [name, a] : teacher) {
      for (double& v : a.data()) v += 0.05 * normal01(rng);
    }
    for (int id : {10, 180}) {
      batch.prompt_ids.push_back(id);
      std::vector<TokenSequence> seqs;
      std::vector<double> rewards;
      for (int i = 0; i < 3; ++i) {
        TokenSequence s(kTokensPerImage);
        for (int& z : s) z = static_cast<int>(uniform_index(rng, 6));
        seqs.push_back(s);
        rewards.push_back(uniform01(rng));
      }
      batch.rollouts.push_back(seqs);
      batch.rewards.push_back(rewards);
      TokenSequence gt(kTokensPerImage);
      for (int& z : gt) z = static_cast<int>(uniform_index(rng, 6));
      batch.z_gt.push_back(gt);
    }
    batch.x_gt_rows = stack_images({render(Prompt::from_id(10)), render(Prompt::from_id(180))});
  }
};

}  // namespace

TEST_CASE("rank weights examples") {
  const std::vector<double> equal(8, 3.7);
  for (double w : rank_weights(equal, 0.1)) CHECK(w == doctest::Approx(1.0).epsilon(1e-15));

  const std::vector<double> two{0.0, std::log(3.0)};
  const auto w = rank_weights(two, 1.0);
  CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(1.5).epsilon(1e-12));

  const std::vector<double> bad{1.0, std::nan("")};
  CHECK_THROWS_AS(rank_weights(bad, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(rank_weights(two, 0.0), std::invalid_argument);
}

TEST_CASE("zero-weight samples contribute no Rank-GAN gradient") {
  Rng rng(2);
  const ParamBundle disc = init_discriminator(8, rng);
  const Array rows = uniform_array({2, kPix}, rng, 0, 1);
  Tape t;
  const Var x = t.input("x", rows);
  const std::vector<double> weights{0.0, 2.0};
  t.backward(rank_gan_loss(x, weights, disc));
  const Array g = t.grad(x);
  double row0 = 0.0, row1 = 0.0;
  for (std::size_t i = 0; i < kPix; ++i) {
    row0 += std::abs(g[i]);
    row1 += std::abs(g[kPix + i]);
  }
  CHECK(row0 == 0.0);
  CHECK(row1 > 0.0);
}

TEST_CASE("reward back-propagation of a perfect render is -100") {
  const FeatureExtractor fx(3);
  const RewardModel clip(RewardChannel::kClipLike, fx);
  const std::vector<int> ids{7, 99};
  Tape t;
  const Var rows = t.constant(stack_images({render(Prompt::from_id(7)), render(Prompt::from_id(99))}));
  CHECK(reward_bp_loss(rows, ids, clip).value()[0] == doctest::Approx(-100.0).epsilon(1e-12));

  const RewardModel bb(RewardChannel::kBlackBox, fx);
  CHECK_THROWS_AS(reward_bp_loss(rows, ids, bb), OpaqueRewardError);
}

TEST_CASE("consistency with an identical teacher is zero and never trains the teacher") {
  Fixture f;
  const std::vector<int> tokens = f.batch.rollouts[0][0];
  for (ConsistencyMetric m : {ConsistencyMetric::kL2, ConsistencyMetric::kFeature}) {
    Tape t;
    const VarMap dec = f.decoder.bind(t, "d/");
    const VarMap teach = f.decoder.bind(t, "t/");
    const Var cb = t.constant(f.codebook);
    const Var same = consistency_loss(tokens, decode(tokens, dec, cb), teach, cb, m, f.fx);
    CHECK(same.value()[0] == 0.0);

    Tape t2;
    const VarMap dec2 = f.decoder.bind(t2, "d/");
    const VarMap teach2 = f.teacher.bind(t2, "t/");
    const Var cb2 = t2.constant(f.codebook);
    const Var diff = consistency_loss(tokens, decode(tokens, dec2, cb2), teach2, cb2, m, f.fx);
    CHECK(diff.value()[0] > 0.0);
    t2.backward(diff);
    for (const auto& [name, g] : f.teacher.gradients(t2, "t/")) {
      for (double v : g.data()) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("l2 consistency of a two-pixel discrepancy") {
  Fixture f;
  const std::vector<int> tokens = f.batch.rollouts[1][2];
  Tape t;
  const Var cb = t.constant(f.codebook);
  const VarMap teach = f.teacher.bind_constant(t);
  Array rows = decode_rows(tokens, f.teacher, f.codebook);
  rows[5] += 0.3;
  rows[600] -= 0.4;
  const Var loss = consistency_loss(tokens, t.constant(rows), teach, cb, ConsistencyMetric::kL2, f.fx);
  CHECK(loss.value()[0] == doctest::Approx((0.09 + 0.16) / 768.0).epsilon(1e-9));
}

TEST_CASE("reconstruction anchor L1 term") {
  Rng rng(4);
  ParamBundle disc = zero_output_discriminator(8, rng);
  const Array black({1, kPix});
  Tape t;
  const double softplus0 = std::log(2.0);
  CHECK(recon_anchor_loss(black, t.constant(black), disc).value()[0] == doctest::Approx(softplus0));
  const Array gray({1, kPix}, 0.5);
  CHECK(recon_anchor_loss(black, t.constant(gray), disc).value()[0] ==
        doctest::Approx(0.5 + softplus0).epsilon(1e-12));
}

TEST_CASE("decoder loss is the weighted sum of its terms") {
  Fixture f;
  const DecoderLossConfig config;
  Tape t;
  const DecoderLossTerms terms =
      decoder_loss(f.decoder.bind(t, ""), f.batch, f.teacher, f.disc, f.codebook, config, f.clip);
  const double hand = 0.1 * terms.reward_bp + 0.5 * terms.rank_gan + 1.0 * terms.recon + 1.0 * terms.consist;
  CHECK(rel_err(terms.total.value()[0], hand) <= 1e-9);
  CHECK_FALSE(terms.reward_term_disabled);
  CHECK(terms.fake_rows.shape() == Shape{6, kPix});
}

TEST_CASE("decoder loss rejects a vacuous objective") {
  Fixture f;
  DecoderLossConfig config;
  config.lambda_r = config.lambda_g = config.lambda_c = config.lambda_d = 0.0;
  Tape t;
  CHECK_THROWS_AS(decoder_loss(f.decoder.bind(t, ""), f.batch, f.teacher, f.disc, f.codebook, config, f.clip),
                  std::invalid_argument);
}

TEST_CASE("black-box channel drops the reward term") {
  Fixture f;
  DecoderLossConfig config;
  Tape t;
  const DecoderLossTerms terms =
      decoder_loss(f.decoder.bind(t, ""), f.batch, f.teacher, f.disc, f.codebook, config, f.blackbox);
  CHECK(terms.reward_term_disabled);
  const double hand = 0.5 * terms.rank_gan + terms.recon + terms.consist;
  CHECK(rel_err(terms.total.value()[0], hand) <= 1e-12);

  ParamBundle dec = f.decoder;
  Optimizer opt(config.decoder_optimizer);
  CHECK(decoder_step(f.batch, dec, f.teacher, f.disc, f.codebook, config, f.blackbox, opt).reward_term_disabled);
}

TEST_CASE("decoder step changes only the decoder") {
  Fixture f;
  DecoderLossConfig config;
  ParamBundle dec = f.decoder;
  const ParamBundle teacher = f.teacher, disc = f.disc;
  const Array cb = f.codebook;
  Optimizer opt(config.decoder_optimizer);
  decoder_step(f.batch, dec, f.teacher, f.disc, f.codebook, config, f.clip, opt);
  CHECK_FALSE(bitwise_equal(dec, f.decoder));
  CHECK(bitwise_equal(teacher, f.teacher));
  CHECK(bitwise_equal(disc, f.disc));
  CHECK(bitwise_equal(cb, f.codebook));
}

TEST_CASE("discriminator on identical batches at zero logits costs ln 4") {
  Rng rng(5);
  ParamBundle disc = zero_output_discriminator(8, rng);
  const Array rows = uniform_array({3, kPix}, rng, 0, 1);
  Optimizer none({OptimizerKind::kSgd, 0.0});
  const ParamBundle before = disc;
  const DiscriminatorStats s = discriminator_step(rows, rows, disc, none);
  CHECK(s.loss == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(bitwise_equal(disc, before));
}

TEST_CASE("discriminator separates linearly separable sets") {
  Rng rng(6);
  ParamBundle disc = init_discriminator(32, rng);
  const Array real = uniform_array({16, kPix}, rng, 0.6, 1.0);
  const Array fake = uniform_array({16, kPix}, rng, 0.0, 0.4);
  Optimizer opt(DecoderLossConfig{}.disc_optimizer);
  for (int i = 0; i < 500; ++i) discriminator_step(real, fake, disc, opt);
  CHECK(discriminator_accuracy(real, fake, disc) >= 0.95);
}

TEST_CASE("consistency metric names round trip") {
  CHECK(parse_consistency_metric("feature") == ConsistencyMetric::kFeature);
  CHECK(to_string(ConsistencyMetric::kL2) == "l2");
  CHECK_THROWS(parse_consistency_metric("lpips"));
}
