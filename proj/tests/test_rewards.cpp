#include <algorithm>
#include <array>
#include <cmath>

#include "coevo/rewards.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coevo;
using namespace coevo::testing;

namespace {

Image random_image(Rng& rng) {
  Image img;
  for (double& v : img.pixels.data()) v = uniform01(rng);
  return img;
}

// Direct per-channel histogram intersection, bins of width 1/8 with 1.0 in the last bin.
double brute_intersection(const Image& a, const Image& b) {
  double total = 0.0;
  for (int c = 0; c < kChannels; ++c) {
    std::array<double, kHistogramBins> ha{}, hb{};
    for (int y = 0; y < kImageSize; ++y) {
      for (int x = 0; x < kImageSize; ++x) {
        ha[std::min(kHistogramBins - 1, static_cast<int>(a.at(y, x, c) * kHistogramBins))] += 1;
        hb[std::min(kHistogramBins - 1, static_cast<int>(b.at(y, x, c) * kHistogramBins))] += 1;
      }
    }
    double inter = 0.0;
    for (int k = 0; k < kHistogramBins; ++k) inter += std::min(ha[k], hb[k]);
    total += inter / (kImageSize * kImageSize);
  }
  return total / kChannels;
}

}  // namespace

TEST_CASE("clip-like reward of the prompt's own render is 100") {
  const FeatureExtractor fx(5);
  for (int id : {0, 57, 130, 223}) {
    const Prompt p = Prompt::from_id(id);
    CHECK(clip_like_reward(render(p), p, fx) == doctest::Approx(100.0).epsilon(1e-12));
  }
}

TEST_CASE("clip-like reward is pure and bounded") {
  const FeatureExtractor fx(5);
  Rng rng(1);
  const Image img = random_image(rng);
  const Image copy = img;
  const Prompt p = Prompt::from_id(9);
  const double r = clip_like_reward(img, p, fx);
  CHECK(r == clip_like_reward(copy, p, fx));
  CHECK(std::abs(r) <= 100.0);
}

TEST_CASE("batched and differentiable scores agree with the single-image reward") {
  const FeatureExtractor fx(6);
  const RewardModel model(RewardChannel::kClipLike, fx);
  Rng rng(2);
  const std::vector<Image> imgs{random_image(rng), render(Prompt::from_id(40)), random_image(rng)};
  const std::vector<int> ids{3, 40, 200};
  const Array rows = stack_images(imgs);
  const auto plain = model.score(rows, ids);
  Tape t;
  const Var diff = model.score(t.constant(rows), ids);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const double single = clip_like_reward(imgs[i], Prompt::from_id(ids[i]), fx);
    CHECK(plain[i] == doctest::Approx(single).epsilon(1e-12));
    CHECK(diff.value()[i] == doctest::Approx(single).epsilon(1e-12));
  }
  CHECK(model.score(imgs[0], Prompt::from_id(3)).differentiable);
}

TEST_CASE("clip-like reward gradient matches finite differences") {
  const FeatureExtractor fx(7);
  Rng rng(3);
  const std::vector<int> ids{12, 101};
  const Array rows = uniform_array({2, static_cast<std::size_t>(kPixelValues)}, rng, 0.05, 0.95);
  const GraphFn g = [&](Tape&, const VarMap& v) {
    return ad::sum(clip_like_reward(v.at("img"), ids, fx));
  };
  CHECK(grad_check(g, {{"img", rows}}, 1e-5) <= 1e-4);
}

TEST_CASE("black-box reward of the prompt's own render is 1") {
  for (int id : {0, 100, 223}) {
    const Prompt p = Prompt::from_id(id);
    CHECK(blackbox_reward(render(p), p) == 1.0);
  }
}

TEST_CASE("black-box reward of the inverted render matches direct histograms") {
  for (int id : {0, 61, 120, 190}) {
    const Prompt p = Prompt::from_id(id);
    const Prompt inv = Prompt::make(p.bg_color, p.fg_color, p.shape);
    const Image img = render(inv);
    CHECK(blackbox_reward(img, p) == doctest::Approx(brute_intersection(img, render(p))).epsilon(1e-12));
  }
}

TEST_CASE("black-box reward stays in the unit interval") {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double r = blackbox_reward(random_image(rng), sample_prompt(rng));
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
}

TEST_CASE("black-box channel refuses gradient requests") {
  const FeatureExtractor fx(5);
  const RewardModel model(RewardChannel::kBlackBox, fx);
  CHECK_FALSE(model.differentiable());
  Tape t;
  const Var rows = t.input("img", Array({1, static_cast<std::size_t>(kPixelValues)}));
  const std::vector<int> ids{0};
  CHECK_THROWS_AS(model.score(rows, ids), OpaqueRewardError);
  CHECK_FALSE(model.score(render(Prompt::from_id(0)), Prompt::from_id(0)).differentiable);
  CHECK(model.score(render(Prompt::from_id(0)), Prompt::from_id(0)).score == 1.0);
}

TEST_CASE("reward channel names round trip") {
  CHECK(parse_reward_channel(to_string(RewardChannel::kBlackBox)) == RewardChannel::kBlackBox);
  CHECK(parse_reward_channel("clip_like") == RewardChannel::kClipLike);
  CHECK_THROWS(parse_reward_channel("hps"));
}
