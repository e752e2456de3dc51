#include "coevo/rewards.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace coevo {
namespace {

Array target_feature_rows(std::span<const int> prompt_ids, const FeatureExtractor& features) {
  std::vector<Image> renders;
  renders.reserve(prompt_ids.size());
  for (int id : prompt_ids) renders.push_back(render(Prompt::from_id(id)));
  return features.extract_rows(stack_images(renders));
}

Var cosine_rows(Var a, Var b) {
  Var dot = ad::sum_rows(ad::mul(a, b));
  Var na = ad::sqrt(ad::sum_rows(ad::square(a)));
  Var nb = ad::sqrt(ad::sum_rows(ad::square(b)));
  for (double v : na.value().data())
    if (v == 0.0) throw std::domain_error("clip_like_reward: zero-norm feature vector");
  for (double v : nb.value().data())
    if (v == 0.0) throw std::domain_error("clip_like_reward: zero-norm feature vector");
  return ad::div(dot, ad::mul(na, nb));
}

std::array<int, kHistogramBins> channel_histogram(const Image& img, int c) {
  std::array<int, kHistogramBins> h{};
  for (int y = 0; y < kImageSize; ++y)
    for (int x = 0; x < kImageSize; ++x) {
      const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
      h[std::min(kHistogramBins - 1, static_cast<int>(v * kHistogramBins))]++;
    }
  return h;
}

}  // namespace

RewardChannel parse_reward_channel(const std::string& name) {
  if (name == "clip_like") return RewardChannel::kClipLike;
  if (name == "blackbox") return RewardChannel::kBlackBox;
  throw std::invalid_argument("unknown reward channel '" + name + "' (expected clip_like|blackbox)");
}

std::string to_string(RewardChannel channel) {
  return channel == RewardChannel::kClipLike ? "clip_like" : "blackbox";
}

Var clip_like_reward(Var image_rows, std::span<const int> prompt_ids,
                     const FeatureExtractor& features) {
  Tape& tape = image_rows.tape();
  Var f = features.extract(image_rows);
  Var target = tape.constant(target_feature_rows(prompt_ids, features));
  return ad::scale(cosine_rows(f, target), 100.0);
}

double clip_like_reward(const Image& image, const Prompt& prompt, const FeatureExtractor& features) {
  Tape tape;
  const int id[] = {prompt.id};
  return clip_like_reward(tape.constant(image.pixels.reshaped({1, kPixelValues})), id, features)
      .value()[0];
}

double histogram_intersection(const Image& a, const Image& b) {
  double total = 0.0;
  for (int c = 0; c < kChannels; ++c) {
    const auto ha = channel_histogram(a, c);
    const auto hb = channel_histogram(b, c);
    int inter = 0;
    for (int k = 0; k < kHistogramBins; ++k) inter += std::min(ha[k], hb[k]);
    total += static_cast<double>(inter) / (kImageSize * kImageSize);
  }
  return total / kChannels;
}

double blackbox_reward(const Image& image, const Prompt& prompt) {
  return histogram_intersection(image, render(prompt));
}

RewardModel::RewardModel(RewardChannel channel, const FeatureExtractor& features)
    : channel_(channel), features_(&features) {
  std::vector<int> all(kNumPrompts);
  for (int i = 0; i < kNumPrompts; ++i) all[i] = i;
  targets_ = target_feature_rows(all, features);
}

std::vector<double> RewardModel::score(const Array& image_rows,
                                       std::span<const int> prompt_ids) const {
  if (image_rows.rows() != prompt_ids.size()) {
    throw ShapeError("RewardModel::score: " + std::to_string(image_rows.rows()) + " images for " +
                     std::to_string(prompt_ids.size()) + " prompts");
  }
  std::vector<double> out(prompt_ids.size());
  if (channel_ == RewardChannel::kBlackBox) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = blackbox_reward(image_from_row(image_rows, i), Prompt::from_id(prompt_ids[i]));
    return out;
  }
  const Array f = features_->extract_rows(image_rows);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int j = 0; j < kFeatureDim; ++j) {
      const double a = f.at(i, j), b = targets_.at(prompt_ids[i], j);
      dot += a * b;
      na += a * a;
      nb += b * b;
    }
    if (na == 0.0 || nb == 0.0) throw std::domain_error("clip_like_reward: zero-norm feature vector");
    out[i] = 100.0 * (dot / (std::sqrt(na) * std::sqrt(nb)));
  }
  return out;
}

RewardValue RewardModel::score(const Image& image, const Prompt& prompt) const {
  const int id[] = {prompt.id};
  return {score(image.pixels.reshaped({1, kPixelValues}), id)[0], differentiable()};
}

Var RewardModel::score(Var image_rows, std::span<const int> prompt_ids) const {
  if (channel_ == RewardChannel::kBlackBox) {
    throw OpaqueRewardError("blackbox reward exposes no gradient");
  }
  Tape& tape = image_rows.tape();
  Var f = features_->extract(image_rows);
  Array target({prompt_ids.size(), static_cast<std::size_t>(kFeatureDim)});
  for (std::size_t i = 0; i < prompt_ids.size(); ++i)
    for (int j = 0; j < kFeatureDim; ++j) target.at(i, j) = targets_.at(prompt_ids[i], j);
  return ad::scale(cosine_rows(f, tape.constant(std::move(target))), 100.0);
}

}  // namespace coevo
