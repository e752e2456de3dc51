#ifndef COEVO_REWARDS_HPP_
#define COEVO_REWARDS_HPP_

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "coevo/domain.hpp"

namespace coevo {

enum class RewardChannel { kClipLike, kBlackBox };

RewardChannel parse_reward_channel(const std::string& name);
std::string to_string(RewardChannel channel);

/// Raised when a caller asks the black-box channel for a gradient.
class OpaqueRewardError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct RewardValue {
  double score = 0.0;
  bool differentiable = false;
};

/// Both reward channels over the frozen feature space. Target features of
/// every prompt's render are cached at construction.
class RewardModel {
 public:
  RewardModel(RewardChannel channel, const FeatureExtractor& features);

  RewardChannel channel() const { return channel_; }
  bool differentiable() const { return channel_ == RewardChannel::kClipLike; }
  const FeatureExtractor& features() const { return *features_; }

  /// Scalar scores for (n x 768) image rows, one prompt id per row.
  std::vector<double> score(const Array& image_rows, std::span<const int> prompt_ids) const;
  RewardValue score(const Image& image, const Prompt& prompt) const;

  /// Differentiable scores, length n. Only for the clip-like channel;
  /// the black-box channel throws OpaqueRewardError.
  Var score(Var image_rows, std::span<const int> prompt_ids) const;

  /// Cached feature_extract(render(prompt)).
  const Array& target_features() const { return targets_; }

 private:
  RewardChannel channel_;
  const FeatureExtractor* features_;
  Array targets_;  // kNumPrompts x 16
};

/// 100 * cosine(features(image), features(render(prompt))).
double clip_like_reward(const Image& image, const Prompt& prompt, const FeatureExtractor& features);
/// Differentiable w.r.t. the image rows only.
Var clip_like_reward(Var image_rows, std::span<const int> prompt_ids,
                     const FeatureExtractor& features);

/// Per-channel 8-bin histogram intersection with render(prompt), averaged
/// over channels; in [0, 1].
double blackbox_reward(const Image& image, const Prompt& prompt);
double histogram_intersection(const Image& a, const Image& b);

inline constexpr int kHistogramBins = 8;

}  // namespace coevo

#endif  // COEVO_REWARDS_HPP_
