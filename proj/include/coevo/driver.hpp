#ifndef COEVO_DRIVER_HPP_
#define COEVO_DRIVER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "coevo/decoder_stage.hpp"
#include "coevo/diagnostics.hpp"
#include "coevo/grpo.hpp"
#include "coevo/policy.hpp"
#include "coevo/rewards.hpp"
#include "coevo/tokenizer.hpp"

namespace coevo {

enum class TrainMode { kSft, kPolicyOnly, kDecoderOnly, kFull };

TrainMode parse_train_mode(const std::string& name);
std::string to_string(TrainMode mode);

struct DomainConfig {
  int train_images = 0;  // 0: every prompt exactly once
};

struct DriverConfig {
  TrainMode mode = TrainMode::kFull;
  int total_steps = 3000;
  int batch_prompts = 4;
  double policy_ema_decay = 0.999;
  double decoder_ema_decay = 0.999;
  bool reference_ema = true;
  double reference_decay = 0.999;
  bool stage2_from_ema = true;
  int decoder_every_n = 1;
  int checkpoint_every = 0;  // 0: final checkpoint only
};

struct DiagnosticsConfig {
  int probe_every = 100;
  int log_every = 10;
  int probe_samples = 2048;
  int quality_samples = 256;
  double smoothing = 0.5 / 64;
  std::uint64_t baseline_split_seed = 17;
  bool record_wall_time = true;
};

struct SeedConfig {
  std::uint64_t seed = 0;
  std::uint64_t feature_seed = 1234;
};

struct PathConfig {
  std::string out_dir = "runs/default";
};

struct TrainConfig {
  DomainConfig domain;
  TokenizerConfig tokenizer;
  PolicyConfig policy;
  SamplingConfig sampling;
  SftConfig sft;
  RewardChannel reward_channel = RewardChannel::kClipLike;
  GrpoConfig stage1;
  DecoderLossConfig stage2;
  DriverConfig driver;
  DiagnosticsConfig diagnostics;
  SeedConfig seeds;
  PathConfig paths;
};

/// Throws std::invalid_argument naming the offending key.
void validate(const TrainConfig& config);

/// Immutable inputs shared by every stage: data, frozen tokenizer, feature
/// space, reward, and ground-truth token statistics.
class Environment {
 public:
  Environment(const TrainConfig& config, Tokenizer tokenizer);
  Environment(const Environment&) = delete;
  Environment& operator=(const Environment&) = delete;

  const std::vector<Example>& data() const { return data_; }
  const std::vector<int>& prompt_ids() const { return prompt_ids_; }
  const std::vector<TokenSequence>& gt_tokens() const { return gt_tokens_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const FeatureExtractor& features() const { return *features_; }
  const RewardModel& reward() const { return *reward_; }
  const TokenHistogram& gt_histogram() const { return gt_hist_; }
  const Array& real_features() const { return real_features_; }
  double baseline_kl() const { return baseline_kl_; }
  double gt_entropy_bits() const { return gt_entropy_; }

  /// Index into data() of the example for `prompt_id`.
  std::size_t example_index(int prompt_id) const;

 private:
  std::vector<Example> data_;
  std::vector<int> prompt_ids_;
  std::map<int, std::size_t> by_prompt_;
  Tokenizer tokenizer_;
  std::vector<TokenSequence> gt_tokens_;
  std::unique_ptr<FeatureExtractor> features_;
  std::unique_ptr<RewardModel> reward_;
  TokenHistogram gt_hist_;
  Array real_features_;
  double baseline_kl_ = 0.0;
  double gt_entropy_ = 0.0;
};

std::vector<Example> make_dataset(const TrainConfig& config);
Tokenizer pretrain_stage(const TrainConfig& config, const std::vector<Example>& data);
ParamBundle sft_stage(const TrainConfig& config, const Environment& env);

struct TrainState {
  ParamBundle policy, reference, policy_ema;
  ParamBundle decoder, teacher, discriminator;
  ParamBundle encoder, codebook;
  long step = 0;
  Optimizer policy_opt{OptimizerConfig{}};
  Optimizer decoder_opt{OptimizerConfig{}};
  Optimizer disc_opt{OptimizerConfig{}};
};

/// Copies the SFT policy into policy/reference/policy_ema and the pretrained
/// decoder into decoder/teacher.
TrainState init_state(const TrainConfig& config, const Environment& env, const ParamBundle& sft_policy);

using Scalars = std::map<std::string, double>;

/// B prompt ids for `step`, a pure function of the seed and step.
std::vector<int> batch_prompts(const TrainConfig& config, const Environment& env, long step);

/// One pass of sampling, Stage 1, Stage 2, and EMA updates, gated by mode.
/// Increments state.step. Errors carry the step and stage.
Scalars run_round(TrainState& state, const Environment& env, std::span<const int> prompt_ids,
                  const TrainConfig& config);

/// Shift and quality probes of the current state.
Scalars probe(const TrainState& state, const Environment& env, const TrainConfig& config);

struct MetricsRow {
  long step = 0;
  std::string kind;
  Scalars values;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

/// Steps at which a row of `kind` ("train" or "shift_probe") is emitted.
std::vector<long> cadence(const TrainConfig& config, const std::string& kind);

struct TrainHooks {
  MetricsSink metrics;
  /// Polled after every probe; returning true ends the run early.
  std::function<bool(const MetricsRow&)> stop;
  /// Called at the checkpoint cadence and once at the end.
  std::function<void(const TrainState&)> checkpoint;
};

/// Runs the post-training loop from `state` until config.driver.total_steps.
void post_train(TrainState& state, const Environment& env, const TrainConfig& config,
                const TrainHooks& hooks);

}  // namespace coevo

#endif  // COEVO_DRIVER_HPP_
