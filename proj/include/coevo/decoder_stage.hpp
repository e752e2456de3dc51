#ifndef COEVO_DECODER_STAGE_HPP_
#define COEVO_DECODER_STAGE_HPP_

#include <span>
#include <string>
#include <vector>

#include "coevo/optim.hpp"
#include "coevo/rewards.hpp"
#include "coevo/tokenizer.hpp"

namespace coevo {

enum class ConsistencyMetric { kL2, kFeature };

ConsistencyMetric parse_consistency_metric(const std::string& name);
std::string to_string(ConsistencyMetric metric);

struct DecoderLossConfig {
  double lambda_r = 1.0;  // reconstruction anchor
  double lambda_g = 0.5;  // Rank-GAN
  double lambda_c = 1.0;  // EMA consistency
  double lambda_d = 0.1;  // reward back-propagation
  double tau = 0.1;
  ConsistencyMetric consistency_metric = ConsistencyMetric::kL2;
  OptimizerConfig decoder_optimizer{OptimizerKind::kSgd, 1e-2, 0.5, 0.9, 1e-8, 0.05};
  OptimizerConfig disc_optimizer{OptimizerKind::kSgd, 1e-2, 0.5, 0.9, 1e-8, 0.0};
  int disc_hidden = 32;
};

/// w_i = G * softmax(r / tau)_i with G = rewards.size().
std::vector<double> rank_weights(std::span<const double> rewards, double tau);

/// Per-patch MLP (48 -> hidden -> 1) whose patch logits are averaged into
/// one logit per image. Arrays: w1 (48 x h), b1 (h), w2 (h x 1), b2 (1).
ParamBundle init_discriminator(int hidden, Rng& rng);
/// Same shapes with w2 = b2 = 0, so every logit is exactly zero.
ParamBundle zero_output_discriminator(int hidden, Rng& rng);

/// (n x 768) image rows -> n logits.
Var discriminator_logits(Var image_rows, const VarMap& disc);
Array discriminator_logits(const Array& image_rows, const ParamBundle& disc);

/// (1/G) Σ w_i · softplus(-Disc(x_i)): the non-saturating generator loss,
/// reward-weighted. The discriminator enters as constants.
Var rank_gan_loss(Var decoded_rows, std::span<const double> weights, const ParamBundle& disc);
/// Uniform-weight generator loss: mean softplus(-Disc(x_i)).
Var vanilla_gan_loss(Var decoded_rows, const ParamBundle& disc);

/// -mean R(x_i, y_i). Requires a differentiable reward channel.
Var reward_bp_loss(Var decoded_rows, std::span<const int> prompt_ids, const RewardModel& reward);

/// l2: mean squared pixel gap to the teacher decode. feature: mean over
/// images of the squared feature-space gap. The teacher output is wrapped in
/// stop_gradient.
Var consistency_loss(std::span<const int> tokens, Var decoded_rows, const VarMap& teacher,
                     Var codebook, ConsistencyMetric metric, const FeatureExtractor& features);

/// mean |x_gt - D(z_gt)| + mean softplus(-Disc(D(z_gt))).
Var recon_anchor_loss(const Array& x_gt_rows, Var recon_rows, const ParamBundle& disc);

/// Detached inputs to one Stage-2 update: rollouts grouped by prompt plus
/// the ground-truth images and codes of the same prompts.
struct DecoderBatch {
  std::vector<int> prompt_ids;                 // one per group
  std::vector<std::vector<TokenSequence>> rollouts;  // G per group
  std::vector<std::vector<double>> rewards;          // G per group
  Array x_gt_rows;                             // (B x 768)
  std::vector<TokenSequence> z_gt;             // B
};

struct DecoderLossTerms {
  Var total;
  double reward_bp = 0.0;
  double rank_gan = 0.0;
  double recon = 0.0;
  double consist = 0.0;
  double mean_weight = 0.0;
  double max_weight = 0.0;
  bool reward_term_disabled = false;  // black-box channel forces lambda_d = 0
  Array fake_rows;                    // decoded rollouts, for the discriminator
};

/// λ_d·reward + λ_g·rank_gan + λ_r·recon + λ_c·consist, summed in that order
/// over the terms with nonzero weight. Throws if every weight is zero.
DecoderLossTerms decoder_loss(const VarMap& decoder, const DecoderBatch& batch,
                              const ParamBundle& teacher, const ParamBundle& disc,
                              const Array& codebook, const DecoderLossConfig& config,
                              const RewardModel& reward);

double decoder_objective(const ParamBundle& decoder, const DecoderBatch& batch,
                         const ParamBundle& teacher, const ParamBundle& disc,
                         const Array& codebook, const DecoderLossConfig& config,
                         const RewardModel& reward);

struct DecoderStepStats {
  double loss = 0.0;
  double reward_bp = 0.0;
  double rank_gan = 0.0;
  double recon = 0.0;
  double consist = 0.0;
  double mean_weight = 0.0;
  double max_weight = 0.0;
  bool reward_term_disabled = false;
  Array fake_rows;
};

/// One optimizer step on the decoder only.
DecoderStepStats decoder_step(const DecoderBatch& batch, ParamBundle& decoder,
                              const ParamBundle& teacher, const ParamBundle& disc,
                              const Array& codebook, const DecoderLossConfig& config,
                              const RewardModel& reward, Optimizer& optimizer);

struct DiscriminatorStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// softplus(-Disc(real)) + softplus(Disc(fake)), each averaged over its batch.
Var discriminator_loss(const Array& real_rows, const Array& fake_rows, const VarMap& disc);

/// One step on the binary logistic loss (real -> high logit). Reports the
/// pre-step loss and accuracy.
DiscriminatorStats discriminator_step(const Array& real_rows, const Array& fake_rows,
                                      ParamBundle& disc, Optimizer& optimizer);

double discriminator_accuracy(const Array& real_rows, const Array& fake_rows,
                              const ParamBundle& disc);

}  // namespace coevo

#endif  // COEVO_DECODER_STAGE_HPP_
