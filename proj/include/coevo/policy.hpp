#ifndef COEVO_POLICY_HPP_
#define COEVO_POLICY_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "coevo/domain.hpp"
#include "coevo/optim.hpp"
#include "coevo/params.hpp"
#include "coevo/tokenizer.hpp"

namespace coevo {

struct PolicyConfig {
  int num_prompts = kNumPrompts;
  int codebook_size = 64;
  int embed_dim = 16;
  int hidden_dim = 64;
  int seq_len = kTokensPerImage;
};

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 0.9;
};

/// Recurrent categorical policy over token grids:
///   h' = tanh(W_h h + W_e e(prev) + W_p p(prompt) + b),  logits = W_o h' + b_o.
/// Arrays (row-vector convention, x * W):
///   prompt_emb (P x E), token_emb ((K+1) x E, row K = begin-of-sequence),
///   w_h (H x H), w_e (E x H), w_p (E x H), b (H), w_o (H x K), b_o (K).
ParamBundle init_policy(const PolicyConfig& config, Rng& rng);
ParamBundle zero_policy(const PolicyConfig& config);

int policy_codebook_size(const ParamBundle& policy);
int bos_token(const ParamBundle& policy);

struct StepOutput {
  Array logits;  // K
  Array hidden;  // H
};

/// One recurrent step. `prev_token` may be bos_token(policy).
StepOutput step_logits(const Array& hidden, int prev_token, int prompt_id,
                       const ParamBundle& policy);

/// Teacher-forced logits for n sequences: returns (16n x K) in step-major
/// order (row t*n + i is position t of sequence i).
Var policy_logits(const VarMap& policy, std::span<const int> prompt_ids,
                  std::span<const int> tokens_flat);

/// Per-sequence log-probabilities, length n. Differentiable w.r.t. policy.
Var sequence_log_probs(const VarMap& policy, std::span<const int> prompt_ids,
                       std::span<const int> tokens_flat);

/// Σ_t log softmax(logits_t)[z_t] for one sequence.
double log_prob(const TokenSequence& seq, int prompt_id, const ParamBundle& policy);

/// Mean over sequences of Σ_t KL(π_θ(.|prefix) || π_ref(.|prefix)), exact
/// over the full K-way softmax at every position. Gradient flows to `policy`
/// only; the reference enters as constants.
Var sequence_kl(const VarMap& policy, const ParamBundle& reference,
                std::span<const int> prompt_ids, std::span<const int> tokens_flat);

/// KL(p || q) for two categorical distributions.
double categorical_kl(std::span<const double> p, std::span<const double> q);

/// Nucleus truncation: keep the smallest set of most-probable tokens whose
/// mass reaches top_p (ties by lower index), renormalized. Returns `probs`
/// unchanged when every token is kept.
std::vector<double> nucleus(std::span<const double> probs, double top_p);

struct Rollout {
  int prompt_id = 0;
  TokenSequence tokens;
  /// Per-position log-probabilities under the full, untruncated softmax.
  std::vector<double> token_log_probs;
  double log_prob = 0.0;
  std::uint64_t seed = 0;
};

/// Samples one sequence per (prompt_id, seed) pair. Each row draws from its
/// own generator, so results do not depend on batching.
std::vector<Rollout> sample_sequences(std::span<const int> prompt_ids,
                                      std::span<const std::uint64_t> seeds,
                                      const ParamBundle& policy, const SamplingConfig& sampling);

/// G rollouts for one prompt with seeds derive_seed({base, prompt_id, i}).
std::vector<Rollout> sample_rollouts(const Prompt& prompt, int group_size,
                                     const ParamBundle& policy, const SamplingConfig& sampling,
                                     std::uint64_t base_seed);
std::vector<Rollout> sample_rollouts(const Prompt& prompt, int group_size,
                                     const ParamBundle& policy, const SamplingConfig& sampling,
                                     Rng& rng);

/// Samples `n_samples` sequences per prompt from `policy` and returns the
/// mean analytic sequence KL to `reference`.
double kl_estimate(const ParamBundle& policy, const ParamBundle& reference,
                   std::span<const Prompt> prompts, int n_samples,
                   const SamplingConfig& sampling, Rng& rng);

struct SftConfig {
  int steps = 1500;
  int batch = 32;
  double lr = 1e-2;
};

/// One optimizer step on the mean per-token cross-entropy; returns the
/// pre-step loss.
double sft_step(ParamBundle& policy, std::span<const int> prompt_ids,
                std::span<const TokenSequence> targets, Optimizer& optimizer);

/// Teacher-forced next-token cross-entropy on ground-truth token grids,
/// minimized with Adam. Throws naming the step on divergence.
ParamBundle sft_pretrain(ParamBundle policy, std::span<const int> prompt_ids,
                         std::span<const TokenSequence> targets, const SftConfig& config, Rng& rng);

/// Mean per-token cross-entropy (nats) of the policy on the targets.
double per_token_cross_entropy(const ParamBundle& policy, std::span<const int> prompt_ids,
                               std::span<const TokenSequence> targets);

}  // namespace coevo

#endif  // COEVO_POLICY_HPP_
