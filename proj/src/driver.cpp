#include "coevo/driver.hpp"

#include <numeric>
#include <stdexcept>

namespace coevo {
namespace {

enum SeedTag : std::uint64_t {
  kTagTokenizer = 0x70c,
  kTagSft = 0x5f7,
  kTagPolicyInit = 0x901,
  kTagDisc = 0xd15,
  kTagBatch = 0xba7c,
  kTagStage1 = 0x5e1,
  kTagStage2 = 0x5e2,
  kTagShift = 0x5b1f7,
  kTagQuality = 0x9a11,
  kTagDataset = 0xda7a,
};

std::uint64_t seed_for(const TrainConfig& c, std::uint64_t tag, long step = 0) {
  return derive_seed({c.seeds.seed, tag, static_cast<std::uint64_t>(step)});
}

void require(bool ok, const std::string& key, const std::string& rule) {
  if (!ok) throw std::invalid_argument(key + ": " + rule);
}

void check_optimizer(const OptimizerConfig& o, const std::string& key) {
  require(o.lr > 0.0, key + ".lr", "must be > 0");
  require(o.beta1 >= 0.0 && o.beta1 < 1.0, key + ".beta1", "must be in [0, 1)");
  require(o.beta2 >= 0.0 && o.beta2 < 1.0, key + ".beta2", "must be in [0, 1)");
  require(o.eps > 0.0, key + ".eps", "must be > 0");
  require(o.weight_decay >= 0.0, key + ".weight_decay", "must be >= 0");
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

template <typename F>
auto labeled(const std::string& stage, long step, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw std::runtime_error("step " + std::to_string(step) + ", " + stage + ": " + e.what());
  }
}

struct ScoredGroups {
  std::vector<std::vector<Rollout>> rollouts;
  std::vector<std::vector<double>> rewards;
};

ScoredGroups sample_and_score(std::span<const int> ids, const ParamBundle& sampler,
                              const ParamBundle& decoder, const Array& codebook,
                              const Environment& env, const TrainConfig& config,
                              std::uint64_t base_seed) {
  ScoredGroups out;
  const int g = config.stage1.group_size;
  std::vector<int> flat, per_image;
  for (int id : ids) {
    auto group = sample_rollouts(Prompt::from_id(id), g, sampler, config.sampling, base_seed);
    for (const auto& r : group) {
      flat.insert(flat.end(), r.tokens.begin(), r.tokens.end());
      per_image.push_back(id);
    }
    out.rollouts.push_back(std::move(group));
  }
  const auto scores = env.reward().score(decode_rows(flat, decoder, codebook), per_image);
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.rewards.emplace_back(scores.begin() + i * g, scores.begin() + (i + 1) * g);
  return out;
}

}  // namespace

TrainMode parse_train_mode(const std::string& name) {
  if (name == "sft") return TrainMode::kSft;
  if (name == "policy_only") return TrainMode::kPolicyOnly;
  if (name == "decoder_only") return TrainMode::kDecoderOnly;
  if (name == "full") return TrainMode::kFull;
  throw std::invalid_argument("unknown mode '" + name +
                              "' (expected sft|policy_only|decoder_only|full)");
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSft: return "sft";
    case TrainMode::kPolicyOnly: return "policy_only";
    case TrainMode::kDecoderOnly: return "decoder_only";
    case TrainMode::kFull: return "full";
  }
  return "?";
}

void validate(const TrainConfig& c) {
  require(c.domain.train_images >= 0, "domain.train_images", "must be >= 0");
  require(c.tokenizer.codebook_size >= 2, "tokenizer.codebook_size", "must be >= 2");
  require(c.tokenizer.latent_dim >= 1, "tokenizer.latent_dim", "must be >= 1");
  require(c.tokenizer.decoder_hidden >= 1, "tokenizer.decoder_hidden", "must be >= 1");
  require(c.tokenizer.steps >= 0, "tokenizer.steps", "must be >= 0");
  require(c.tokenizer.batch >= 1, "tokenizer.batch", "must be >= 1");
  require(c.tokenizer.lr > 0.0, "tokenizer.lr", "must be > 0");
  require(c.policy.codebook_size == c.tokenizer.codebook_size, "policy.codebook_size",
          "must equal tokenizer.codebook_size");
  require(c.policy.embed_dim >= 1, "policy.embed_dim", "must be >= 1");
  require(c.policy.hidden_dim >= 1, "policy.hidden_dim", "must be >= 1");
  require(c.policy.seq_len == kTokensPerImage, "policy.seq_len", "must be 16");
  require(c.sampling.temperature > 0.0, "policy.temperature", "must be > 0");
  require(c.sampling.top_p > 0.0 && c.sampling.top_p <= 1.0, "policy.top_p", "must be in (0, 1]");
  require(c.sft.steps >= 0, "policy.sft_steps", "must be >= 0");
  require(c.sft.batch >= 1, "policy.sft_batch", "must be >= 1");
  require(c.sft.lr > 0.0, "policy.sft_lr", "must be > 0");
  require(c.stage1.group_size >= 2, "stage1.group_size", "G >= 2");
  require(c.stage1.clip_eps > 0.0 && c.stage1.clip_eps < 1.0, "stage1.clip_eps", "must be in (0, 1)");
  require(c.stage1.kl_beta >= 0.0, "stage1.kl_beta", "must be >= 0");
  require(c.stage1.sigma_floor > 0.0, "stage1.sigma_floor", "must be > 0");
  check_optimizer(c.stage1.optimizer, "stage1.optimizer");
  for (auto [v, k] : {std::pair{c.stage2.lambda_r, "stage2.lambda_r"},
                      std::pair{c.stage2.lambda_g, "stage2.lambda_g"},
                      std::pair{c.stage2.lambda_c, "stage2.lambda_c"},
                      std::pair{c.stage2.lambda_d, "stage2.lambda_d"}})
    require(v >= 0.0, k, "must be >= 0");
  require(c.stage2.lambda_r + c.stage2.lambda_g + c.stage2.lambda_c + c.stage2.lambda_d > 0.0,
          "stage2", "at least one loss weight must be nonzero");
  require(c.stage2.tau > 0.0, "stage2.tau", "must be > 0");
  require(c.stage2.disc_hidden >= 1, "stage2.disc_hidden", "must be >= 1");
  check_optimizer(c.stage2.decoder_optimizer, "stage2.decoder_optimizer");
  check_optimizer(c.stage2.disc_optimizer, "stage2.disc_optimizer");
  require(c.driver.total_steps >= 0, "driver.total_steps", "must be >= 0");
  require(c.driver.batch_prompts >= 1, "driver.batch_prompts", "must be >= 1");
  for (auto [v, k] : {std::pair{c.driver.policy_ema_decay, "driver.policy_ema_decay"},
                      std::pair{c.driver.decoder_ema_decay, "driver.decoder_ema_decay"},
                      std::pair{c.driver.reference_decay, "driver.reference_decay"}})
    require(v >= 0.0 && v < 1.0, k, "must be in [0, 1)");
  require(c.driver.decoder_every_n >= 1, "driver.decoder_every_n", "must be >= 1");
  require(c.driver.checkpoint_every >= 0, "driver.checkpoint_every", "must be >= 0");
  require(c.diagnostics.probe_every >= 1, "diagnostics.probe_every", "must be >= 1");
  require(c.diagnostics.log_every >= 1, "diagnostics.log_every", "must be >= 1");
  require(c.diagnostics.probe_samples >= 1, "diagnostics.probe_samples", "must be >= 1");
  require(c.diagnostics.quality_samples >= kFeatureDim + 1, "diagnostics.quality_samples",
          "must be >= 17");
  require(c.diagnostics.smoothing >= 0.0, "diagnostics.smoothing", "must be >= 0");
}

std::vector<Example> make_dataset(const TrainConfig& config) {
  if (config.domain.train_images == 0) return exhaustive_dataset();
  Rng rng(seed_for(config, kTagDataset));
  return dataset(config.domain.train_images, rng);
}

Tokenizer pretrain_stage(const TrainConfig& config, const std::vector<Example>& data) {
  Rng rng(seed_for(config, kTagTokenizer));
  return labeled("tokenizer-pretrain", 0, [&] { return pretrain_tokenizer(data, config.tokenizer, rng); });
}

Environment::Environment(const TrainConfig& config, Tokenizer tokenizer)
    : data_(make_dataset(config)), tokenizer_(std::move(tokenizer)) {
  if (tokenizer_.codebook_size() != config.policy.codebook_size) {
    throw std::invalid_argument("tokenizer codebook size does not match policy.codebook_size");
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    prompt_ids_.push_back(data_[i].prompt.id);
    by_prompt_.emplace(data_[i].prompt.id, i);
  }
  gt_tokens_ = tokenize_all(data_, tokenizer_);
  features_ = std::make_unique<FeatureExtractor>(config.seeds.feature_seed);
  reward_ = std::make_unique<RewardModel>(config.reward_channel, *features_);
  gt_hist_ = token_histogram(gt_tokens_, tokenizer_.codebook_size());
  std::vector<Image> images;
  for (const auto& e : data_) images.push_back(e.image);
  real_features_ = features_->extract_rows(stack_images(images));
  baseline_kl_ = real_baseline(data_, tokenizer_, config.diagnostics.baseline_split_seed,
                               config.diagnostics.smoothing);
  gt_entropy_ = codebook_entropy(gt_hist_, config.diagnostics.smoothing);
}

std::size_t Environment::example_index(int prompt_id) const {
  auto it = by_prompt_.find(prompt_id);
  if (it == by_prompt_.end()) {
    throw std::out_of_range("prompt " + std::to_string(prompt_id) + " is not in the dataset");
  }
  return it->second;
}

ParamBundle sft_stage(const TrainConfig& config, const Environment& env) {
  Rng init_rng(seed_for(config, kTagPolicyInit));
  ParamBundle policy = init_policy(config.policy, init_rng);
  Rng rng(seed_for(config, kTagSft));
  return labeled("sft", 0, [&] {
    return sft_pretrain(std::move(policy), env.prompt_ids(), env.gt_tokens(), config.sft, rng);
  });
}

TrainState init_state(const TrainConfig& config, const Environment& env, const ParamBundle& sft_policy) {
  TrainState s;
  s.policy = s.reference = s.policy_ema = sft_policy;
  s.decoder = s.teacher = env.tokenizer().decoder;
  s.encoder = env.tokenizer().encoder;
  s.codebook = env.tokenizer().codebook;
  Rng rng(seed_for(config, kTagDisc));
  s.discriminator = init_discriminator(config.stage2.disc_hidden, rng);
  s.policy_opt = Optimizer(config.stage1.optimizer);
  s.decoder_opt = Optimizer(config.stage2.decoder_optimizer);
  s.disc_opt = Optimizer(config.stage2.disc_optimizer);
  return s;
}

std::vector<int> batch_prompts(const TrainConfig& config, const Environment& env, long step) {
  Rng rng(seed_for(config, kTagBatch, step));
  std::vector<int> ids(config.driver.batch_prompts);
  for (int& id : ids) id = env.prompt_ids()[uniform_index(rng, env.prompt_ids().size())];
  return ids;
}

Scalars run_round(TrainState& state, const Environment& env, std::span<const int> ids,
                  const TrainConfig& config) {
  const long step = state.step;
  const TrainMode mode = config.driver.mode;
  const Array& codebook = state.codebook.get("entries");
  Scalars out;

  std::vector<TokenSequence> gt;
  std::vector<Image> gt_images;
  for (int id : ids) {
    const std::size_t i = env.example_index(id);
    gt.push_back(env.gt_tokens()[i]);
    gt_images.push_back(env.data()[i].image);
  }

  const bool policy_moves = mode != TrainMode::kDecoderOnly;
  const bool decoder_moves = (mode == TrainMode::kDecoderOnly || mode == TrainMode::kFull) &&
                             step % config.driver.decoder_every_n == 0;

  if (mode == TrainMode::kSft) {
    out["sft_loss"] = labeled("sft", step, [&] { return sft_step(state.policy, ids, gt, state.policy_opt); });
  } else {
    ScoredGroups s1;
    if (policy_moves || !config.driver.stage2_from_ema) {
      s1 = labeled("sampling", step, [&] {
        return sample_and_score(ids, state.policy, state.decoder, codebook, env, config,
                                seed_for(config, kTagStage1, step));
      });
      std::vector<double> all;
      for (const auto& r : s1.rewards) all.insert(all.end(), r.begin(), r.end());
      out["reward_mean"] = mean_of(all);
    }
    if (policy_moves) {
      const PolicyStepStats ps = labeled("stage1", step, [&] {
        std::vector<RolloutGroup> groups(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
          groups[i].prompt = Prompt::from_id(ids[i]);
          groups[i].rollouts = s1.rollouts[i];
          groups[i].rewards = s1.rewards[i];
          assign_advantages(groups[i], config.stage1);
        }
        return policy_step(groups, state.policy, state.reference, config.stage1, state.policy_opt);
      });
      out["policy_loss"] = ps.loss;
      out["policy_kl"] = ps.kl;
      out["clip_fraction"] = ps.clip_fraction;
      out["policy_grad_norm"] = ps.grad_norm;
    }
    if (decoder_moves) {
      ScoredGroups s2 = config.driver.stage2_from_ema
                            ? labeled("sampling", step, [&] {
                                return sample_and_score(ids, state.policy_ema, state.decoder,
                                                        codebook, env, config,
                                                        seed_for(config, kTagStage2, step));
                              })
                            : s1;
      DecoderBatch batch;
      batch.prompt_ids.assign(ids.begin(), ids.end());
      for (auto& group : s2.rollouts) {
        std::vector<TokenSequence> seqs;
        for (auto& r : group) seqs.push_back(std::move(r.tokens));
        batch.rollouts.push_back(std::move(seqs));
      }
      batch.rewards = s2.rewards;
      batch.x_gt_rows = stack_images(gt_images);
      batch.z_gt = gt;
      DecoderStepStats ds = labeled("stage2", step, [&] {
        return decoder_step(batch, state.decoder, state.teacher, state.discriminator, codebook,
                            config.stage2, env.reward(), state.decoder_opt);
      });
      const DiscriminatorStats dd = labeled("discriminator", step, [&] {
        return discriminator_step(batch.x_gt_rows, ds.fake_rows, state.discriminator, state.disc_opt);
      });
      std::vector<double> all;
      for (const auto& r : s2.rewards) all.insert(all.end(), r.begin(), r.end());
      out["stage2_reward_mean"] = mean_of(all);
      out["decoder_loss"] = ds.loss;
      out["reward_bp"] = ds.reward_bp;
      out["rank_gan"] = ds.rank_gan;
      out["recon"] = ds.recon;
      out["consist"] = ds.consist;
      out["max_weight"] = ds.max_weight;
      out["disc_loss"] = dd.loss;
      out["disc_accuracy"] = dd.accuracy;
      if (ds.reward_term_disabled) out["reward_term_disabled"] = 1.0;
    }
  }

  if (policy_moves) {
    ema_update(state.policy_ema, state.policy, config.driver.policy_ema_decay);
    if (config.driver.reference_ema) ema_update(state.reference, state.policy, config.driver.reference_decay);
  }
  if (decoder_moves) ema_update(state.teacher, state.decoder, config.driver.decoder_ema_decay);
  ++state.step;
  return out;
}

Scalars probe(const TrainState& state, const Environment& env, const TrainConfig& config) {
  ProbeConfig pc;
  pc.samples = config.diagnostics.probe_samples;
  pc.smoothing = config.diagnostics.smoothing;
  const ShiftReport shift = shift_probe(state.policy, env.gt_histogram(), env.prompt_ids(),
                                        config.sampling, pc, seed_for(config, kTagShift));
  const QualityReport q = quality_probe(state.policy, state.decoder, state.codebook.get("entries"),
                                        env.reward(), env.real_features(), env.prompt_ids(),
                                        config.diagnostics.quality_samples, config.sampling,
                                        seed_for(config, kTagQuality));
  return {{"kl_nats", shift.kl_nats},
          {"entropy_bits", shift.entropy_bits},
          {"baseline_kl", env.baseline_kl()},
          {"mean_reward", q.mean_reward},
          {"frechet", q.frechet}};
}

std::vector<long> cadence(const TrainConfig& config, const std::string& kind) {
  const long total = config.driver.total_steps;
  std::vector<long> steps;
  if (kind == "train") {
    for (long s = config.diagnostics.log_every; s <= total; s += config.diagnostics.log_every)
      steps.push_back(s);
  } else if (kind == "shift_probe") {
    for (long s = 0; s <= total; s += config.diagnostics.probe_every) steps.push_back(s);
    if (steps.back() != total) steps.push_back(total);
  } else {
    throw std::invalid_argument("cadence: unknown kind '" + kind + "'");
  }
  return steps;
}

void post_train(TrainState& state, const Environment& env, const TrainConfig& config,
                const TrainHooks& hooks) {
  const long total = config.driver.total_steps;
  auto emit = [&](const MetricsRow& row) {
    if (hooks.metrics) hooks.metrics(row);
  };
  auto probe_now = [&]() {
    MetricsRow row{state.step, "shift_probe", probe(state, env, config)};
    emit(row);
    return hooks.stop && hooks.stop(row);
  };
  if (state.step == 0 && probe_now()) {
    if (hooks.checkpoint) hooks.checkpoint(state);
    return;
  }
  while (state.step < total) {
    const auto ids = batch_prompts(config, env, state.step);
    Scalars values = run_round(state, env, ids, config);
    if (state.step % config.diagnostics.log_every == 0) emit({state.step, "train", std::move(values)});
    if (state.step % config.diagnostics.probe_every == 0 || state.step == total) {
      if (probe_now()) break;
    }
    if (hooks.checkpoint && config.driver.checkpoint_every > 0 &&
        state.step % config.driver.checkpoint_every == 0 && state.step != total) {
      hooks.checkpoint(state);
    }
  }
  if (hooks.checkpoint) hooks.checkpoint(state);
}

}  // namespace coevo
