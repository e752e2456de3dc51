#include "coevo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "coevo/optim.hpp"

namespace coevo {
namespace {

Array normal_array(Shape shape, double scale, Rng& rng) {
  Array a(std::move(shape));
  for (double& v : a.data()) v = scale * normal01(rng);
  return a;
}

void check_prompts(std::span<const int> prompt_ids, const Array& prompt_emb) {
  for (int p : prompt_ids) {
    if (p < 0 || static_cast<std::size_t>(p) >= prompt_emb.rows()) {
      throw std::out_of_range("policy: prompt id " + std::to_string(p) + " out of range");
    }
  }
}

// Projected prompt embeddings, (n x H); constant across positions.
Var prompt_term(const VarMap& policy, std::span<const int> prompt_ids) {
  return ad::matmul(ad::gather_rows(policy.at("prompt_emb"), prompt_ids), policy.at("w_p"));
}

// h' = tanh(e(prev) W_e + h W_h + p W_p + b). `hidden` may be null at t = 0.
Var recurrent_step(const VarMap& policy, const Var* hidden, Var prompt_proj,
                   std::span<const int> prev) {
  Var pre = ad::matmul(ad::gather_rows(policy.at("token_emb"), prev), policy.at("w_e"));
  if (hidden) pre = ad::add(pre, ad::matmul(*hidden, policy.at("w_h")));
  pre = ad::add_row(ad::add(pre, prompt_proj), policy.at("b"));
  return ad::tanh(pre);
}

Var output_logits(const VarMap& policy, Var hidden) {
  return ad::add_row(ad::matmul(hidden, policy.at("w_o")), policy.at("b_o"));
}

// Rearranges a step-major length-16n vector into (n x 16).
Var step_major_to_rows(Var v, std::size_t n, std::size_t len) {
  std::vector<std::size_t> src(n * len);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < len; ++t) src[i * len + t] = t * n + i;
  return ad::permute(v, src, {n, len});
}

Array log_softmax_rows(const Array& x) {
  Tape tape;
  return ad::log_softmax(tape.constant(x)).value();
}

}  // namespace

ParamBundle init_policy(const PolicyConfig& c, Rng& rng) {
  const std::size_t p = c.num_prompts, k = c.codebook_size, e = c.embed_dim, h = c.hidden_dim;
  ParamBundle b;
  b.set("prompt_emb", normal_array({p, e}, 1.0, rng));
  b.set("token_emb", normal_array({k + 1, e}, 1.0, rng));
  b.set("w_e", normal_array({e, h}, 1.0 / std::sqrt(static_cast<double>(e)), rng));
  b.set("w_p", normal_array({e, h}, 1.0 / std::sqrt(static_cast<double>(e)), rng));
  b.set("w_h", normal_array({h, h}, 0.5 / std::sqrt(static_cast<double>(h)), rng));
  b.set("b", Array({h}));
  b.set("w_o", normal_array({h, k}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
  b.set("b_o", Array({k}));
  return b;
}

ParamBundle zero_policy(const PolicyConfig& c) {
  const std::size_t p = c.num_prompts, k = c.codebook_size, e = c.embed_dim, h = c.hidden_dim;
  ParamBundle b;
  b.set("prompt_emb", Array({p, e}));
  b.set("token_emb", Array({k + 1, e}));
  b.set("w_e", Array({e, h}));
  b.set("w_p", Array({e, h}));
  b.set("w_h", Array({h, h}));
  b.set("b", Array({h}));
  b.set("w_o", Array({h, k}));
  b.set("b_o", Array({k}));
  return b;
}

int policy_codebook_size(const ParamBundle& policy) {
  return static_cast<int>(policy.get("b_o").size());
}

int bos_token(const ParamBundle& policy) { return policy_codebook_size(policy); }

StepOutput step_logits(const Array& hidden, int prev_token, int prompt_id,
                       const ParamBundle& policy) {
  const int k = policy_codebook_size(policy);
  if (prev_token < 0 || prev_token > k) {
    throw std::out_of_range("step_logits: token " + std::to_string(prev_token) +
                            " outside [0," + std::to_string(k) + "]");
  }
  Tape tape;
  VarMap pv = policy.bind_constant(tape);
  const int pid[] = {prompt_id};
  check_prompts(pid, policy.get("prompt_emb"));
  const int prev[] = {prev_token};
  Var h = tape.constant(hidden.reshaped({1, hidden.size()}));
  Var next = recurrent_step(pv, &h, prompt_term(pv, pid), prev);
  Var logits = output_logits(pv, next);
  return {logits.value().reshaped({static_cast<std::size_t>(k)}),
          next.value().reshaped({next.value().size()})};
}

Var policy_logits(const VarMap& policy, std::span<const int> prompt_ids,
                  std::span<const int> tokens_flat) {
  const std::size_t n = prompt_ids.size();
  const std::size_t len = kTokensPerImage;
  if (tokens_flat.size() != n * len) {
    throw ShapeError("policy_logits: expected " + std::to_string(n * len) + " tokens, got " +
                     std::to_string(tokens_flat.size()));
  }
  const Array& temb = policy.at("token_emb").value();
  const int bos = static_cast<int>(temb.rows()) - 1;
  for (int z : tokens_flat) {
    if (z < 0 || z >= bos) throw std::out_of_range("policy_logits: token " + std::to_string(z));
  }
  check_prompts(prompt_ids, policy.at("prompt_emb").value());

  Var pp = prompt_term(policy, prompt_ids);
  std::vector<Var> logits;
  std::vector<int> prev(n, bos);
  Var h;
  for (std::size_t t = 0; t < len; ++t) {
    if (t > 0)
      for (std::size_t i = 0; i < n; ++i) prev[i] = tokens_flat[i * len + t - 1];
    h = recurrent_step(policy, t == 0 ? nullptr : &h, pp, prev);
    logits.push_back(output_logits(policy, h));
  }
  return ad::concat_rows(logits);
}

Var sequence_log_probs(const VarMap& policy, std::span<const int> prompt_ids,
                       std::span<const int> tokens_flat) {
  const std::size_t n = prompt_ids.size(), len = kTokensPerImage;
  Var lp = ad::log_softmax(policy_logits(policy, prompt_ids, tokens_flat));
  std::vector<int> targets(n * len);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t i = 0; i < n; ++i) targets[t * n + i] = tokens_flat[i * len + t];
  return ad::sum_rows(step_major_to_rows(ad::pick(lp, targets), n, len));
}

double log_prob(const TokenSequence& seq, int prompt_id, const ParamBundle& policy) {
  Tape tape;
  const int pid[] = {prompt_id};
  return sequence_log_probs(policy.bind_constant(tape), pid, seq).value()[0];
}

Var sequence_kl(const VarMap& policy, const ParamBundle& reference,
                std::span<const int> prompt_ids, std::span<const int> tokens_flat) {
  Tape& tape = policy.at("w_o").tape();
  const std::size_t n = prompt_ids.size();
  Array ref_lp;
  {
    Tape ref_tape;
    ref_lp = ad::log_softmax(policy_logits(reference.bind_constant(ref_tape), prompt_ids, tokens_flat))
                 .value();
  }
  Var lp = ad::log_softmax(policy_logits(policy, prompt_ids, tokens_flat));
  Var per_pos = ad::sum_rows(ad::mul(ad::exp(lp), ad::sub(lp, tape.constant(std::move(ref_lp)))));
  return ad::scale(ad::sum(per_pos), 1.0 / static_cast<double>(n));
}

double categorical_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("categorical_kl: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

std::vector<double> nucleus(std::span<const double> probs, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("nucleus: top_p must be in (0,1]");
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size() && mass < top_p) mass += probs[order[keep++]];
  std::vector<double> out(probs.begin(), probs.end());
  if (keep == order.size()) return out;
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = probs[order[i]] / mass;
  return out;
}

std::vector<Rollout> sample_sequences(std::span<const int> prompt_ids,
                                      std::span<const std::uint64_t> seeds,
                                      const ParamBundle& policy, const SamplingConfig& sampling) {
  if (prompt_ids.size() != seeds.size()) throw ShapeError("sample_sequences: one seed per prompt");
  if (!(sampling.temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  const std::size_t n = prompt_ids.size(), len = kTokensPerImage;
  const int k = policy_codebook_size(policy);
  check_prompts(prompt_ids, policy.get("prompt_emb"));

  std::vector<Rollout> out(n);
  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].prompt_id = prompt_ids[i];
    out[i].seed = seeds[i];
    rngs.emplace_back(seeds[i]);
  }
  if (n == 0) return out;

  Tape tape;
  VarMap pv = policy.bind_constant(tape);
  Var pp = prompt_term(pv, prompt_ids);
  std::vector<int> prev(n, k);
  Var h;
  std::vector<double> probs(k);
  for (std::size_t t = 0; t < len; ++t) {
    h = recurrent_step(pv, t == 0 ? nullptr : &h, pp, prev);
    const Array logits = output_logits(pv, h).value();
    const Array lp = log_softmax_rows(logits);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = &logits[i * k];
      const double mx = *std::max_element(row, row + k);
      double z = 0.0;
      for (int j = 0; j < k; ++j) z += (probs[j] = std::exp((row[j] - mx) / sampling.temperature));
      for (int j = 0; j < k; ++j) probs[j] /= z;
      const std::vector<double> q = nucleus(probs, sampling.top_p);
      const double u = uniform01(rngs[i]);
      double cum = 0.0;
      int pick = -1;
      for (int j = 0; j < k; ++j) {
        if (q[j] <= 0.0) continue;
        cum += q[j];
        pick = j;
        if (u < cum) break;
      }
      out[i].tokens.push_back(pick);
      out[i].token_log_probs.push_back(lp[i * k + pick]);
      prev[i] = pick;
    }
  }
  for (auto& r : out) {
    double s = 0.0;
    for (double v : r.token_log_probs) s += v;
    r.log_prob = s;
  }
  return out;
}

std::vector<Rollout> sample_rollouts(const Prompt& prompt, int group_size,
                                     const ParamBundle& policy, const SamplingConfig& sampling,
                                     std::uint64_t base_seed) {
  if (group_size < 2) {
    throw std::invalid_argument("sample_rollouts: group size must be >= 2, got " +
                                std::to_string(group_size));
  }
  std::vector<int> ids(group_size, prompt.id);
  std::vector<std::uint64_t> seeds(group_size);
  for (int i = 0; i < group_size; ++i)
    seeds[i] = derive_seed({base_seed, static_cast<std::uint64_t>(prompt.id),
                            static_cast<std::uint64_t>(i)});
  return sample_sequences(ids, seeds, policy, sampling);
}

std::vector<Rollout> sample_rollouts(const Prompt& prompt, int group_size,
                                     const ParamBundle& policy, const SamplingConfig& sampling,
                                     Rng& rng) {
  return sample_rollouts(prompt, group_size, policy, sampling, rng());
}

double kl_estimate(const ParamBundle& policy, const ParamBundle& reference,
                   std::span<const Prompt> prompts, int n_samples,
                   const SamplingConfig& sampling, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("kl_estimate: n_samples must be >= 1");
  std::vector<int> ids;
  std::vector<std::uint64_t> seeds;
  const std::uint64_t base = rng();
  for (const Prompt& p : prompts)
    for (int i = 0; i < n_samples; ++i) {
      ids.push_back(p.id);
      seeds.push_back(derive_seed({base, static_cast<std::uint64_t>(p.id),
                                   static_cast<std::uint64_t>(i)}));
    }
  const auto rollouts = sample_sequences(ids, seeds, policy, sampling);
  std::vector<int> flat;
  for (const auto& r : rollouts) flat.insert(flat.end(), r.tokens.begin(), r.tokens.end());
  Tape tape;
  return sequence_kl(policy.bind_constant(tape), reference, ids, flat).value()[0];
}

double per_token_cross_entropy(const ParamBundle& policy, std::span<const int> prompt_ids,
                               std::span<const TokenSequence> targets) {
  Tape tape;
  const std::vector<int> flat = flatten_tokens(targets);
  Var lp = sequence_log_probs(policy.bind_constant(tape), prompt_ids, flat);
  return -ad::sum(lp).value()[0] / static_cast<double>(flat.size());
}

double sft_step(ParamBundle& policy, std::span<const int> prompt_ids,
                std::span<const TokenSequence> targets, Optimizer& optimizer) {
  const std::vector<int> flat = flatten_tokens(targets);
  Tape tape;
  VarMap pv = policy.bind(tape, "");
  Var loss = ad::scale(ad::sum(sequence_log_probs(pv, prompt_ids, flat)),
                       -1.0 / static_cast<double>(flat.size()));
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw std::runtime_error("cross-entropy became non-finite");
  tape.backward(loss);
  optimizer.step(policy, policy.gradients(tape, ""));
  return value;
}

ParamBundle sft_pretrain(ParamBundle policy, std::span<const int> prompt_ids,
                         std::span<const TokenSequence> targets, const SftConfig& config, Rng& rng) {
  if (prompt_ids.size() != targets.size() || prompt_ids.empty()) {
    throw std::invalid_argument("sft_pretrain: need matching, nonempty prompts and targets");
  }
  OptimizerConfig oc;
  oc.kind = OptimizerKind::kAdamW;
  oc.lr = config.lr;
  Optimizer opt(oc);
  const std::size_t batch = std::min<std::size_t>(config.batch, prompt_ids.size());
  for (int step = 0; step < config.steps; ++step) {
    std::vector<int> ids;
    std::vector<TokenSequence> seqs;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t j = uniform_index(rng, prompt_ids.size());
      ids.push_back(prompt_ids[j]);
      seqs.push_back(targets[j]);
    }
    try {
      sft_step(policy, ids, seqs, opt);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("sft_pretrain: step " + std::to_string(step) + ": " + e.what());
    }
  }
  return policy;
}

}  // namespace coevo
