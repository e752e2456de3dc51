#include "coevo/decoder_stage.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace coevo {

ConsistencyMetric parse_consistency_metric(const std::string& name) {
  if (name == "l2") return ConsistencyMetric::kL2;
  if (name == "feature") return ConsistencyMetric::kFeature;
  throw std::invalid_argument("unknown consistency_metric '" + name + "' (expected l2|feature)");
}

std::string to_string(ConsistencyMetric metric) {
  return metric == ConsistencyMetric::kL2 ? "l2" : "feature";
}

std::vector<double> rank_weights(std::span<const double> rewards, double tau) {
  if (rewards.empty()) throw std::invalid_argument("rank_weights: no rewards");
  if (!(tau > 0.0)) throw std::invalid_argument("rank_weights: tau must be > 0");
  for (double r : rewards)
    if (!std::isfinite(r)) throw std::invalid_argument("rank_weights: non-finite reward");
  const double mx = *std::max_element(rewards.begin(), rewards.end());
  std::vector<double> w(rewards.size());
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) z += (w[i] = std::exp((rewards[i] - mx) / tau));
  const double g = static_cast<double>(rewards.size());
  for (double& v : w) v = g * (v / z);
  return w;
}

ParamBundle init_discriminator(int hidden, Rng& rng) {
  const std::size_t h = hidden;
  ParamBundle b;
  Array w1({static_cast<std::size_t>(kPatchValues), h});
  for (double& v : w1.data()) v = normal01(rng) / std::sqrt(static_cast<double>(kPatchValues));
  Array w2({h, 1});
  for (double& v : w2.data()) v = 0.1 * normal01(rng) / std::sqrt(static_cast<double>(h));
  b.set("w1", std::move(w1));
  b.set("b1", Array({h}));
  b.set("w2", std::move(w2));
  b.set("b2", Array({1}));
  return b;
}

ParamBundle zero_output_discriminator(int hidden, Rng& rng) {
  ParamBundle b = init_discriminator(hidden, rng);
  b.set("w2", Array({static_cast<std::size_t>(hidden), 1}));
  return b;
}

Var discriminator_logits(Var image_rows, const VarMap& disc) {
  const std::size_t n = image_rows.value().rows();
  Var h = ad::tanh(ad::add_row(ad::matmul(patchify(image_rows), disc.at("w1")), disc.at("b1")));
  Var patch_logits = ad::add_row(ad::matmul(h, disc.at("w2")), disc.at("b2"));
  return ad::mean_rows(ad::reshape(patch_logits, {n, static_cast<std::size_t>(kTokensPerImage)}));
}

Array discriminator_logits(const Array& image_rows, const ParamBundle& disc) {
  Tape tape;
  return discriminator_logits(tape.constant(image_rows), disc.bind_constant(tape)).value();
}

Var rank_gan_loss(Var decoded_rows, std::span<const double> weights, const ParamBundle& disc) {
  Tape& tape = decoded_rows.tape();
  if (weights.size() != decoded_rows.value().rows()) {
    throw ShapeError("rank_gan_loss: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(decoded_rows.value().rows()) + " images");
  }
  Var logits = discriminator_logits(decoded_rows, disc.bind_constant(tape));
  Var per_sample = ad::softplus(ad::neg(logits));
  Var w = tape.constant(Array::vector(std::vector<double>(weights.begin(), weights.end())));
  return ad::scale(ad::sum(ad::mul(w, per_sample)), 1.0 / static_cast<double>(weights.size()));
}

Var vanilla_gan_loss(Var decoded_rows, const ParamBundle& disc) {
  Tape& tape = decoded_rows.tape();
  Var logits = discriminator_logits(decoded_rows, disc.bind_constant(tape));
  const std::size_t n = logits.value().size();
  return ad::scale(ad::sum(ad::softplus(ad::neg(logits))), 1.0 / static_cast<double>(n));
}

Var reward_bp_loss(Var decoded_rows, std::span<const int> prompt_ids, const RewardModel& reward) {
  return ad::neg(ad::mean(reward.score(decoded_rows, prompt_ids)));
}

Var consistency_loss(std::span<const int> tokens, Var decoded_rows, const VarMap& teacher,
                     Var codebook, ConsistencyMetric metric, const FeatureExtractor& features) {
  Var target = ad::stop_gradient(decode(tokens, teacher, codebook));
  if (metric == ConsistencyMetric::kL2) {
    return ad::mean(ad::square(ad::sub(decoded_rows, target)));
  }
  Var gap = ad::sub(features.extract(decoded_rows), features.extract(target));
  return ad::mean(ad::sum_rows(ad::square(gap)));
}

Var recon_anchor_loss(const Array& x_gt_rows, Var recon_rows, const ParamBundle& disc) {
  Tape& tape = recon_rows.tape();
  Var l1 = ad::scale(ad::l1_norm(ad::sub(tape.constant(x_gt_rows), recon_rows)),
                     1.0 / static_cast<double>(x_gt_rows.size()));
  return ad::add(l1, vanilla_gan_loss(recon_rows, disc));
}

DecoderLossTerms decoder_loss(const VarMap& decoder, const DecoderBatch& batch,
                              const ParamBundle& teacher, const ParamBundle& disc,
                              const Array& codebook, const DecoderLossConfig& config,
                              const RewardModel& reward) {
  if (config.lambda_r == 0.0 && config.lambda_g == 0.0 && config.lambda_c == 0.0 &&
      config.lambda_d == 0.0) {
    throw std::invalid_argument("decoder_loss: all four loss weights are zero");
  }
  if (batch.rollouts.size() != batch.prompt_ids.size() ||
      batch.rewards.size() != batch.prompt_ids.size() ||
      batch.z_gt.size() != batch.x_gt_rows.rows()) {
    throw std::invalid_argument("decoder_loss: inconsistent batch");
  }
  Tape& tape = decoder.at("w1").tape();
  Var cb = tape.constant(codebook);

  std::vector<int> flat, ids;
  std::vector<double> weights;
  for (std::size_t g = 0; g < batch.prompt_ids.size(); ++g) {
    for (const auto& seq : batch.rollouts[g]) {
      flat.insert(flat.end(), seq.begin(), seq.end());
      ids.push_back(batch.prompt_ids[g]);
    }
    const auto w = rank_weights(batch.rewards[g], config.tau);
    weights.insert(weights.end(), w.begin(), w.end());
  }

  DecoderLossTerms terms;
  Var fake = decode(flat, decoder, cb);
  Var recon = decode(flatten_tokens(batch.z_gt), decoder, cb);
  terms.fake_rows = fake.value();
  terms.reward_term_disabled = !reward.differentiable();
  terms.mean_weight = 1.0;
  terms.max_weight = *std::max_element(weights.begin(), weights.end());

  std::vector<Var> parts;
  if (!terms.reward_term_disabled) {
    Var r = reward_bp_loss(fake, ids, reward);
    terms.reward_bp = r.value()[0];
    if (config.lambda_d != 0.0) parts.push_back(ad::scale(r, config.lambda_d));
  }
  Var g = rank_gan_loss(fake, weights, disc);
  terms.rank_gan = g.value()[0];
  if (config.lambda_g != 0.0) parts.push_back(ad::scale(g, config.lambda_g));
  Var r = recon_anchor_loss(batch.x_gt_rows, recon, disc);
  terms.recon = r.value()[0];
  if (config.lambda_r != 0.0) parts.push_back(ad::scale(r, config.lambda_r));
  VarMap teacher_vars = teacher.bind_constant(tape);
  Var c = consistency_loss(flat, fake, teacher_vars, cb, config.consistency_metric, reward.features());
  terms.consist = c.value()[0];
  if (config.lambda_c != 0.0) parts.push_back(ad::scale(c, config.lambda_c));

  if (parts.empty()) {
    throw std::invalid_argument("decoder_loss: no active term (black-box channel with only lambda_d set)");
  }
  Var total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
  terms.total = total;
  return terms;
}

double decoder_objective(const ParamBundle& decoder, const DecoderBatch& batch,
                         const ParamBundle& teacher, const ParamBundle& disc,
                         const Array& codebook, const DecoderLossConfig& config,
                         const RewardModel& reward) {
  Tape tape;
  return decoder_loss(decoder.bind_constant(tape), batch, teacher, disc, codebook, config, reward)
      .total.value()[0];
}

DecoderStepStats decoder_step(const DecoderBatch& batch, ParamBundle& decoder,
                              const ParamBundle& teacher, const ParamBundle& disc,
                              const Array& codebook, const DecoderLossConfig& config,
                              const RewardModel& reward, Optimizer& optimizer) {
  Tape tape;
  VarMap dv = decoder.bind(tape, "");
  DecoderLossTerms terms = decoder_loss(dv, batch, teacher, disc, codebook, config, reward);
  tape.backward(terms.total);
  ParamBundle grads = decoder.gradients(tape, "");
  if (!grads.all_finite()) {
    std::ostringstream msg;
    msg << "decoder_step: non-finite gradient (loss=" << terms.total.value()[0] << ") in:";
    for (const auto& [name, gr] : grads)
      if (!gr.all_finite()) msg << ' ' << name;
    throw std::runtime_error(msg.str());
  }
  optimizer.step(decoder, grads);
  DecoderStepStats s;
  s.loss = terms.total.value()[0];
  s.reward_bp = terms.reward_bp;
  s.rank_gan = terms.rank_gan;
  s.recon = terms.recon;
  s.consist = terms.consist;
  s.mean_weight = terms.mean_weight;
  s.max_weight = terms.max_weight;
  s.reward_term_disabled = terms.reward_term_disabled;
  s.fake_rows = std::move(terms.fake_rows);
  return s;
}

Var discriminator_loss(const Array& real_rows, const Array& fake_rows, const VarMap& disc) {
  Tape& tape = disc.at("w1").tape();
  Var real = discriminator_logits(tape.constant(real_rows), disc);
  Var fake = discriminator_logits(tape.constant(fake_rows), disc);
  return ad::add(ad::mean(ad::softplus(ad::neg(real))), ad::mean(ad::softplus(fake)));
}

double discriminator_accuracy(const Array& real_rows, const Array& fake_rows,
                              const ParamBundle& disc) {
  const Array lr = discriminator_logits(real_rows, disc);
  const Array lf = discriminator_logits(fake_rows, disc);
  double correct = 0.0;
  for (double v : lr.data()) correct += v > 0.0 ? 1.0 : 0.0;
  for (double v : lf.data()) correct += v < 0.0 ? 1.0 : 0.0;
  return correct / static_cast<double>(lr.size() + lf.size());
}

DiscriminatorStats discriminator_step(const Array& real_rows, const Array& fake_rows,
                                      ParamBundle& disc, Optimizer& optimizer) {
  Tape tape;
  VarMap dv = disc.bind(tape, "");
  Var loss = discriminator_loss(real_rows, fake_rows, dv);
  DiscriminatorStats stats;
  stats.loss = loss.value()[0];
  stats.accuracy = discriminator_accuracy(real_rows, fake_rows, disc);
  tape.backward(loss);
  optimizer.step(disc, disc.gradients(tape, ""));
  return stats;
}

}  // namespace coevo
