#include "coevo/diagnostics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace coevo {
namespace {

Eigen::MatrixXd to_matrix(const Array& a) {
  Eigen::MatrixXd m(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) m(r, c) = a.at(r, c);
  return m;
}

void require_nonempty(const TokenHistogram& h, const char* what) {
  if (h.total <= 0) throw std::invalid_argument(std::string(what) + ": histogram total is 0");
}

std::vector<std::uint64_t> row_seeds(std::uint64_t seed, int n) {
  std::vector<std::uint64_t> out(n);
  for (int i = 0; i < n; ++i) out[i] = derive_seed({seed, static_cast<std::uint64_t>(i)});
  return out;
}

std::vector<int> cycled(std::span<const int> prompt_ids, int n) {
  if (prompt_ids.empty()) throw std::invalid_argument("probe: empty prompt set");
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = prompt_ids[i % prompt_ids.size()];
  return out;
}

}  // namespace

TokenHistogram& TokenHistogram::operator+=(const TokenHistogram& other) {
  if (other.counts.size() != counts.size()) throw ShapeError("TokenHistogram: size mismatch");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  total += other.total;
  return *this;
}

TokenHistogram token_histogram(std::span<const TokenSequence> sequences, int codebook_size) {
  if (codebook_size < 1) throw std::invalid_argument("token_histogram: K must be >= 1");
  TokenHistogram h;
  h.counts.assign(codebook_size, 0);
  for (const auto& seq : sequences) {
    for (int t : seq) {
      if (t < 0 || t >= codebook_size) {
        throw std::out_of_range("token_histogram: index " + std::to_string(t) +
                                " outside [0, " + std::to_string(codebook_size) + ")");
      }
      ++h.counts[t];
      ++h.total;
    }
  }
  return h;
}

std::vector<double> smoothed_frequencies(const TokenHistogram& hist, double smoothing) {
  require_nonempty(hist, "smoothed_frequencies");
  if (!(smoothing >= 0.0)) throw std::invalid_argument("smoothing must be >= 0");
  const double denom = static_cast<double>(hist.total) + smoothing * hist.size();
  std::vector<double> p(hist.counts.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = (hist.counts[i] + smoothing) / denom;
  return p;
}

double lcs_kl(const TokenHistogram& p_hist, const TokenHistogram& q_hist, double smoothing) {
  require_nonempty(p_hist, "lcs_kl");
  require_nonempty(q_hist, "lcs_kl");
  if (p_hist.size() != q_hist.size()) throw ShapeError("lcs_kl: histogram sizes differ");
  const auto p = smoothed_frequencies(p_hist, smoothing);
  const auto q = smoothed_frequencies(q_hist, smoothing);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) {
      throw std::domain_error("lcs_kl: reference has zero mass where the policy does not; use smoothing > 0");
    }
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(0.0, kl);
}

double codebook_entropy(const TokenHistogram& hist, double smoothing) {
  const auto p = smoothed_frequencies(hist, smoothing);
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return std::clamp(h, 0.0, std::log2(static_cast<double>(hist.size())));
}

double frechet_distance(const Array& a, const Array& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols()) {
    throw ShapeError("frechet_distance: expected two (n x d) matrices with equal d");
  }
  const std::size_t d = a.cols();
  if (a.rows() < d + 1 || b.rows() < d + 1) {
    throw std::invalid_argument("frechet_distance: need at least " + std::to_string(d + 1) +
                                " samples per set, got " + std::to_string(a.rows()) + " and " +
                                std::to_string(b.rows()));
  }
  const Eigen::MatrixXd ma = to_matrix(a), mb = to_matrix(b);
  const Eigen::VectorXd mu_a = ma.colwise().mean(), mu_b = mb.colwise().mean();
  const Eigen::MatrixXd ca = ma.rowwise() - mu_a.transpose();
  const Eigen::MatrixXd cb = mb.rowwise() - mu_b.transpose();
  const Eigen::MatrixXd sa = (ca.transpose() * ca) / static_cast<double>(a.rows() - 1);
  const Eigen::MatrixXd sb = (cb.transpose() * cb) / static_cast<double>(b.rows() - 1);

  auto clamp_eigs = [](Eigen::VectorXd ev) {
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      if (ev(i) < -1e-8) throw std::domain_error("frechet_distance: covariance not PSD");
      ev(i) = std::max(0.0, ev(i));
    }
    return ev;
  };
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  const Eigen::MatrixXd sa_half = ea.eigenvectors() *
                                  clamp_eigs(ea.eigenvalues()).cwiseSqrt().asDiagonal() *
                                  ea.eigenvectors().transpose();
  const Eigen::MatrixXd inner = sa_half * sb * sa_half;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double tr_sqrt = clamp_eigs(ei.eigenvalues()).cwiseSqrt().sum();
  const double dist = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, dist);
}

ShiftReport shift_probe(const ParamBundle& policy, const TokenHistogram& gt_hist,
                        std::span<const int> prompt_ids, const SamplingConfig& sampling,
                        const ProbeConfig& config, std::uint64_t seed) {
  if (config.samples < 1) throw std::invalid_argument("shift_probe: samples must be >= 1");
  const auto ids = cycled(prompt_ids, config.samples);
  const auto seeds = row_seeds(seed, config.samples);
  const auto rollouts = sample_sequences(ids, seeds, policy, sampling);
  std::vector<TokenSequence> seqs;
  seqs.reserve(rollouts.size());
  for (const auto& r : rollouts) seqs.push_back(r.tokens);
  const TokenHistogram h = token_histogram(seqs, gt_hist.size());
  ShiftReport report;
  report.kl_nats = lcs_kl(h, gt_hist, config.smoothing);
  report.entropy_bits = codebook_entropy(h, config.smoothing);
  return report;
}

double real_baseline(std::span<const Example> first, std::span<const Example> second,
                     const Tokenizer& tok, double smoothing) {
  if (first.empty() || second.empty()) throw std::invalid_argument("real_baseline: empty image set");
  const int k = tok.codebook_size();
  return lcs_kl(token_histogram(tokenize_all(first, tok), k),
                token_histogram(tokenize_all(second, tok), k), smoothing);
}

double real_baseline(std::span<const Example> data, const Tokenizer& tok,
                     std::uint64_t split_seed, double smoothing) {
  if (data.size() < 2) throw std::invalid_argument("real_baseline: need at least 2 images");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  const std::size_t half = data.size() / 2;
  std::vector<Example> a, b;
  for (std::size_t i = 0; i < half; ++i) a.push_back(data[order[i]]);
  for (std::size_t i = half; i < 2 * half; ++i) b.push_back(data[order[i]]);
  return real_baseline(a, b, tok, smoothing);
}

QualityReport quality_probe(const ParamBundle& policy, const ParamBundle& decoder,
                            const Array& codebook, const RewardModel& reward,
                            const Array& real_features, std::span<const int> prompt_ids,
                            int samples, const SamplingConfig& sampling, std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("quality_probe: samples must be >= 1");
  const auto ids = cycled(prompt_ids, samples);
  const auto seeds = row_seeds(seed, samples);
  const auto rollouts = sample_sequences(ids, seeds, policy, sampling);
  std::vector<int> flat;
  for (const auto& r : rollouts) flat.insert(flat.end(), r.tokens.begin(), r.tokens.end());
  const Array images = decode_rows(flat, decoder, codebook);
  const auto scores = reward.score(images, ids);
  QualityReport q;
  q.mean_reward = std::accumulate(scores.begin(), scores.end(), 0.0) / samples;
  q.frechet = frechet_distance(reward.features().extract_rows(images), real_features);
  return q;
}

}  // namespace coevo
