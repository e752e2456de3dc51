#ifndef COEVO_DIAGNOSTICS_HPP_
#define COEVO_DIAGNOSTICS_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "coevo/policy.hpp"
#include "coevo/rewards.hpp"
#include "coevo/tokenizer.hpp"

namespace coevo {

struct TokenHistogram {
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;

  int size() const { return static_cast<int>(counts.size()); }
  TokenHistogram& operator+=(const TokenHistogram& other);
};

TokenHistogram token_histogram(std::span<const TokenSequence> sequences, int codebook_size);

/// Smoothed frequencies (count + s) / (total + s*K).
std::vector<double> smoothed_frequencies(const TokenHistogram& hist, double smoothing);

/// KL(p || q) in nats between the smoothed unigram distributions.
double lcs_kl(const TokenHistogram& p, const TokenHistogram& q, double smoothing);
/// Shannon entropy in bits of the smoothed unigram distribution.
double codebook_entropy(const TokenHistogram& hist, double smoothing);

inline double default_smoothing(int codebook_size) { return 0.5 / codebook_size; }

/// Fréchet distance between Gaussians fit to the rows of `a` and `b`.
double frechet_distance(const Array& a, const Array& b);

struct ShiftReport {
  double kl_nats = 0.0;
  double entropy_bits = 0.0;
  long step = 0;
  std::optional<double> baseline_kl;
};

struct ProbeConfig {
  int samples = 2048;
  double smoothing = 0.5 / 64;
};

/// Samples `config.samples` sequences, cycling through `prompt_ids`, and
/// compares their token histogram with `gt_hist`. Never decodes.
ShiftReport shift_probe(const ParamBundle& policy, const TokenHistogram& gt_hist,
                        std::span<const int> prompt_ids, const SamplingConfig& sampling,
                        const ProbeConfig& config, std::uint64_t seed);

/// KL between the token histograms of two real image sets.
double real_baseline(std::span<const Example> first, std::span<const Example> second,
                     const Tokenizer& tok, double smoothing);
/// Random disjoint halves of `data`.
double real_baseline(std::span<const Example> data, const Tokenizer& tok,
                     std::uint64_t split_seed, double smoothing);

struct QualityReport {
  double mean_reward = 0.0;
  double frechet = 0.0;
};

/// Decodes `samples` sequences (cycling through `prompt_ids`), scores them,
/// and measures the toy-Fréchet distance to `real_features`.
QualityReport quality_probe(const ParamBundle& policy, const ParamBundle& decoder,
                            const Array& codebook, const RewardModel& reward,
                            const Array& real_features, std::span<const int> prompt_ids,
                            int samples, const SamplingConfig& sampling, std::uint64_t seed);

}  // namespace coevo

#endif  // COEVO_DIAGNOSTICS_HPP_
