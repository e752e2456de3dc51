#ifndef COEVO_TESTS_CHECKS_HPP_
#define COEVO_TESTS_CHECKS_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "coevo/autodiff.hpp"
#include "coevo/rng.hpp"

namespace coevo::testing {

struct CheckResult {
  bool pass = false;
  std::string detail;
};

/// A scalar graph plus a generator of evaluation points away from kinks.
struct GradCase {
  std::string name;
  std::function<ArrayMap(Rng&)> point;
  GraphFn graph;
};

std::vector<GradCase> op_gradient_cases();
std::vector<GradCase> loss_gradient_cases();

/// Worst relative error of every case over `points` random points.
CheckResult gradient_suite(const std::vector<GradCase>& cases, int points, std::uint64_t seed,
                           double tol);

CheckResult grpo_algebra(int cases, std::uint64_t seed);
CheckResult rank_gan_algebra(int cases, std::uint64_t seed);
CheckResult oracle_equivalence(int hist_pairs, int latents, std::uint64_t seed);
CheckResult frechet_sanity(std::uint64_t seed);
CheckResult ema_exactness();
CheckResult mode_isolation(int rounds);
CheckResult loss_ablation(std::uint64_t seed);
CheckResult gem_steps(int batches, std::uint64_t seed);

}  // namespace coevo::testing

#endif  // COEVO_TESTS_CHECKS_HPP_
