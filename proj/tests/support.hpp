#ifndef COEVO_TESTS_SUPPORT_HPP_
#define COEVO_TESTS_SUPPORT_HPP_

#include <cmath>
#include <filesystem>
#include <string>

#include "coevo/autodiff.hpp"
#include "coevo/params.hpp"
#include "coevo/rng.hpp"

namespace coevo::testing {

inline Array random_array(Shape shape, Rng& rng, double scale = 1.0) {
  Array a(std::move(shape));
  for (double& v : a.data()) v = scale * normal01(rng);
  return a;
}

inline Array uniform_array(Shape shape, Rng& rng, double lo, double hi) {
  Array a(std::move(shape));
  for (double& v : a.data()) v = lo + (hi - lo) * uniform01(rng);
  return a;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-300, std::abs(b));
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("coevo_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Per-token decoder with the tokenizer's array names.
inline ParamBundle random_decoder(int latent, int hidden, Rng& rng) {
  const auto d = static_cast<std::size_t>(latent), h = static_cast<std::size_t>(hidden);
  ParamBundle b;
  b.set("w1", random_array({d, h}, rng, 1.0 / std::sqrt(double(d))));
  b.set("b1", random_array({h}, rng, 0.1));
  b.set("w2", random_array({h, 48}, rng, 1.0 / std::sqrt(double(h))));
  b.set("b2", random_array({48}, rng, 0.1));
  return b;
}

}  // namespace coevo::testing

#endif  // COEVO_TESTS_SUPPORT_HPP_
