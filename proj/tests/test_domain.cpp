#include <cmath>

#include "coevo/domain.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coevo;
using namespace coevo::testing;

namespace {
constexpr int kBlack = 0;
constexpr int kWhite = 7;
}  // namespace

TEST_CASE("white square on black fills the central 8x8 block") {
  const Image img = render(Prompt::make(kWhite, kBlack, ShapeKind::kSquare));
  for (int y = 0; y < kImageSize; ++y)
    for (int x = 0; x < kImageSize; ++x) {
      const bool inside = y >= 4 && y < 12 && x >= 4 && x < 12;
      for (int c = 0; c < kChannels; ++c) CHECK(img.at(y, x, c) == (inside ? 1.0 : 0.0));
    }
}

TEST_CASE("rendering is deterministic and in range for every prompt") {
  for (int id = 0; id < kNumPrompts; ++id) {
    const Prompt p = Prompt::from_id(id);
    CHECK(p.id == id);
    CHECK(p.fg_color != p.bg_color);
    const Image a = render(p);
    CHECK(bitwise_equal(a.pixels, render(p).pixels));
    for (double v : a.pixels.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("prompt enumeration round-trips and rejects bad ids") {
  for (int id = 0; id < kNumPrompts; ++id) {
    const Prompt p = Prompt::from_id(id);
    CHECK(Prompt::make(p.fg_color, p.bg_color, p.shape) == p);
  }
  CHECK_THROWS_AS(Prompt::from_id(kNumPrompts), std::out_of_range);
  CHECK_THROWS_AS(Prompt::from_id(-1), std::out_of_range);
  CHECK_THROWS_AS(Prompt::make(3, 3, ShapeKind::kCross), std::invalid_argument);
  CHECK(parse_shape(to_string(ShapeKind::kStripes)) == ShapeKind::kStripes);
  CHECK_THROWS(parse_shape("hexagon"));
}

TEST_CASE("palette holds the unit-cube corners") {
  CHECK(palette(0) == std::array<double, 3>{0, 0, 0});
  CHECK(palette(4) == std::array<double, 3>{1, 0, 0});
  CHECK(palette(7) == std::array<double, 3>{1, 1, 1});
  CHECK_THROWS(palette(8));
}

TEST_CASE("feature extractor") {
  const FeatureExtractor f(1234);
  SUBCASE("zero image maps to tanh of the bias") {
    const Array z = f.extract(Image{});
    for (int i = 0; i < kFeatureDim; ++i) CHECK(z[i] == std::tanh(f.bias()[i]));
  }
  SUBCASE("identical images give identical features; one flipped pixel changes them") {
    Image img = render(Prompt::from_id(77));
    const Array a = f.extract(img);
    CHECK(bitwise_equal(a, f.extract(render(Prompt::from_id(77)))));
    img.at(3, 9, 1) = 1.0 - img.at(3, 9, 1);
    CHECK_FALSE(bitwise_equal(a, f.extract(img)));
  }
  SUBCASE("row and tape paths agree") {
    const Array rows = stack_images({render(Prompt::from_id(1)), render(Prompt::from_id(200))});
    Tape t;
    const Array taped = f.extract(t.constant(rows)).value();
    const Array plain = f.extract_rows(rows);
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(taped[i] == doctest::Approx(plain[i]).epsilon(1e-14));
  }
  SUBCASE("parameters are a pure function of the seed") {
    CHECK(bitwise_equal(f.projection(), FeatureExtractor(1234).projection()));
    CHECK_FALSE(bitwise_equal(f.projection(), FeatureExtractor(1235).projection()));
  }
}

TEST_CASE("seeded prompt sampling is reproducible") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(sample_prompt(a) == sample_prompt(b));
}

TEST_CASE("exhaustive dataset lists every prompt once") {
  const auto data = exhaustive_dataset();
  REQUIRE(data.size() == static_cast<std::size_t>(kNumPrompts));
  for (int id = 0; id < kNumPrompts; ++id) {
    CHECK(data[id].prompt.id == id);
    CHECK(bitwise_equal(data[id].image.pixels, render(data[id].prompt).pixels));
  }
}

TEST_CASE("sampled prompts are uniform") {
  Rng rng(3);
  const int n = 10000;
  std::vector<int> per_prompt(kNumPrompts), per_shape(kNumShapes), per_fg(kNumColors);
  for (int i = 0; i < n; ++i) {
    const Prompt p = sample_prompt(rng);
    ++per_prompt[p.id];
    ++per_shape[static_cast<int>(p.shape)];
    ++per_fg[p.fg_color];
  }
  auto within_3_sigma = [n](int count, double p) {
    return std::abs(count - n * p) <= 3.0 * std::sqrt(n * p * (1 - p));
  };
  for (int c : per_shape) CHECK(within_3_sigma(c, 1.0 / kNumShapes));
  for (int c : per_fg) CHECK(within_3_sigma(c, 1.0 / kNumColors));
  // Pearson statistic over all prompts against its mean + 3 sd.
  const double expect = static_cast<double>(n) / kNumPrompts;
  double chi2 = 0.0;
  for (int c : per_prompt) chi2 += (c - expect) * (c - expect) / expect;
  const double df = kNumPrompts - 1;
  CHECK(chi2 <= df + 3.0 * std::sqrt(2.0 * df));
}

TEST_CASE("dataset export and import round-trip") {
  Rng rng(9);
  const auto data = dataset(5, rng);
  const auto dir = temp_dir("dataset");
  export_dataset(data, dir);
  const auto back = import_dataset(dir);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].prompt == data[i].prompt);
    CHECK(bitwise_equal(back[i].image.pixels, data[i].image.pixels));
  }
  CHECK_THROWS(import_dataset(dir / "missing"));
  std::filesystem::remove_all(dir);
}
