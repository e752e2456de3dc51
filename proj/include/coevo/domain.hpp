#ifndef COEVO_DOMAIN_HPP_
#define COEVO_DOMAIN_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "coevo/autodiff.hpp"
#include "coevo/rng.hpp"

namespace coevo {

inline constexpr int kImageSize = 16;
inline constexpr int kChannels = 3;
inline constexpr int kPixelValues = kImageSize * kImageSize * kChannels;  // 768
inline constexpr int kNumColors = 8;
inline constexpr int kNumShapes = 4;
inline constexpr int kFeatureDim = 16;
/// Every (fg, bg, shape) with fg != bg.
inline constexpr int kNumPrompts = kNumShapes * kNumColors * (kNumColors - 1);

enum class ShapeKind : std::uint8_t { kSquare = 0, kCircle = 1, kCross = 2, kStripes = 3 };

std::string to_string(ShapeKind shape);
ShapeKind parse_shape(const std::string& name);

struct Prompt {
  int fg_color = 0;
  int bg_color = 1;
  ShapeKind shape = ShapeKind::kSquare;
  int id = 0;

  /// Fixed enumeration: id = shape * 56 + fg * 7 + j, where bg is the j-th
  /// color other than fg.
  static Prompt from_id(int id);
  static Prompt make(int fg, int bg, ShapeKind shape);

  bool operator==(const Prompt&) const = default;
};

/// 16x16x3 image, channel-last, values in [0, 1].
struct Image {
  Array pixels{Shape{kImageSize, kImageSize, kChannels}};

  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * kImageSize + x) * kChannels + c];
  }
  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * kImageSize + x) * kChannels + c];
  }
};

/// RGB triple of a palette color. The palette is the eight corners of the
/// unit RGB cube: bit 2 = red, bit 1 = green, bit 0 = blue.
std::array<double, 3> palette(int color);

/// True where the shape's foreground covers pixel (y, x).
bool shape_mask(ShapeKind shape, int y, int x);

Image render(const Prompt& prompt);

/// Stacks images into an (n x 768) matrix of flattened pixels.
Array stack_images(const std::vector<Image>& images);
Image image_from_row(const Array& rows, std::size_t r);

/// Frozen random projection + tanh standing in for a pretrained perceptual
/// backbone. Parameters are a pure function of the seed.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  /// Projection stored transposed, (768 x 16), for row-batched matmul.
  const Array& projection() const { return projection_t_; }
  const Array& bias() const { return bias_; }

  Array extract(const Image& image) const;
  /// (n x 768) -> (n x 16), no tape.
  Array extract_rows(const Array& rows) const;
  /// Differentiable w.r.t. `rows` only; projection and bias enter as
  /// constants.
  Var extract(Var rows) const;

 private:
  std::uint64_t seed_;
  Array projection_t_;
  Array bias_;
};

Prompt sample_prompt(Rng& rng);

struct Example {
  Prompt prompt;
  Image image;
};

/// `n` prompts drawn uniformly with their renders.
std::vector<Example> dataset(int n, Rng& rng);
/// Every prompt exactly once, in id order.
std::vector<Example> exhaustive_dataset();

/// Writes one little-endian fp32 file per image (u32 rank, u32 dims, then
/// values) and an index.json describing prompts and files.
void export_dataset(const std::vector<Example>& data, const std::filesystem::path& dir);
std::vector<Example> import_dataset(const std::filesystem::path& dir);

}  // namespace coevo

#endif  // COEVO_DOMAIN_HPP_
