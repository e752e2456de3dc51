#include "coevo/domain.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "coevo/binary_io.hpp"

namespace coevo {

std::string to_string(ShapeKind shape) {
  switch (shape) {
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kCross: return "cross";
    case ShapeKind::kStripes: return "stripes";
  }
  return "?";
}

ShapeKind parse_shape(const std::string& name) {
  for (int s = 0; s < kNumShapes; ++s) {
    if (to_string(static_cast<ShapeKind>(s)) == name) return static_cast<ShapeKind>(s);
  }
  throw std::invalid_argument("unknown shape '" + name + "'");
}

Prompt Prompt::from_id(int id) {
  if (id < 0 || id >= kNumPrompts) {
    throw std::out_of_range("prompt id " + std::to_string(id) + " outside [0," +
                            std::to_string(kNumPrompts) + ")");
  }
  Prompt p;
  p.id = id;
  p.shape = static_cast<ShapeKind>(id / (kNumColors * (kNumColors - 1)));
  const int rest = id % (kNumColors * (kNumColors - 1));
  p.fg_color = rest / (kNumColors - 1);
  const int j = rest % (kNumColors - 1);
  p.bg_color = j < p.fg_color ? j : j + 1;
  return p;
}

Prompt Prompt::make(int fg, int bg, ShapeKind shape) {
  if (fg < 0 || fg >= kNumColors || bg < 0 || bg >= kNumColors || fg == bg) {
    throw std::invalid_argument("Prompt::make: need distinct colors in [0,8), got fg=" +
                                std::to_string(fg) + " bg=" + std::to_string(bg));
  }
  const int j = bg < fg ? bg : bg - 1;
  return from_id(static_cast<int>(shape) * kNumColors * (kNumColors - 1) +
                 fg * (kNumColors - 1) + j);
}

std::array<double, 3> palette(int color) {
  if (color < 0 || color >= kNumColors) throw std::out_of_range("palette index");
  return {static_cast<double>((color >> 2) & 1), static_cast<double>((color >> 1) & 1),
          static_cast<double>(color & 1)};
}

bool shape_mask(ShapeKind shape, int y, int x) {
  switch (shape) {
    case ShapeKind::kSquare:
      return y >= 4 && y < 12 && x >= 4 && x < 12;
    case ShapeKind::kCircle: {
      const double dy = y - 7.5, dx = x - 7.5;
      return dy * dy + dx * dx <= 6.0 * 6.0;
    }
    case ShapeKind::kCross:
      return (y >= 4 && y < 12) || (x >= 4 && x < 12);
    case ShapeKind::kStripes:
      return (y / 4) % 2 == 0;
  }
  return false;
}

Image render(const Prompt& prompt) {
  Image img;
  const auto fg = palette(prompt.fg_color);
  const auto bg = palette(prompt.bg_color);
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 0; x < kImageSize; ++x) {
      const auto& rgb = shape_mask(prompt.shape, y, x) ? fg : bg;
      for (int c = 0; c < kChannels; ++c) img.at(y, x, c) = rgb[c];
    }
  }
  return img;
}

Array stack_images(const std::vector<Image>& images) {
  Array out({images.size(), static_cast<std::size_t>(kPixelValues)});
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::copy(images[i].pixels.data().begin(), images[i].pixels.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(i * kPixelValues));
  }
  return out;
}

Image image_from_row(const Array& rows, std::size_t r) {
  Image img;
  std::copy_n(rows.data().begin() + static_cast<std::ptrdiff_t>(r * kPixelValues),
              kPixelValues, img.pixels.data().begin());
  return img;
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed)
    : seed_(seed),
      projection_t_({static_cast<std::size_t>(kPixelValues), kFeatureDim}),
      bias_({kFeatureDim}) {
  Rng rng(derive_seed({seed, 0xfea7}));
  // Pre-activation std is O(1) for a half-lit image.
  const double scale = 2.0 / std::sqrt(static_cast<double>(kPixelValues));
  for (double& v : projection_t_.data()) v = scale * normal01(rng);
  for (double& v : bias_.data()) v = 0.5 * normal01(rng);
}

Array FeatureExtractor::extract(const Image& image) const {
  return extract_rows(image.pixels.reshaped({1, static_cast<std::size_t>(kPixelValues)}))
      .reshaped({kFeatureDim});
}

Array FeatureExtractor::extract_rows(const Array& rows) const {
  Tape tape;
  return extract(tape.constant(rows)).value();
}

Var FeatureExtractor::extract(Var rows) const {
  Tape& t = rows.tape();
  Var pre = ad::add_row(ad::matmul(rows, t.constant(projection_t_)), t.constant(bias_));
  return ad::tanh(pre);
}

Prompt sample_prompt(Rng& rng) {
  return Prompt::from_id(static_cast<int>(uniform_index(rng, kNumPrompts)));
}

std::vector<Example> dataset(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("dataset: n must be >= 1");
  std::vector<Example> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Prompt p = sample_prompt(rng);
    out.push_back({p, render(p)});
  }
  return out;
}

std::vector<Example> exhaustive_dataset() {
  std::vector<Example> out;
  out.reserve(kNumPrompts);
  for (int id = 0; id < kNumPrompts; ++id) {
    Prompt p = Prompt::from_id(id);
    out.push_back({p, render(p)});
  }
  return out;
}

void export_dataset(const std::vector<Example>& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::ostringstream name;
    name << "img_" << i << ".bin";
    std::string bytes;
    const Shape& shape = data[i].image.pixels.shape();
    binary::put_u32(bytes, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) binary::put_u32(bytes, static_cast<std::uint32_t>(d));
    for (double v : data[i].image.pixels.data()) binary::put_f32(bytes, static_cast<float>(v));
    std::ofstream f(dir / name.str(), std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("export_dataset: cannot write " + (dir / name.str()).string());
    const Prompt& p = data[i].prompt;
    index.push_back({{"file", name.str()},
                     {"id", p.id},
                     {"fg_color", p.fg_color},
                     {"bg_color", p.bg_color},
                     {"shape", to_string(p.shape)}});
  }
  std::ofstream f(dir / "index.json");
  f << index.dump(2) << '\n';
  if (!f) throw std::runtime_error("export_dataset: cannot write index.json");
}

std::vector<Example> import_dataset(const std::filesystem::path& dir) {
  std::ifstream idx(dir / "index.json");
  if (!idx) throw std::runtime_error("import_dataset: missing " + (dir / "index.json").string());
  const nlohmann::json index = nlohmann::json::parse(idx);
  std::vector<Example> out;
  for (const auto& entry : index) {
    const Prompt p = Prompt::from_id(entry.at("id").get<int>());
    std::ifstream f(dir / entry.at("file").get<std::string>(), std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    binary::Reader r(bytes);
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    Image img;
    if (shape != img.pixels.shape()) throw ShapeError("import_dataset: unexpected image shape");
    for (double& v : img.pixels.data()) v = r.f32();
    out.push_back({p, std::move(img)});
  }
  return out;
}

}  // namespace coevo
