#include "coevo/tokenizer.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "coevo/optim.hpp"

namespace coevo {
namespace {

std::vector<std::size_t> build_patch_to_hwc() {
  std::vector<std::size_t> map(kPixelValues);
  std::size_t pos = 0;
  for (int py = 0; py < kGridSide; ++py)
    for (int px = 0; px < kGridSide; ++px)
      for (int dy = 0; dy < kPatchSize; ++dy)
        for (int dx = 0; dx < kPatchSize; ++dx)
          for (int c = 0; c < kChannels; ++c) {
            const int y = py * kPatchSize + dy, x = px * kPatchSize + dx;
            map[pos++] = static_cast<std::size_t>((y * kImageSize + x) * kChannels + c);
          }
  return map;
}

std::vector<std::size_t> batched_map(const std::vector<std::size_t>& one, std::size_t n) {
  std::vector<std::size_t> out(n * one.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < one.size(); ++j) out[i * one.size() + j] = i * one.size() + one[j];
  return out;
}

Array normal_array(Shape shape, double scale, Rng& rng) {
  Array a(std::move(shape));
  for (double& v : a.data()) v = scale * normal01(rng);
  return a;
}

}  // namespace

int Tokenizer::codebook_size() const { return static_cast<int>(entries().shape()[0]); }
int Tokenizer::latent_dim() const { return static_cast<int>(entries().shape()[1]); }

const std::vector<std::size_t>& patch_to_hwc() {
  static const std::vector<std::size_t> map = build_patch_to_hwc();
  return map;
}

const std::vector<std::size_t>& hwc_to_patch() {
  static const std::vector<std::size_t> map = [] {
    const auto& fwd = patch_to_hwc();
    std::vector<std::size_t> inv(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
    return inv;
  }();
  return map;
}

Array patchify(const Array& image_rows) {
  Tape tape;
  return patchify(tape.constant(image_rows)).value();
}

Var patchify(Var image_rows) {
  const std::size_t n = image_rows.value().rows();
  const auto map = batched_map(patch_to_hwc(), n);
  return ad::permute(image_rows, map, {n * kTokensPerImage, static_cast<std::size_t>(kPatchValues)});
}

Var unpatchify(Var patch_rows) {
  const std::size_t n = patch_rows.value().size() / kPixelValues;
  const auto map = batched_map(hwc_to_patch(), n);
  return ad::permute(patch_rows, map, {n, static_cast<std::size_t>(kPixelValues)});
}

Tokenizer init_tokenizer(const TokenizerConfig& config, std::span<const Example> data, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("init_tokenizer: empty dataset");
  const std::size_t d = config.latent_dim, k = config.codebook_size, h = config.decoder_hidden;
  Tokenizer tok;
  tok.encoder.set("w", normal_array({kPatchValues, d}, 1.0, rng));
  tok.encoder.set("b", Array({d}));
  tok.decoder.set("w1", normal_array({d, h}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  tok.decoder.set("b1", Array({h}));
  tok.decoder.set("w2", normal_array({h, kPatchValues}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
  tok.decoder.set("b2", Array({kPatchValues}));

  // k-means++ seeding over every patch latent in the data.
  std::vector<Image> imgs;
  for (const auto& ex : data) imgs.push_back(ex.image);
  const Array latents = encode_rows(stack_images(imgs), tok.encoder);
  const std::size_t n = latents.rows();
  Array entries({k, d});
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t pick = uniform_index(rng, n);
  for (std::size_t e = 0; e < k; ++e) {
    for (std::size_t j = 0; j < d; ++j) entries.at(e, j) = latents.at(pick, j);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = latents.at(i, j) - entries.at(e, j);
        s += diff * diff;
      }
      dist[i] = std::min(dist[i], s);
      total += dist[i];
    }
    if (total <= 0.0) {
      pick = uniform_index(rng, n);
      continue;
    }
    double u = uniform01(rng) * total;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      u -= dist[i];
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
  }
  for (double& v : entries.data()) v += 1e-3 * normal01(rng);
  tok.codebook.set("entries", std::move(entries));
  return tok;
}

Array encode(const Image& image, const ParamBundle& encoder) {
  return encode_rows(image.pixels.reshaped({1, static_cast<std::size_t>(kPixelValues)}), encoder);
}

Array encode_rows(const Array& image_rows, const ParamBundle& encoder) {
  Tape tape;
  return encode_rows(tape.constant(image_rows), encoder.bind_constant(tape)).value();
}

Var encode_rows(Var image_rows, const VarMap& encoder) {
  return ad::add_row(ad::matmul(patchify(image_rows), encoder.at("w")), encoder.at("b"));
}

std::vector<int> quantize(const Array& latents, const Array& codebook) {
  const std::size_t d = codebook.cols(), k = codebook.rows();
  if (latents.cols() != d) {
    throw ShapeError("quantize: latent dim " + std::to_string(latents.cols()) +
                     " != codebook dim " + std::to_string(d));
  }
  std::vector<int> out(latents.rows());
  for (std::size_t i = 0; i < latents.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_k = 0;
    for (std::size_t e = 0; e < k; ++e) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = latents.at(i, j) - codebook.at(e, j);
        s += diff * diff;
      }
      if (s < best) {
        best = s;
        best_k = static_cast<int>(e);
      }
    }
    out[i] = best_k;
  }
  return out;
}

TokenSequence tokenize(const Image& image, const Tokenizer& tok) {
  return quantize(encode(image, tok.encoder), tok.entries());
}

std::vector<TokenSequence> tokenize_all(std::span<const Example> data, const Tokenizer& tok) {
  std::vector<Image> imgs;
  for (const auto& ex : data) imgs.push_back(ex.image);
  const std::vector<int> flat = quantize(encode_rows(stack_images(imgs), tok.encoder), tok.entries());
  std::vector<TokenSequence> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out[i].assign(flat.begin() + static_cast<std::ptrdiff_t>(i * kTokensPerImage),
                  flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * kTokensPerImage));
  return out;
}

namespace {
std::atomic<std::uint64_t> g_decode_calls{0};
}  // namespace

std::uint64_t decode_call_count() { return g_decode_calls.load(); }

Var decode(std::span<const int> tokens, const VarMap& decoder, Var codebook) {
  g_decode_calls.fetch_add(1);
  if (tokens.size() % kTokensPerImage != 0) {
    throw ShapeError("decode: token count " + std::to_string(tokens.size()) +
                     " is not a multiple of 16");
  }
  Var e = ad::gather_rows(codebook, tokens);
  Var h = ad::tanh(ad::add_row(ad::matmul(e, decoder.at("w1")), decoder.at("b1")));
  Var o = ad::sigmoid(ad::add_row(ad::matmul(h, decoder.at("w2")), decoder.at("b2")));
  return unpatchify(o);
}

Array decode_rows(std::span<const int> tokens, const ParamBundle& decoder, const Array& codebook) {
  Tape tape;
  return decode(tokens, decoder.bind_constant(tape), tape.constant(codebook)).value();
}

Image decode(const TokenSequence& tokens, const ParamBundle& decoder, const Array& codebook) {
  return image_from_row(decode_rows(tokens, decoder, codebook), 0);
}

std::vector<int> flatten_tokens(std::span<const TokenSequence> seqs) {
  std::vector<int> flat;
  flat.reserve(seqs.size() * kTokensPerImage);
  for (const auto& s : seqs) {
    if (s.size() != static_cast<std::size_t>(kTokensPerImage)) {
      throw ShapeError("token sequence of length " + std::to_string(s.size()) + ", expected 16");
    }
    flat.insert(flat.end(), s.begin(), s.end());
  }
  return flat;
}

Tokenizer pretrain_tokenizer(std::span<const Example> data, const TokenizerConfig& config,
                             Rng& rng, PretrainReport* report) {
  if (data.empty()) throw std::invalid_argument("pretrain_tokenizer: empty dataset");
  Tokenizer tok = init_tokenizer(config, data, rng);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::kAdamW;
  oc.lr = config.lr;
  Optimizer enc_opt(oc), cb_opt(oc), dec_opt(oc);

  double last = 0.0;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<Image> batch;
    for (int b = 0; b < config.batch; ++b) batch.push_back(data[uniform_index(rng, data.size())].image);
    const Array x = stack_images(batch);

    Tape tape;
    VarMap enc = tok.encoder.bind(tape, "enc.");
    VarMap cb = tok.codebook.bind(tape, "cb.");
    VarMap dec = tok.decoder.bind(tape, "dec.");
    Var xv = tape.constant(x);
    Var latents = encode_rows(xv, enc);
    const std::vector<int> codes = quantize(latents.value(), tok.entries());
    Var recon = decode(codes, dec, ad::stop_gradient(cb.at("entries")));
    Var l1 = ad::scale(ad::l1_norm(ad::sub(xv, recon)), 1.0 / static_cast<double>(x.size()));
    Var selected = ad::gather_rows(cb.at("entries"), codes);
    Var pull = ad::mean(ad::square(ad::sub(selected, ad::stop_gradient(latents))));
    Var commit = ad::mean(ad::square(ad::sub(latents, ad::stop_gradient(selected))));
    Var loss = ad::add(l1, ad::add(ad::scale(pull, config.codebook_weight),
                                   ad::scale(commit, config.commitment_weight)));
    last = loss.value()[0];
    if (!std::isfinite(last)) {
      throw std::runtime_error("pretrain_tokenizer: loss became non-finite at step " +
                               std::to_string(step));
    }
    tape.backward(loss);
    enc_opt.step(tok.encoder, tok.encoder.gradients(tape, "enc."));
    cb_opt.step(tok.codebook, tok.codebook.gradients(tape, "cb."));
    dec_opt.step(tok.decoder, tok.decoder.gradients(tape, "dec."));
  }
  if (report) {
    report->final_loss = last;
    report->mean_l1 = reconstruction_l1(data, tok);
  }
  return tok;
}

double reconstruction_l1(std::span<const Example> data, const Tokenizer& tok) {
  const auto codes = tokenize_all(data, tok);
  const Array recon = decode_rows(flatten_tokens(codes), tok.decoder, tok.entries());
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int j = 0; j < kPixelValues; ++j)
      s += std::abs(recon[i * kPixelValues + j] - data[i].image.pixels[j]);
  return s / static_cast<double>(data.size() * kPixelValues);
}

}  // namespace coevo
