#ifndef COEVO_TOKENIZER_HPP_
#define COEVO_TOKENIZER_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "coevo/domain.hpp"
#include "coevo/params.hpp"

namespace coevo {

inline constexpr int kPatchSize = 4;
inline constexpr int kGridSide = kImageSize / kPatchSize;        // 4
inline constexpr int kTokensPerImage = kGridSide * kGridSide;     // 16
inline constexpr int kPatchValues = kPatchSize * kPatchSize * kChannels;  // 48

/// Row-major 4x4 grid of codebook indices, flattened to length 16.
using TokenSequence = std::vector<int>;

struct TokenizerConfig {
  int codebook_size = 64;
  int latent_dim = 8;
  int decoder_hidden = 32;
  int steps = 5000;
  int batch = 16;
  double lr = 1e-3;
  double codebook_weight = 0.25;
  double commitment_weight = 0.25;
};

/// Encoder (48 -> d linear per patch), codebook (K x d), and per-token
/// decoder MLP (d -> hidden -> 48, sigmoid output).
struct Tokenizer {
  ParamBundle encoder;   // w: 48 x d, b: d
  ParamBundle codebook;  // entries: K x d
  ParamBundle decoder;   // w1: d x h, b1: h, w2: h x 48, b2: 48

  int codebook_size() const;
  int latent_dim() const;
  const Array& entries() const { return codebook.get("entries"); }
};

/// hwc_index[patch_layout_position] for one image, where the patch layout is
/// 16 patches in row-major order, each 4x4x3 in (dy, dx, c) order.
const std::vector<std::size_t>& patch_to_hwc();
/// Inverse of patch_to_hwc.
const std::vector<std::size_t>& hwc_to_patch();

/// Rearranges (n x 768) channel-last rows into (n*16 x 48) patch rows.
Array patchify(const Array& image_rows);
Var patchify(Var image_rows);
/// Inverse of patchify.
Var unpatchify(Var patch_rows);

/// Random initialization; the codebook is seeded from encoder latents of
/// patches drawn from `data`, jittered so no two entries coincide.
Tokenizer init_tokenizer(const TokenizerConfig& config, std::span<const Example> data,
                         Rng& rng);

/// One d-dim latent per patch: (16 x d).
Array encode(const Image& image, const ParamBundle& encoder);
/// (n x 768) -> (n*16 x d).
Array encode_rows(const Array& image_rows, const ParamBundle& encoder);
Var encode_rows(Var image_rows, const VarMap& encoder);

/// Nearest codebook entry per latent row in Euclidean distance, ties to the
/// lowest index.
std::vector<int> quantize(const Array& latents, const Array& codebook);

/// Ground-truth codes z_gt = quantize(encode(x)).
TokenSequence tokenize(const Image& image, const Tokenizer& tok);
std::vector<TokenSequence> tokenize_all(std::span<const Example> data, const Tokenizer& tok);

/// Differentiable decode of n token grids (flattened, length n*16) into
/// (n x 768) channel-last image rows. Token indices are plain integers and
/// never enter the tape.
Var decode(std::span<const int> tokens, const VarMap& decoder, Var codebook);
/// Tape-free decode.
Array decode_rows(std::span<const int> tokens, const ParamBundle& decoder, const Array& codebook);
Image decode(const TokenSequence& tokens, const ParamBundle& decoder, const Array& codebook);

/// Number of decode calls made so far in this process.
std::uint64_t decode_call_count();

/// Flattens a list of token grids, validating their length.
std::vector<int> flatten_tokens(std::span<const TokenSequence> seqs);

struct PretrainReport {
  double final_loss = 0.0;
  double mean_l1 = 0.0;
};

/// Minimizes mean |x - D(z_gt)| plus codebook/commitment pulls with Adam.
/// Throws std::runtime_error naming the step if the loss becomes non-finite.
Tokenizer pretrain_tokenizer(std::span<const Example> data, const TokenizerConfig& config,
                             Rng& rng, PretrainReport* report = nullptr);

/// Mean per-pixel L1 between each image and its ground-truth reconstruction.
double reconstruction_l1(std::span<const Example> data, const Tokenizer& tok);

}  // namespace coevo

#endif  // COEVO_TOKENIZER_HPP_
