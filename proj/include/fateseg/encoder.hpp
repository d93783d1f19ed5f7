#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "fateseg/grid.hpp"

namespace fateseg {

enum class EncoderKind { PatchMean, ToyViT };

struct EncoderSpec {
  EncoderKind kind = EncoderKind::PatchMean;
  int input_size = 64;  // slices resized to S x S
  int patch = 8;
  int channels = 32;  // d
  int depth = 2;      // ToyViT only
  int heads = 4;      // ToyViT only
  uint64_t weight_seed = 0;

  void validate() const;
  std::string to_json() const;            // canonical form, also the fingerprint source
  static EncoderSpec from_json(const std::string& text);
  static EncoderSpec preset(const std::string& name);  // tiny | small | base | large (ToyViT sizes)
  uint64_t fingerprint() const;
};

// Per-slice token-grid embedding. Tokens are row-major over the (gh, gw) grid,
// d channels each. source_* tags provenance; src_h/src_w are the dims of the
// original (pre-resize) slice.
struct EmbeddingMap {
  int gh = 0, gw = 0, d = 0;
  std::vector<float> tokens;  // (gh*gw) x d, token-major
  std::string source_volume;
  int source_slice = -1;
  int src_h = 0, src_w = 0;

  int token_count() const { return gh * gw; }
  const float* token(int t) const { return tokens.data() + size_t(t) * d; }
  float* token(int t) { return tokens.data() + size_t(t) * d; }
};

// Bilinear resample to S x S (half-pixel centers, edge clamp). Bit-identical
// passthrough when the input is already S x S.
Grid2D resize_slice(const Grid2D& slice, int S);

// Encoder backend. Instances are immutable after construction; encode() is a
// pure function of (spec, slice).
class Encoder {
 public:
  explicit Encoder(const EncoderSpec& spec);
  ~Encoder();
  Encoder(Encoder&&) noexcept;
  Encoder& operator=(Encoder&&) noexcept;

  const EncoderSpec& spec() const { return spec_; }
  int grid_dim() const { return spec_.input_size / spec_.patch; }

  EmbeddingMap encode(const Grid2D& slice) const;

 private:
  EncoderSpec spec_;
  struct VitWeights;
  std::unique_ptr<VitWeights> vit_;  // null for PatchMean
};

}  // namespace fateseg
