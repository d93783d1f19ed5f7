#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fateseg/encoder.hpp"
#include "fateseg/grid.hpp"

namespace fateseg {

enum class MemoryKind { Anatomical, Volumetric };

// A memory block: mask-conditioned tokens plus the per-token mask occupancy
// the label-transfer decoder reads.
struct MemoryEmbedding {
  int gh = 0, gw = 0, d = 0;
  std::vector<float> tokens;       // T x d
  std::vector<float> mask_values;  // T, each in [0, 1]
  MemoryKind kind = MemoryKind::Anatomical;
  std::string provenance;

  int token_count() const { return gh * gw; }
};

enum class ZeroBlockMode { Omit, Materialize };

// Ordered concatenation of memory blocks: anatomical blocks in retrieval rank
// order, the volumetric block (if any) last.
struct UnifiedMemory {
  std::vector<MemoryEmbedding> blocks;
  int total_tokens = 0;

  // Token t of the concatenated sequence -> stored mask value.
  float mask_value(int t) const;
  // Concatenated tokens as one (total_tokens x d) matrix.
  Mat stacked_tokens() const;
};

// Per-token occupancy: area-weighted average of mask pixels over each token's
// receptive cell. Exact fractions for divisible dims.
std::vector<float> downsample_mask(const MaskGrid& mask, int gh, int gw);

// Two 3x3 convolutions over the token grid (1 -> d -> d channels, ReLU
// between, zero padding, zero biases), added to the slice embedding.
class MemoryEncoder {
 public:
  MemoryEncoder(int d, uint64_t seed);

  MemoryEmbedding encode(const MaskGrid& mask, const EmbeddingMap& f, MemoryKind kind) const;

  int channels() const { return d_; }

 private:
  int d_;
  std::vector<float> w1_;  // 3x3 x 1 x d
  std::vector<float> w2_;  // 3x3 x d x d
};

UnifiedMemory fuse_memories(std::vector<MemoryEmbedding> anatomical,
                            std::optional<MemoryEmbedding> volumetric,
                            ZeroBlockMode mode = ZeroBlockMode::Omit);

}  // namespace fateseg
