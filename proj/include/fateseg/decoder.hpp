#pragma once

#include <cstdint>
#include <string>

#include "fateseg/attention.hpp"
#include "fateseg/grid.hpp"
#include "fateseg/memory.hpp"

namespace fateseg {

enum class DecoderKind { LinearSeeded, AttentionLabelTransfer };

struct DecoderSpec {
  DecoderKind kind = DecoderKind::AttentionLabelTransfer;
  double threshold = 0.0;  // logit cut
  uint64_t seed = 0;       // LinearSeeded weights
  int patch = 8;           // token -> patch upsample factor

  void validate() const;
};

struct SliceMask {
  Grid2D logits;    // at target dims
  MaskGrid binary;  // logits > threshold
};

// Turn guided tokens into a per-pixel mask.
//   LinearSeeded: seeded per-token linear map d -> patch^2, assembled into an
//     S x S logit map, bilinearly resized to target dims.
//   AttentionLabelTransfer: per-token logit = sum_k attn[t,k] * (2*mask_k - 1)
//     over all memory tokens (a convex combination of +-1), tiled per patch
//     and resized the same way.
SliceMask decode(const DecoderSpec& spec, const AttentionOutput& out, const UnifiedMemory& mem,
                 int target_h, int target_w);

}  // namespace fateseg
