#include "fateseg/memory.hpp"

#include <algorithm>
#include <cmath>

#include "fateseg/error.hpp"
#include "fateseg/rng.hpp"

namespace fateseg {

float UnifiedMemory::mask_value(int t) const {
  for (const auto& b : blocks) {
    const int n = b.token_count();
    if (t < n) return b.mask_values[t];
    t -= n;
  }
  fail(Err::IndexOutOfRange, "memory token index out of range");
}

Mat UnifiedMemory::stacked_tokens() const {
  const int d = blocks.empty() ? 0 : blocks.front().d;
  Mat m(total_tokens, d);
  size_t off = 0;
  for (const auto& b : blocks) {
    std::copy(b.tokens.begin(), b.tokens.end(), m.v.begin() + off);
    off += b.tokens.size();
  }
  return m;
}

std::vector<float> downsample_mask(const MaskGrid& mask, int gh, int gw) {
  if (gh <= 0 || gw <= 0) fail(Err::ShapeMismatch, "grid dims must be positive");
  if (mask.h < gh || mask.w < gw)
    fail(Err::GridLargerThanMask, "grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                                      " larger than mask " + std::to_string(mask.h) + "x" +
                                      std::to_string(mask.w));
  std::vector<float> out(size_t(gh) * gw, 0.0f);
  const double cell_h = double(mask.h) / gh;
  const double cell_w = double(mask.w) / gw;
  for (int gr = 0; gr < gh; ++gr) {
    const double r0 = gr * cell_h, r1 = (gr + 1) * cell_h;
    for (int gc = 0; gc < gw; ++gc) {
      const double c0 = gc * cell_w, c1 = (gc + 1) * cell_w;
      double acc = 0.0;
      for (int r = int(std::floor(r0)); r < int(std::ceil(r1)); ++r) {
        const double rows = std::min(double(r + 1), r1) - std::max(double(r), r0);
        if (rows <= 0) continue;
        for (int c = int(std::floor(c0)); c < int(std::ceil(c1)); ++c) {
          const double cols = std::min(double(c + 1), c1) - std::max(double(c), c0);
          if (cols <= 0) continue;
          if (mask.at(r, c)) acc += rows * cols;
        }
      }
      out[size_t(gr) * gw + gc] = static_cast<float>(acc / (cell_h * cell_w));
    }
  }
  return out;
}

MemoryEncoder::MemoryEncoder(int d, uint64_t seed) : d_(d) {
  if (d <= 0) fail(Err::ShapeMismatch, "channel count must be positive");
  DetRng r1("memory_encoder/conv1", seed);
  w1_.resize(size_t(9) * d);
  for (float& x : w1_) x = r1.next_trunc_normal(0.02);
  DetRng r2("memory_encoder/conv2", seed);
  w2_.resize(size_t(9) * d * d);
  for (float& x : w2_) x = r2.next_trunc_normal(0.02);
}

MemoryEmbedding MemoryEncoder::encode(const MaskGrid& mask, const EmbeddingMap& f,
                                      MemoryKind kind) const {
  if (f.d != d_) fail(Err::ShapeMismatch, "embedding channels do not match memory encoder");
  if (mask.h != f.src_h || mask.w != f.src_w)
    fail(Err::ShapeMismatch, "mask dims " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                                 " do not match slice dims " + std::to_string(f.src_h) + "x" +
                                 std::to_string(f.src_w));

  const int gh = f.gh, gw = f.gw, d = d_;
  std::vector<float> occ = downsample_mask(mask, gh, gw);

  // conv1: 1 -> d, ReLU
  std::vector<float> h1(size_t(gh) * gw * d, 0.0f);
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c)
      for (int ch = 0; ch < d; ++ch) {
        double acc = 0.0;
        for (int kr = -1; kr <= 1; ++kr)
          for (int kc = -1; kc <= 1; ++kc) {
            const int rr = r + kr, cc = c + kc;
            if (rr < 0 || rr >= gh || cc < 0 || cc >= gw) continue;
            acc += double(occ[size_t(rr) * gw + cc]) *
                   w1_[size_t((kr + 1) * 3 + (kc + 1)) * d + ch];
          }
        h1[(size_t(r) * gw + c) * d + ch] = static_cast<float>(std::max(acc, 0.0));
      }

  // conv2: d -> d, added onto the slice embedding
  MemoryEmbedding out;
  out.gh = gh;
  out.gw = gw;
  out.d = d;
  out.kind = kind;
  out.mask_values = std::move(occ);
  out.tokens = f.tokens;
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c)
      for (int ch = 0; ch < d; ++ch) {
        double acc = 0.0;
        for (int kr = -1; kr <= 1; ++kr)
          for (int kc = -1; kc <= 1; ++kc) {
            const int rr = r + kr, cc = c + kc;
            if (rr < 0 || rr >= gh || cc < 0 || cc >= gw) continue;
            const float* src = &h1[(size_t(rr) * gw + cc) * d];
            const float* w = &w2_[size_t((kr + 1) * 3 + (kc + 1)) * d * d + size_t(ch) * d];
            for (int ci = 0; ci < d; ++ci) acc += double(src[ci]) * w[ci];
          }
        out.tokens[(size_t(r) * gw + c) * d + ch] += static_cast<float>(acc);
      }
  out.provenance = f.source_volume + "/" + std::to_string(f.source_slice);
  return out;
}

UnifiedMemory fuse_memories(std::vector<MemoryEmbedding> anatomical,
                            std::optional<MemoryEmbedding> volumetric, ZeroBlockMode mode) {
  if (anatomical.empty()) fail(Err::EmptyAnatomicalSet, "no anatomical memory blocks");
  const int gh = anatomical.front().gh, gw = anatomical.front().gw, d = anatomical.front().d;
  for (const auto& b : anatomical)
    if (b.gh != gh || b.gw != gw || b.d != d)
      fail(Err::HeterogeneousShapes, "anatomical blocks disagree on shape");
  UnifiedMemory um;
  um.blocks = std::move(anatomical);
  if (volumetric.has_value()) {
    if (volumetric->gh != gh || volumetric->gw != gw || volumetric->d != d)
      fail(Err::HeterogeneousShapes, "volumetric block shape mismatch");
    volumetric->kind = MemoryKind::Volumetric;
    um.blocks.push_back(std::move(*volumetric));
  } else if (mode == ZeroBlockMode::Materialize) {
    // the literal reading: a zero block that still occupies attention slots
    MemoryEmbedding zero;
    zero.gh = gh;
    zero.gw = gw;
    zero.d = d;
    zero.tokens.assign(size_t(gh) * gw * d, 0.0f);
    zero.mask_values.assign(size_t(gh) * gw, 0.0f);
    zero.kind = MemoryKind::Volumetric;
    zero.provenance = "zero";
    um.blocks.push_back(std::move(zero));
  }
  for (const auto& b : um.blocks) um.total_tokens += b.token_count();
  return um;
}

}  // namespace fateseg
