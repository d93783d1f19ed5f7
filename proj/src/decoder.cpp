#include "fateseg/decoder.hpp"

#include <cmath>

#include "fateseg/error.hpp"
#include "fateseg/rng.hpp"

namespace fateseg {

void DecoderSpec::validate() const {
  if (!std::isfinite(threshold)) fail(Err::ConfigParse, "decoder threshold must be finite");
  if (patch <= 0) fail(Err::ConfigParse, "decoder patch must be positive");
}

SliceMask decode(const DecoderSpec& spec, const AttentionOutput& out, const UnifiedMemory& mem,
                 int target_h, int target_w) {
  spec.validate();
  const int gh = out.gh, gw = out.gw;
  if (gh <= 0 || gw <= 0 || gh * gw != out.tokens.rows)
    fail(Err::ShapeMismatch, "attention output token grid unknown or inconsistent");
  if (target_h < gh || target_w < gw)
    fail(Err::ShapeMismatch, "target dims smaller than token grid");

  const int p = spec.patch;
  const int Sh = gh * p, Sw = gw * p;
  Grid2D smap(Sh, Sw);

  if (spec.kind == DecoderKind::AttentionLabelTransfer) {
    if (out.attn.rows != out.tokens.rows || out.attn.cols == 0)
      fail(Err::MissingAttn, "label transfer needs the cross-attention map");
    if (out.attn.cols != mem.total_tokens)
      fail(Err::ShapeMismatch, "attention columns do not match memory tokens");
    // per-token convex combination of +-1 mask votes, tiled over its patch
    for (int t = 0; t < out.tokens.rows; ++t) {
      double logit = 0.0;
      int k = 0;
      for (const auto& b : mem.blocks)
        for (int i = 0; i < b.token_count(); ++i, ++k)
          logit += double(out.attn.at(t, k)) * (2.0 * b.mask_values[i] - 1.0);
      const int gr = t / gw, gc = t % gw;
      for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c)
          smap.at(gr * p + r, gc * p + c) = static_cast<float>(logit);
    }
  } else {
    // seeded linear head: token channels -> patch^2 logits
    const int d = out.tokens.cols;
    DetRng rng("decoder/linear", spec.seed);
    std::vector<float> w(size_t(d) * p * p);
    for (float& x : w) x = rng.next_trunc_normal(0.02);
    for (int t = 0; t < out.tokens.rows; ++t) {
      const int gr = t / gw, gc = t % gw;
      for (int pr = 0; pr < p; ++pr)
        for (int pc = 0; pc < p; ++pc) {
          double acc = 0.0;
          for (int i = 0; i < d; ++i)
            acc += double(out.tokens.at(t, i)) * w[size_t(i) * p * p + pr * p + pc];
          smap.at(gr * p + pr, gc * p + pc) = static_cast<float>(acc);
        }
    }
  }

  SliceMask sm;
  if (smap.h == target_h && smap.w == target_w) {
    sm.logits = std::move(smap);
  } else if (target_h == target_w) {
    sm.logits = resize_slice(smap, target_h);
  } else {
    // non-square target: bilinear in two passes is avoided; do a direct resample
    Grid2D outg(target_h, target_w);
    const double sy = double(smap.h) / target_h;
    const double sx = double(smap.w) / target_w;
    for (int r = 0; r < target_h; ++r) {
      double fy = (r + 0.5) * sy - 0.5;
      fy = std::min(std::max(fy, 0.0), double(smap.h - 1));
      const int y0 = int(fy), y1 = std::min(y0 + 1, smap.h - 1);
      const double wy = fy - y0;
      for (int c = 0; c < target_w; ++c) {
        double fx = (c + 0.5) * sx - 0.5;
        fx = std::min(std::max(fx, 0.0), double(smap.w - 1));
        const int x0 = int(fx), x1 = std::min(x0 + 1, smap.w - 1);
        const double wx = fx - x0;
        const double top = smap.at(y0, x0) * (1 - wx) + smap.at(y0, x1) * wx;
        const double bot = smap.at(y1, x0) * (1 - wx) + smap.at(y1, x1) * wx;
        outg.at(r, c) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
    sm.logits = std::move(outg);
  }

  sm.binary = MaskGrid(sm.logits.h, sm.logits.w);
  for (size_t i = 0; i < sm.logits.v.size(); ++i)
    sm.binary.v[i] = sm.logits.v[i] > spec.threshold ? 1 : 0;
  return sm;
}

}  // namespace fateseg
