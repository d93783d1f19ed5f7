#pragma once

#include <cstdint>
#include <string>

#include "fateseg/encoder.hpp"
#include "fateseg/grid.hpp"
#include "fateseg/memory.hpp"

namespace fateseg {

enum class AttentionInit { Identity, Gaussian };
enum class ResidualMode { Query, PaperLiteral };
enum class CaArgOrder { MemoryKv, PaperLiteral };

// Projection matrices for one attention module. Identity init scales Wq by
// `identity_scale` (sharper score gaps, same argmax); Gaussian init draws all
// three from seeded normals at 1/sqrt(d) scale.
struct AttentionWeights {
  int d = 0;
  int layers = 1;  // cross-attention repetitions inside memory_attention
  uint64_t seed = 0;
  Mat wq, wk, wv;  // d x d

  static AttentionWeights identity(int d, int layers = 1, double identity_scale = 1.0);
  static AttentionWeights gaussian(int d, uint64_t seed, int layers = 1);
};

struct MemoryAttentionOptions {
  ResidualMode residual = ResidualMode::Query;
  CaArgOrder arg_order = CaArgOrder::MemoryKv;
};

// Guided tokens plus the final cross-attention map (row-stochastic,
// query-tokens x key-tokens) the label-transfer decoder consumes.
struct AttentionOutput {
  Mat tokens;
  Mat attn;
  int gh = 0, gw = 0;      // token grid of the query side
  int src_h = 0, src_w = 0;  // original slice dims of the query side
};

// softmax(QK^T/sqrt(d))V + V with Q=vWq, K=vWk, V=vWv. Row-stable softmax.
Mat self_attention(const Mat& v, const AttentionWeights& w);

struct CrossAttentionResult {
  Mat tokens;
  Mat attn;  // Tq x Tk, captured before the residual
};

// softmax(Q1 K2^T / sqrt(d)) V2 + residual. ResidualMode::Query adds V1 =
// v1 Wv (always well-formed); PaperLiteral adds V2 and requires Tq == Tk.
CrossAttentionResult cross_attention(const Mat& v1, const Mat& v2, const AttentionWeights& w,
                                     ResidualMode residual = ResidualMode::Query);

// Self-attend the test embedding, then run `layers` cross-attention passes
// against the unified memory. Memory is the key/value side by default;
// CaArgOrder::PaperLiteral swaps it to the query side.
AttentionOutput memory_attention(const UnifiedMemory& mem, const EmbeddingMap& f,
                                 const AttentionWeights& w,
                                 const MemoryAttentionOptions& opts = {});

}  // namespace fateseg
