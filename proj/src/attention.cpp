#include "fateseg/attention.hpp"

#include <algorithm>
#include <cmath>

#include "fateseg/error.hpp"
#include "fateseg/rng.hpp"

namespace fateseg {

AttentionWeights AttentionWeights::identity(int d, int layers, double identity_scale) {
  AttentionWeights w;
  w.d = d;
  w.layers = layers;
  w.wq = Mat(d, d);
  w.wk = Mat(d, d);
  w.wv = Mat(d, d);
  for (int i = 0; i < d; ++i) {
    w.wq.at(i, i) = static_cast<float>(identity_scale);
    w.wk.at(i, i) = 1.0f;
    w.wv.at(i, i) = 1.0f;
  }
  return w;
}

AttentionWeights AttentionWeights::gaussian(int d, uint64_t seed, int layers) {
  AttentionWeights w;
  w.d = d;
  w.layers = layers;
  w.seed = seed;
  const double scale = 1.0 / std::sqrt(double(d));
  auto fill = [&](Mat& m, const char* name) {
    DetRng rng(std::string("attention/") + name, seed);
    m = Mat(d, d);
    for (float& x : m.v) x = static_cast<float>(rng.next_normal() * scale);
  };
  fill(w.wq, "wq");
  fill(w.wk, "wk");
  fill(w.wv, "wv");
  return w;
}

namespace {

void check_finite(const Mat& m, const char* what) {
  for (float x : m.v)
    if (!std::isfinite(x)) fail(Err::NonFiniteInput, std::string(what) + " contains NaN/Inf");
}

// out = in @ w, double accumulators, fixed summation order.
Mat project(const Mat& in, const Mat& w) {
  Mat out(in.rows, w.cols);
  for (int r = 0; r < in.rows; ++r)
    for (int c = 0; c < w.cols; ++c) {
      double acc = 0.0;
      for (int k = 0; k < in.cols; ++k) acc += double(in.at(r, k)) * w.at(k, c);
      out.at(r, c) = static_cast<float>(acc);
    }
  return out;
}

// rows of q @ k^T / sqrt(d), softmaxed with row-max subtraction.
Mat scaled_softmax_scores(const Mat& q, const Mat& k, int d) {
  Mat attn(q.rows, k.rows);
  const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
  std::vector<double> row(size_t(k.rows));
  for (int r = 0; r < q.rows; ++r) {
    double mx = -1e300;
    for (int c = 0; c < k.rows; ++c) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += double(q.at(r, i)) * k.at(c, i);
      row[c] = acc * inv_sqrt_d;
      mx = std::max(mx, row[c]);
    }
    double sum = 0.0;
    for (int c = 0; c < k.rows; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (int c = 0; c < k.rows; ++c) attn.at(r, c) = static_cast<float>(row[c] / sum);
  }
  return attn;
}

// attn @ v, double accumulators.
Mat attend(const Mat& attn, const Mat& v) {
  Mat out(attn.rows, v.cols);
  for (int r = 0; r < attn.rows; ++r)
    for (int c = 0; c < v.cols; ++c) {
      double acc = 0.0;
      for (int k = 0; k < attn.cols; ++k) acc += double(attn.at(r, k)) * v.at(k, c);
      out.at(r, c) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace

Mat self_attention(const Mat& v, const AttentionWeights& w) {
  if (v.cols != w.d) fail(Err::ShapeMismatch, "token channels do not match attention weights");
  if (v.rows < 1) fail(Err::ShapeMismatch, "empty token stack");
  check_finite(v, "self_attention input");
  Mat q = project(v, w.wq);
  Mat k = project(v, w.wk);
  Mat val = project(v, w.wv);
  Mat attn = scaled_softmax_scores(q, k, w.d);
  Mat out = attend(attn, val);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += val.v[i];
  return out;
}

CrossAttentionResult cross_attention(const Mat& v1, const Mat& v2, const AttentionWeights& w,
                                     ResidualMode residual) {
  if (v1.cols != w.d || v2.cols != w.d)
    fail(Err::ShapeMismatch, "token channels do not match attention weights");
  if (v2.rows < 1) fail(Err::ShapeMismatch, "empty key/value stack");
  check_finite(v1, "cross_attention query");
  check_finite(v2, "cross_attention memory");
  if (residual == ResidualMode::PaperLiteral && v1.rows != v2.rows)
    fail(Err::ResidualModeInvalid,
         "paper_literal residual needs matching token counts (" + std::to_string(v1.rows) +
             " vs " + std::to_string(v2.rows) + ")");
  Mat q1 = project(v1, w.wq);
  Mat k2 = project(v2, w.wk);
  Mat val2 = project(v2, w.wv);
  CrossAttentionResult res;
  res.attn = scaled_softmax_scores(q1, k2, w.d);
  res.tokens = attend(res.attn, val2);
  if (residual == ResidualMode::PaperLiteral) {
    for (size_t i = 0; i < res.tokens.v.size(); ++i) res.tokens.v[i] += val2.v[i];
  } else {
    Mat val1 = project(v1, w.wv);
    for (size_t i = 0; i < res.tokens.v.size(); ++i) res.tokens.v[i] += val1.v[i];
  }
  return res;
}

AttentionOutput memory_attention(const UnifiedMemory& mem, const EmbeddingMap& f,
                                 const AttentionWeights& w, const MemoryAttentionOptions& opts) {
  if (f.d != w.d) fail(Err::ShapeMismatch, "embedding channels do not match attention weights");
  if (mem.blocks.empty()) fail(Err::EmptyAnatomicalSet, "memory attention with empty memory");

  Mat x(f.token_count(), f.d);
  x.v = f.tokens;
  x = self_attention(x, w);

  Mat mem_tokens = mem.stacked_tokens();
  AttentionOutput out;
  const int layers = std::max(1, w.layers);
  for (int l = 0; l < layers; ++l) {
    CrossAttentionResult ca;
    if (opts.arg_order == CaArgOrder::MemoryKv) {
      ca = cross_attention(x, mem_tokens, w, opts.residual);
    } else {
      // literal Eq. order: memory queries the self-attended test embedding
      ca = cross_attention(mem_tokens, x, w, opts.residual);
    }
    x = std::move(ca.tokens);
    out.attn = std::move(ca.attn);
  }
  out.tokens = std::move(x);
  out.gh = f.gh;
  out.gw = f.gw;
  out.src_h = f.src_h;
  out.src_w = f.src_w;
  return out;
}

}  // namespace fateseg
