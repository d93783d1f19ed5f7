#include <doctest.h>

#include <cmath>

#include "fateseg/attention.hpp"
#include "fateseg/error.hpp"
#include "test_util.hpp"

using namespace fateseg;

namespace {

// ---------------------------------------------------------------------------
// Brute-force oracle: per-element triple loops in long double, no shared code
// with the implementation.
// ---------------------------------------------------------------------------

std::vector<std::vector<long double>> o_project(const Mat& in, const Mat& w) {
  std::vector<std::vector<long double>> out(in.rows, std::vector<long double>(w.cols, 0.0L));
  for (int r = 0; r < in.rows; ++r)
    for (int c = 0; c < w.cols; ++c)
      for (int k = 0; k < in.cols; ++k) out[r][c] += (long double)in.at(r, k) * w.at(k, c);
  return out;
}

struct OracleCa {
  std::vector<std::vector<long double>> tokens;
  std::vector<std::vector<long double>> attn;
};

OracleCa oracle_cross(const Mat& v1, const Mat& v2, const AttentionWeights& w, bool self_mode,
                      bool residual_v2) {
  auto q = o_project(v1, w.wq);
  auto k = o_project(v2, w.wk);
  auto val2 = o_project(v2, w.wv);
  const int tq = v1.rows, tk = v2.rows, d = w.d;
  OracleCa res;
  res.attn.assign(tq, std::vector<long double>(tk, 0.0L));
  for (int r = 0; r < tq; ++r) {
    std::vector<long double> s(tk, 0.0L);
    long double mx = -1e30L;
    for (int c = 0; c < tk; ++c) {
      for (int i = 0; i < d; ++i) s[c] += q[r][i] * k[c][i];
      s[c] /= std::sqrt((long double)d);
      mx = std::max(mx, s[c]);
    }
    long double sum = 0.0L;
    for (int c = 0; c < tk; ++c) {
      s[c] = std::exp(s[c] - mx);
      sum += s[c];
    }
    for (int c = 0; c < tk; ++c) res.attn[r][c] = s[c] / sum;
  }
  res.tokens.assign(tq, std::vector<long double>(d, 0.0L));
  for (int r = 0; r < tq; ++r)
    for (int i = 0; i < d; ++i) {
      for (int c = 0; c < tk; ++c) res.tokens[r][i] += res.attn[r][c] * val2[c][i];
      if (self_mode || residual_v2) {
        res.tokens[r][i] += val2[r][i];  // +V residual on the key/value side
      }
    }
  if (!self_mode && !residual_v2) {
    auto val1 = o_project(v1, w.wv);
    for (int r = 0; r < tq; ++r)
      for (int i = 0; i < d; ++i) res.tokens[r][i] += val1[r][i];
  }
  return res;
}

void check_close(const Mat& got, const std::vector<std::vector<long double>>& want, double tol) {
  REQUIRE(got.rows == int(want.size()));
  for (int r = 0; r < got.rows; ++r)
    for (int c = 0; c < got.cols; ++c) {
      const double w = double(want[r][c]);
      const double g = got.at(r, c);
      const double scale = std::max(1.0, std::abs(w));
      CHECK(std::abs(g - w) <= tol * scale);
    }
}

UnifiedMemory memory_of(const Mat& tokens, int gh, int gw, float mask_fill = 0.5f) {
  MemoryEmbedding b;
  b.gh = gh;
  b.gw = gw;
  b.d = tokens.cols;
  b.tokens = tokens.v;
  b.mask_values.assign(size_t(gh) * gw, mask_fill);
  return fuse_memories({b}, std::nullopt);
}

EmbeddingMap embedding_of(const Mat& tokens, int gh, int gw) {
  EmbeddingMap f;
  f.gh = gh;
  f.gw = gw;
  f.d = tokens.cols;
  f.tokens = tokens.v;
  f.src_h = gh * 4;
  f.src_w = gw * 4;
  return f;
}

}  // namespace

TEST_CASE("self_attention: single token closed form is 2V") {
  AttentionWeights w = AttentionWeights::gaussian(8, 42);
  Mat v = testutil::random_mat(1, 8, 1);
  Mat out = self_attention(v, w);
  // softmax over one logit is 1, so out = V + V
  auto vproj = o_project(v, w.wv);
  for (int c = 0; c < 8; ++c)
    CHECK(out.at(0, c) == doctest::Approx(double(2.0L * vproj[0][c])).epsilon(1e-6));
}

TEST_CASE("self_attention: identical input rows give identical output rows") {
  AttentionWeights w = AttentionWeights::gaussian(16, 7);
  Mat v(6, 16);
  Mat row = testutil::random_mat(1, 16, 3);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 16; ++c) v.at(r, c) = row.at(0, c);
  Mat out = self_attention(v, w);
  for (int r = 1; r < 6; ++r)
    for (int c = 0; c < 16; ++c) CHECK(out.at(r, c) == out.at(0, c));
}

TEST_CASE("self_attention matches the brute-force oracle across shapes and seeds") {
  for (int T : {1, 2, 4, 8, 16}) {
    for (int d : {4, 16, 32}) {
      for (uint32_t seed = 0; seed < 10; ++seed) {
        AttentionWeights w = AttentionWeights::gaussian(d, seed);
        Mat v = testutil::random_mat(T, d, seed * 131 + T * 17 + d);
        Mat out = self_attention(v, w);
        OracleCa oracle = oracle_cross(v, v, w, true, false);
        check_close(out, oracle.tokens, 1e-6);
      }
    }
  }
}

TEST_CASE("cross_attention: single key makes a degenerate all-ones attention column") {
  AttentionWeights w = AttentionWeights::gaussian(8, 3);
  Mat v1 = testutil::random_mat(5, 8, 1);
  Mat v2 = testutil::random_mat(1, 8, 2);
  CrossAttentionResult res = cross_attention(v1, v2, w);
  for (int r = 0; r < 5; ++r) CHECK(res.attn.at(r, 0) == doctest::Approx(1.0).epsilon(1e-9));
  // output = broadcast V2 row + V1 residual
  auto val2 = o_project(v2, w.wv);
  auto val1 = o_project(v1, w.wv);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 8; ++c)
      CHECK(res.tokens.at(r, c) ==
            doctest::Approx(double(val2[0][c] + val1[r][c])).epsilon(1e-5));
}

TEST_CASE("cross_attention: duplicated keys split attention mass equally") {
  AttentionWeights w = AttentionWeights::gaussian(8, 11);
  Mat v1 = testutil::random_mat(3, 8, 4);
  Mat one = testutil::random_mat(1, 8, 5);
  const int k = 6;
  Mat v2(k, 8);
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < 8; ++c) v2.at(r, c) = one.at(0, c);
  CrossAttentionResult res = cross_attention(v1, v2, w);
  // attn is stored in float32; exact equality holds only to float precision
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < k; ++c)
      CHECK(std::abs(res.attn.at(r, c) - 1.0 / k) < 1e-6);
  // value output equals the single-key case
  Mat single(1, 8);
  for (int c = 0; c < 8; ++c) single.at(0, c) = one.at(0, c);
  CrossAttentionResult ref = cross_attention(v1, single, w);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 8; ++c)
      CHECK(res.tokens.at(r, c) == doctest::Approx(ref.tokens.at(r, c)).epsilon(1e-6));
}

TEST_CASE("cross_attention matches the brute-force oracle (both residual modes)") {
  for (auto [tq, tk] : {std::pair{4, 12}, {1, 16}, {8, 8}, {16, 2}}) {
    for (int d : {4, 16, 32}) {
      for (uint32_t seed = 0; seed < 10; ++seed) {
        AttentionWeights w = AttentionWeights::gaussian(d, seed + 100);
        Mat v1 = testutil::random_mat(tq, d, seed * 7 + tq);
        Mat v2 = testutil::random_mat(tk, d, seed * 13 + tk);
        CrossAttentionResult res = cross_attention(v1, v2, w, ResidualMode::Query);
        OracleCa oracle = oracle_cross(v1, v2, w, false, false);
        check_close(res.tokens, oracle.tokens, 1e-6);
        check_close(res.attn, oracle.attn, 1e-6);
        if (tq == tk) {
          CrossAttentionResult lit = cross_attention(v1, v2, w, ResidualMode::PaperLiteral);
          OracleCa oracle_lit = oracle_cross(v1, v2, w, false, true);
          check_close(lit.tokens, oracle_lit.tokens, 1e-6);
        }
      }
    }
  }
}

TEST_CASE("cross_attention: paper-literal residual rejects rectangular shapes") {
  AttentionWeights w = AttentionWeights::gaussian(8, 0);
  Mat v1 = testutil::random_mat(3, 8, 1);
  Mat v2 = testutil::random_mat(5, 8, 2);
  CHECK_THROWS_AS(cross_attention(v1, v2, w, ResidualMode::PaperLiteral), Error);
}

TEST_CASE("attention rows are stochastic, also under extreme logit spread") {
  AttentionWeights w = AttentionWeights::identity(4);
  Mat v1(2, 4);
  v1.at(0, 0) = 100.0f;  // with identity weights: logits up to 1e4 / sqrt(d)
  v1.at(1, 1) = -100.0f;
  Mat v2(3, 4);
  v2.at(0, 0) = 100.0f;
  v2.at(1, 0) = -100.0f;
  v2.at(2, 2) = 1.0f;
  CrossAttentionResult res = cross_attention(v1, v2, w);
  for (int r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      CHECK(res.attn.at(r, c) >= 0.0f);
      CHECK(std::isfinite(res.attn.at(r, c)));
      sum += res.attn.at(r, c);
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
    for (int c = 0; c < 4; ++c) CHECK(std::isfinite(res.tokens.at(r, c)));
  }
}

TEST_CASE("memory_attention: L_ma=1 equals a manual SA-then-CA composition") {
  const int d = 16;
  AttentionWeights w = AttentionWeights::gaussian(d, 5);
  Mat f_tokens = testutil::random_mat(16, d, 21);
  Mat m_tokens = testutil::random_mat(32, d, 22);
  EmbeddingMap f = embedding_of(f_tokens, 4, 4);
  UnifiedMemory mem = memory_of(m_tokens, 4, 8);

  AttentionOutput out = memory_attention(mem, f, w);
  Mat sa = self_attention(f_tokens, w);
  CrossAttentionResult ca = cross_attention(sa, mem.stacked_tokens(), w);
  CHECK(out.tokens.v == ca.tokens.v);
  CHECK(out.attn.v == ca.attn.v);
}

TEST_CASE("memory_attention: twin memory under identity weights is diagonally dominant") {
  const int d = 16;
  AttentionWeights w = AttentionWeights::identity(d);
  Mat f_tokens = testutil::random_mat(12, d, 33);
  EmbeddingMap f = embedding_of(f_tokens, 3, 4);
  UnifiedMemory mem = memory_of(f_tokens, 3, 4);
  AttentionOutput out = memory_attention(mem, f, w);
  for (int t = 0; t < 12; ++t) {
    for (int k = 0; k < 12; ++k)
      if (k != t) CHECK(out.attn.at(t, t) > out.attn.at(t, k));
  }
}

TEST_CASE("memory_attention: scaling memory changes attn but rows still sum to 1") {
  const int d = 8;
  AttentionWeights w = AttentionWeights::gaussian(d, 9);
  Mat f_tokens = testutil::random_mat(8, d, 41);
  Mat m_tokens = testutil::random_mat(8, d, 42);
  EmbeddingMap f = embedding_of(f_tokens, 2, 4);
  AttentionOutput a = memory_attention(memory_of(m_tokens, 2, 4), f, w);
  Mat doubled = m_tokens;
  for (float& x : doubled.v) x *= 2.0f;
  AttentionOutput b = memory_attention(memory_of(doubled, 2, 4), f, w);
  CHECK(a.attn.v != b.attn.v);
  for (int r = 0; r < b.attn.rows; ++r) {
    double sum = 0.0;
    for (int c = 0; c < b.attn.cols; ++c) sum += b.attn.at(r, c);
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("memory_attention: permuting memory tokens permutes attn columns") {
  const int d = 8;
  AttentionWeights w = AttentionWeights::gaussian(d, 13);
  Mat f_tokens = testutil::random_mat(4, d, 51);
  Mat m_tokens = testutil::random_mat(6, d, 52);
  EmbeddingMap f = embedding_of(f_tokens, 2, 2);

  AttentionOutput base = memory_attention(memory_of(m_tokens, 2, 3), f, w);
  // reverse the memory tokens
  Mat rev(6, d);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < d; ++c) rev.at(r, c) = m_tokens.at(5 - r, c);
  AttentionOutput perm = memory_attention(memory_of(rev, 2, 3), f, w);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 6; ++c)
      CHECK(base.attn.at(r, c) == doctest::Approx(perm.attn.at(r, 5 - c)).epsilon(1e-7));
  // value outputs are unchanged by the permutation
  for (size_t i = 0; i < base.tokens.v.size(); ++i)
    CHECK(base.tokens.v[i] == doctest::Approx(perm.tokens.v[i]).epsilon(1e-5));
}

TEST_CASE("memory_attention: paper-literal arg order makes memory the query side") {
  const int d = 8;
  AttentionWeights w = AttentionWeights::gaussian(d, 3);
  Mat f_tokens = testutil::random_mat(4, d, 61);
  Mat m_tokens = testutil::random_mat(10, d, 62);
  EmbeddingMap f = embedding_of(f_tokens, 2, 2);
  MemoryAttentionOptions opts;
  opts.arg_order = CaArgOrder::PaperLiteral;
  AttentionOutput out = memory_attention(memory_of(m_tokens, 2, 5), f, w, opts);
  CHECK(out.tokens.rows == 10);  // memory token count, not the test grid
  CHECK(out.attn.rows == 10);
  CHECK(out.attn.cols == 4);
}

TEST_CASE("attention error paths") {
  AttentionWeights w = AttentionWeights::gaussian(8, 0);
  Mat bad = testutil::random_mat(2, 4, 1);
  CHECK_THROWS_AS(self_attention(bad, w), Error);
  Mat nan(1, 8);
  nan.at(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(self_attention(nan, w), Error);
}
